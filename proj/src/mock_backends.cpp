#include "prefkit/mock_backends.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "prefkit/dataset.hpp"
#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/rng.hpp"

namespace prefkit {

using nlohmann::json;

namespace {

constexpr std::string_view kFiller[] = {"maybe",   "image", "shows", "something", "unclear", "perhaps",
                                        "object",  "scene", "color", "probably",  "looks",   "like",
                                        "general", "thing", "area",  "various"};

struct ChatInput {
  std::string text;
  std::vector<std::string> image_digests;
  std::string model;
  std::int64_t seed = 0;
  int n = 1;
};

ChatInput read_chat(const json& body) {
  ChatInput in;
  try {
    in.model = body.value("model", std::string{});
    in.seed = body.value("seed", std::int64_t{0});
    in.n = body.value("n", 1);
    for (const auto& msg : body.at("messages")) {
      for (const auto& part : msg.at("content")) {
        const auto type = part.at("type").get<std::string>();
        if (type == "text") {
          in.text += part.at("text").get<std::string>();
        } else if (type == "image") {
          in.image_digests.push_back(sha256_hex(part.at("data").get<std::string>()));
        }
      }
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed chat request: ") + e.what(), body.dump());
  }
  return in;
}

std::string chat_reply(const std::vector<std::string>& texts) {
  json choices = json::array();
  for (const auto& t : texts) choices.push_back({{"text", t}});
  return json{{"choices", std::move(choices)}}.dump();
}

std::map<std::string, std::string> parse_query(std::string_view url, std::string& persona) {
  std::map<std::string, std::string> params;
  const std::string rest(url.substr(std::string_view("mock://").size()));
  const auto q = rest.find('?');
  persona = rest.substr(0, q);
  if (q == std::string::npos) return params;
  std::istringstream query(rest.substr(q + 1));
  std::string item;
  while (std::getline(query, item, '&')) {
    const auto eq = item.find('=');
    if (eq != std::string::npos) params.emplace(item.substr(0, eq), item.substr(eq + 1));
  }
  return params;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double token_jaccard(std::string_view a, std::string_view b) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

Scorer overlap_scorer() {
  return [](std::string_view, std::string_view reference, std::string_view response) {
    return 10.0 * token_jaccard(response, reference);
  };
}

double planted_quality(std::uint64_t salt, std::string_view question, std::string_view response) {
  Rng rng(derive_seed(salt, normalize_prompt_text(question), response));
  return 10.0 * rng.uniform01();
}

Scorer planted_scorer(std::uint64_t salt) {
  return [salt](std::string_view question, std::string_view, std::string_view response) {
    return planted_quality(salt, question, response);
  };
}

std::vector<int> spread_scores(double target, std::size_t criteria) {
  const auto n = static_cast<long>(criteria);
  const long total = std::clamp(std::lround(std::clamp(target, 0.0, 10.0) * static_cast<double>(n)), 0L, 10L * n);
  std::vector<int> scores(criteria, static_cast<int>(total / n));
  for (long m = 0; m < total % n; ++m) ++scores[static_cast<std::size_t>(m)];
  return scores;
}

std::string MockGenerator::post(const std::string& path, const json& body, const std::string&) {
  if (path != kChatPath) throw ProtocolError("mock generator serves " + std::string(kChatPath) + " only", "");
  const auto in = read_chat(body);
  if (in.n < 1) throw ProtocolError("n must be >= 1", body.dump());
  std::vector<std::string> texts;
  if (auto reference = parse_augment_prompt(in.text)) {
    texts.assign(static_cast<std::size_t>(in.n), *reference);
    return chat_reply(texts);
  }
  std::string image_key;
  for (const auto& d : in.image_digests) image_key += d;
  const auto base = derive_seed(static_cast<std::uint64_t>(in.seed), in.model, in.text, image_key);
  const auto vocab = tokenize(in.text);
  for (int i = 0; i < in.n; ++i) {
    Rng rng(derive_seed(base, std::to_string(i)));
    const auto length = 3 + rng.uniform_index(6);
    const double p_topical = rng.uniform(0.1, 0.95);
    std::string text;
    for (std::uint64_t w = 0; w < length; ++w) {
      if (w > 0) text += ' ';
      if (!vocab.empty() && rng.bernoulli(p_topical)) {
        text += vocab[rng.uniform_index(vocab.size())];
      } else {
        text += kFiller[rng.uniform_index(std::size(kFiller))];
      }
    }
    texts.push_back(std::move(text));
  }
  return chat_reply(texts);
}

MockJudge::MockJudge(Scorer scorer, MockJudgeOptions options) : scorer_(std::move(scorer)), options_(options) {}

double MockJudge::target_score(std::string_view question, std::string_view reference, std::string_view response,
                               std::size_t position, std::int64_t request_seed) const {
  double s = scorer_(question, reference.empty() ? question : reference, response);
  if (position == 0) s += options_.first_listed_bias;
  if (options_.noise_sigma > 0.0) {
    Rng rng(derive_seed(options_.noise_seed, std::to_string(request_seed), question, response));
    s += options_.noise_sigma * rng.normal();
  }
  return std::clamp(s, 0.0, 10.0);
}

std::string MockJudge::post(const std::string& path, const json& body, const std::string&) {
  if (path != kChatPath) throw ProtocolError("mock judge serves " + std::string(kChatPath) + " only", "");
  const auto in = read_chat(body);
  if (auto pair = parse_pairwise_prompt(in.text)) {
    const double a = target_score(pair->question, {}, pair->response_a, 0, in.seed);
    const double b = target_score(pair->question, {}, pair->response_b, 1, in.seed);
    return chat_reply({a >= b ? "A" : "B"});
  }
  auto scoring = parse_scoring_prompt(in.text);
  if (!scoring) return chat_reply({"I am unable to evaluate this request."});
  JudgeReply reply;
  reply.reference_answer = scoring->reference;
  const double w = 1.0 / static_cast<double>(kDefaultCriteria);
  std::string analysis = "Reference answer: " + scoring->reference + "\n";
  for (std::size_t i = 0; i < scoring->responses.size(); ++i) {
    const double t = target_score(scoring->question, scoring->reference, scoring->responses[i], i, in.seed);
    ScoredResponse r;
    r.weights.assign(kDefaultCriteria, round_significant9(w));
    r.scores = spread_scores(t);
    double sum = 0.0;
    for (int s : r.scores) sum += s;
    r.reported_overall = std::round(sum / static_cast<double>(kDefaultCriteria) * 100.0) / 100.0;
    analysis += "Response " + std::to_string(i + 1) + ": compared against the reference.\n";
    reply.responses.push_back(std::move(r));
  }
  return chat_reply({analysis + format_judge_block(reply)});
}

MockReward::MockReward(RewardFunction fn) : fn_(std::move(fn)) {}

std::string MockReward::post(const std::string& path, const json& body, const std::string&) {
  if (path != kScorePath) throw ProtocolError("mock reward serves " + std::string(kScorePath) + " only", "");
  if (!body.contains("response_text") || !body["response_text"].is_string() || !body.contains("prompt_text")) {
    throw ProtocolError("missing prompt_text or response_text", body.dump());
  }
  const double v = fn_(body["prompt_text"].get<std::string>(), body["response_text"].get<std::string>());
  json reply;
  if (std::isfinite(v)) {
    reply["reward"] = v;
  } else {
    reply["reward"] = nullptr;
  }
  return reply.dump();
}

RewardFunction overlap_reward(std::map<std::string, std::string> references_by_prompt) {
  return [refs = std::move(references_by_prompt)](std::string_view prompt, std::string_view response) {
    auto it = refs.find(std::string(prompt));
    return token_jaccard(response, it == refs.end() ? prompt : std::string_view(it->second));
  };
}

RewardFunction planted_reward(std::uint64_t salt) {
  return [salt](std::string_view prompt, std::string_view response) { return planted_quality(salt, prompt, response); };
}

std::shared_ptr<Backend> make_mock_backend(const EndpointSpec& spec) {
  std::string persona;
  const auto params = parse_query(spec.base_url, persona);
  auto get = [&params](const std::string& key, const std::string& fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  };
  const auto salt = std::stoull(get("salt", "0"));
  const auto scorer_name = get("scorer", "overlap");
  if (scorer_name != "overlap" && scorer_name != "planted") {
    throw ValidationError("unknown mock scorer '" + scorer_name + "'");
  }
  if (persona == "generator") return std::make_shared<MockGenerator>();
  if (persona == "judge") {
    MockJudgeOptions options;
    options.first_listed_bias = std::stod(get("bias", "0"));
    options.noise_sigma = std::stod(get("noise", "0"));
    options.noise_seed = std::stoull(get("noise_seed", "0"));
    return std::make_shared<MockJudge>(scorer_name == "planted" ? planted_scorer(salt) : overlap_scorer(), options);
  }
  if (persona == "reward") {
    if (scorer_name == "planted") return std::make_shared<MockReward>(planted_reward(salt));
    std::map<std::string, std::string> refs;
    if (const auto path = get("references", ""); !path.empty()) {
      for (const auto& p : read_jsonl<PromptRecord>(path)) refs.emplace(p.text, p.reference_answer);
    }
    return std::make_shared<MockReward>(overlap_reward(std::move(refs)));
  }
  throw ValidationError("unknown mock persona '" + persona + "' in " + spec.base_url);
}

}  // namespace prefkit
