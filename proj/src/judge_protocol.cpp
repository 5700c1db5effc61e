#include "prefkit/judge_protocol.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace prefkit {

namespace {

constexpr std::string_view kScoringTemplate =
#include "scoring_template.inc"
    ;

constexpr std::string_view kOutputContract = R"(

### Output Format:
First write your own reference answer and your analysis. Then end the reply with exactly one fenced block tagged json, holding one entry per response in the order presented:
```json
{"reference_answer": "<your reference answer>", "responses": [{"index": 1, "weights": [<6 numbers summing to 1.0>], "scores": [<6 integers from 0 to 10>], "overall": <weighted average>}]}
```
The weights and scores arrays follow the criteria order: Accuracy, Helpfulness, Completeness, Language Quality, Creativity, Ethics.
)";

constexpr std::string_view kPairwiseTemplate = R"(You are comparing two AI assistants' responses to the same user's prompt, based on the provided image(s). Judge which response is better in accuracy, helpfulness, completeness, language quality and ethics.
The order in which the responses are presented is not related to their quality. A longer response is not necessarily better.
### User Prompt:
{question}

[Response A]
{a}
[End of Response A]

[Response B]
{b}
[End of Response B]

### Output Format:
Reply with exactly one token: A if Response A is better, B if Response B is better.)";

constexpr std::string_view kAugmentTemplate = R"({question}

Reference answer: {reference}

Write a high-quality response to the prompt above. It must be consistent with the reference answer.)";

constexpr std::string_view kQuestionHeader = "### User Prompt:\n";
constexpr std::string_view kReferenceHeader = "\n### Standard Human-Generated Answer:\n";
constexpr std::string_view kAugmentMarker = "\n\nReference answer: ";
constexpr std::string_view kAugmentTail = "\n\nWrite a high-quality response";

// Single-pass placeholder substitution; substituted text is never rescanned.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string_view, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) break;
    const auto key = tmpl.substr(open + 1, close - open - 1);
    if (auto it = values.find(key); it != values.end()) {
      out.append(tmpl.substr(pos, open - pos));
      out.append(it->second);
      pos = close + 1;
    } else {
      out.append(tmpl.substr(pos, open - pos + 1));
      pos = open + 1;
    }
  }
  out.append(tmpl.substr(pos));
  return out;
}

std::string response_open(std::size_t i) { return "[Response " + std::to_string(i) + "]\n"; }
std::string response_close(std::size_t i) { return "\n[End of Response " + std::to_string(i) + "]"; }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

int as_score(const nlohmann::json& v) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 1e6) return static_cast<int>(d);
  }
  throw JudgeReplyError("criterion score is not an integer: " + v.dump());
}

}  // namespace

std::string render_scoring_prompt(std::string_view question, std::string_view reference,
                                  std::span<const std::string> responses) {
  std::string answers;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (i > 0) answers += "\n\n";
    answers += response_open(i + 1);
    answers += responses[i];
    answers += response_close(i + 1);
  }
  return fill(kScoringTemplate, {{"question", question}, {"gt", reference}, {"evaluated_answers", answers}}) +
         std::string(kOutputContract);
}

std::string render_pairwise_prompt(std::string_view question, std::string_view response_a,
                                   std::string_view response_b) {
  return fill(kPairwiseTemplate, {{"question", question}, {"a", response_a}, {"b", response_b}});
}

std::string render_augment_prompt(std::string_view question, std::string_view reference) {
  return fill(kAugmentTemplate, {{"question", question}, {"reference", reference}});
}

std::vector<double> normalize_weights(std::span<const double> weights, double tolerance) {
  long double sum = 0.0L;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw JudgeReplyError("weights must be finite and non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0L) > tolerance) {
    throw JudgeReplyError("weights sum to " + std::to_string(static_cast<double>(sum)) + ", expected 1.0");
  }
  std::vector<double> out(weights.begin(), weights.end());
  if (std::abs(sum - 1.0L) > 1e-15L) {
    for (auto& w : out) w = static_cast<double>(w / sum);
  }
  return out;
}

double weighted_overall(std::span<const double> weights, std::span<const int> scores) {
  long double total = 0.0L;
  const auto n = std::min(weights.size(), scores.size());
  for (std::size_t m = 0; m < n; ++m) total += static_cast<long double>(weights[m]) * scores[m];
  if (total < 0.0L) total = 0.0L;
  if (total > 10.0L) total = 10.0L;
  return static_cast<double>(total);
}

JudgeReply parse_judge_reply(std::string_view reply, std::size_t expected_responses, std::size_t criteria) {
  const auto fence = reply.rfind("```json");
  if (fence == std::string_view::npos) throw JudgeReplyError("reply has no ```json block");
  const auto body_start = fence + 7;
  const auto fence_end = reply.find("```", body_start);
  if (fence_end == std::string_view::npos) throw JudgeReplyError("unterminated ```json block");
  nlohmann::json block;
  try {
    block = nlohmann::json::parse(reply.substr(body_start, fence_end - body_start));
  } catch (const nlohmann::json::parse_error& e) {
    throw JudgeReplyError(std::string("json block does not parse: ") + e.what());
  }
  if (!block.is_object() || !block.contains("responses") || !block["responses"].is_array()) {
    throw JudgeReplyError("json block lacks a responses array");
  }
  JudgeReply out;
  if (auto it = block.find("reference_answer"); it != block.end() && it->is_string()) out.reference_answer = *it;
  const auto& items = block["responses"];
  if (items.size() != expected_responses) {
    throw JudgeReplyError("expected " + std::to_string(expected_responses) + " scored responses, got " +
                          std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    if (!item.is_object()) throw JudgeReplyError("response entry is not an object");
    if (auto idx = item.find("index"); idx != item.end() && (!idx->is_number() || idx->get<double>() != i + 1.0)) {
      throw JudgeReplyError("response entries out of order at position " + std::to_string(i + 1));
    }
    if (!item.contains("weights") || !item["weights"].is_array() || !item.contains("scores") ||
        !item["scores"].is_array()) {
      throw JudgeReplyError("response entry lacks weights or scores");
    }
    ScoredResponse scored;
    for (const auto& w : item["weights"]) {
      if (!w.is_number()) throw JudgeReplyError("weight is not a number");
      scored.weights.push_back(w.get<double>());
    }
    for (const auto& s : item["scores"]) {
      const int v = as_score(s);
      if (v < 0 || v > 10) throw JudgeReplyError("criterion score outside 0..10");
      scored.scores.push_back(v);
    }
    if (scored.weights.size() != criteria || scored.scores.size() != criteria) {
      throw JudgeReplyError("expected " + std::to_string(criteria) + " weights and scores");
    }
    scored.weights = normalize_weights(scored.weights);
    if (auto ov = item.find("overall"); ov != item.end() && ov->is_number()) scored.reported_overall = ov->get<double>();
    out.responses.push_back(std::move(scored));
  }
  return out;
}

std::optional<PairwiseChoice> parse_pairwise_reply(std::string_view reply) {
  const auto t = trim(reply);
  if (t == "A") return PairwiseChoice::first;
  if (t == "B") return PairwiseChoice::second;
  return std::nullopt;
}

std::optional<RenderedScoringPrompt> parse_scoring_prompt(std::string_view prompt) {
  const auto q = prompt.find(kQuestionHeader);
  if (q == std::string_view::npos) return std::nullopt;
  const auto q_start = q + kQuestionHeader.size();
  const auto r = prompt.find(kReferenceHeader, q_start);
  if (r == std::string_view::npos) return std::nullopt;
  RenderedScoringPrompt out;
  out.question = prompt.substr(q_start, r - q_start);
  const auto ref_start = r + kReferenceHeader.size();
  const auto first = prompt.find("\n\n" + response_open(1), ref_start);
  if (first == std::string_view::npos) return std::nullopt;
  out.reference = prompt.substr(ref_start, first - ref_start);
  std::size_t pos = first + 2;
  for (std::size_t i = 1;; ++i) {
    const auto open = response_open(i);
    if (prompt.substr(pos, open.size()) != open) break;
    const auto text_start = pos + open.size();
    const auto close = prompt.find(response_close(i), text_start);
    if (close == std::string_view::npos) return std::nullopt;
    out.responses.emplace_back(prompt.substr(text_start, close - text_start));
    pos = close + response_close(i).size();
    if (prompt.substr(pos, 2) == "\n\n") pos += 2;
  }
  if (out.responses.empty()) return std::nullopt;
  return out;
}

std::optional<RenderedPairwisePrompt> parse_pairwise_prompt(std::string_view prompt) {
  const auto q = prompt.find(kQuestionHeader);
  const auto a = prompt.find("\n\n[Response A]\n");
  const auto a_end = prompt.find("\n[End of Response A]\n\n[Response B]\n");
  const auto b_end = prompt.rfind("\n[End of Response B]");
  if (q == std::string_view::npos || a == std::string_view::npos || a_end == std::string_view::npos ||
      b_end == std::string_view::npos || !(q < a && a < a_end && a_end < b_end)) {
    return std::nullopt;
  }
  RenderedPairwisePrompt out;
  const auto q_start = q + kQuestionHeader.size();
  out.question = prompt.substr(q_start, a - q_start);
  const auto a_start = a + std::string_view("\n\n[Response A]\n").size();
  out.response_a = prompt.substr(a_start, a_end - a_start);
  const auto b_start = a_end + std::string_view("\n[End of Response A]\n\n[Response B]\n").size();
  out.response_b = prompt.substr(b_start, b_end - b_start);
  return out;
}

std::optional<std::string> parse_augment_prompt(std::string_view prompt) {
  const auto m = prompt.find(kAugmentMarker);
  if (m == std::string_view::npos) return std::nullopt;
  const auto start = m + kAugmentMarker.size();
  const auto end = prompt.find(kAugmentTail, start);
  if (end == std::string_view::npos) return std::nullopt;
  return std::string(prompt.substr(start, end - start));
}

std::string format_judge_block(const JudgeReply& reply) {
  nlohmann::json block;
  block["reference_answer"] = reply.reference_answer;
  block["responses"] = nlohmann::json::array();
  for (std::size_t i = 0; i < reply.responses.size(); ++i) {
    const auto& r = reply.responses[i];
    nlohmann::json item{{"index", i + 1}, {"weights", r.weights}, {"scores", r.scores}};
    if (r.reported_overall) item["overall"] = *r.reported_overall;
    block["responses"].push_back(std::move(item));
  }
  return "```json\n" + block.dump() + "\n```";
}

}  // namespace prefkit
