#include "prefkit/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/mock_backends.hpp"

namespace prefkit {

using nlohmann::json;

void to_json(json& j, const EndpointSpec& s) {
  j = json{{"id", s.id},
           {"kind", s.kind},
           {"base_url", s.base_url},
           {"auth_env_var", s.auth_env_var},
           {"max_concurrency", s.max_concurrency},
           {"max_retries", s.max_retries},
           {"timeout_ms", s.timeout.count()}};
}

void from_json(const json& j, EndpointSpec& s) {
  j.at("id").get_to(s.id);
  j.at("kind").get_to(s.kind);
  j.at("base_url").get_to(s.base_url);
  s.auth_env_var = j.value("auth_env_var", std::string{});
  s.max_concurrency = j.value("max_concurrency", 4);
  s.max_retries = j.value("max_retries", 2);
  s.timeout = std::chrono::milliseconds(j.value("timeout_ms", 60000));
}

void validate(const EndpointSpec& s) {
  if (s.id.empty()) throw ValidationError("endpoint id is empty");
  if (s.max_concurrency < 1) throw ValidationError("endpoint '" + s.id + "': max_concurrency must be >= 1");
  if (s.max_retries < 0) throw ValidationError("endpoint '" + s.id + "': max_retries must be >= 0");
  if (s.base_url.empty()) throw ValidationError("endpoint '" + s.id + "': base_url is empty");
}

std::vector<EndpointSpec> load_endpoint_specs(const json& doc) {
  const json* list = &doc;
  if (doc.is_object() && doc.contains("endpoints")) list = &doc["endpoints"];
  std::vector<EndpointSpec> out;
  if (list->is_array()) {
    for (const auto& item : *list) out.push_back(item.get<EndpointSpec>());
  } else if (list->is_object()) {
    out.push_back(list->get<EndpointSpec>());
  } else {
    throw ValidationError("endpoint config must be an object or array");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    validate(out[i]);
    for (std::size_t k = 0; k < i; ++k) {
      if (out[k].id == out[i].id) throw ValidationError("duplicate endpoint id '" + out[i].id + "'");
    }
  }
  return out;
}

HttpBackend::HttpBackend(std::string base_url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  const auto scheme = base_url.find("://");
  const auto slash = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = base_url.substr(0, slash);
  if (slash != std::string::npos) prefix_ = base_url.substr(slash);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

std::string HttpBackend::post(const std::string& path, const json& body, const std::string& credential) {
  httplib::Client client(host_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);
  auto res = client.Post(prefix_ + path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("transport: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError("HTTP " + std::to_string(res->status), res->body);
  }
  return res->body;
}

std::shared_ptr<Backend> make_backend(const EndpointSpec& spec) {
  if (spec.base_url.starts_with("mock://")) return make_mock_backend(spec);
  if (spec.base_url.starts_with("https://")) {
    throw ValidationError("endpoint '" + spec.id + "': https is not supported; put a TLS-terminating proxy in front");
  }
  if (spec.base_url.starts_with("http://")) {
    return std::make_shared<HttpBackend>(spec.base_url, spec.timeout);
  }
  throw ValidationError("endpoint '" + spec.id + "': unsupported base_url '" + spec.base_url + "'");
}

json chat_request_body(std::string_view model, std::string_view prompt_text, std::span<const Bytes> images,
                       double temperature, double top_p, int n, std::int64_t seed) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", prompt_text}});
  for (const auto& img : images) content.push_back({{"type", "image"}, {"data", base64_encode(img)}});
  return json{{"model", model},
              {"messages", json::array({json{{"role", "user"}, {"content", std::move(content)}}})},
              {"temperature", temperature},
              {"top_p", top_p},
              {"n", n},
              {"seed", seed}};
}

std::vector<std::string> parse_chat_reply(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("reply is not JSON: ") + e.what(), body);
  }
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array()) {
    throw ProtocolError("reply lacks a choices array", body);
  }
  std::vector<std::string> out;
  for (const auto& c : doc["choices"]) {
    if (!c.is_object() || !c.contains("text") || !c["text"].is_string()) {
      throw ProtocolError("choice lacks a text field", body);
    }
    out.push_back(c["text"].get<std::string>());
  }
  return out;
}

json score_request_body(std::string_view prompt_text, std::span<const Bytes> images, std::string_view response_text) {
  json encoded = json::array();
  for (const auto& img : images) encoded.push_back(base64_encode(img));
  return json{{"prompt_text", prompt_text}, {"images", std::move(encoded)}, {"response_text", response_text}};
}

double parse_score_reply(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("reply is not JSON: ") + e.what(), body);
  }
  if (!doc.is_object() || !doc.contains("reward")) throw ProtocolError("reply lacks a reward field", body);
  const auto& r = doc["reward"];
  if (!r.is_number()) throw ProtocolError("reward is not a finite number", body);
  const double v = r.get<double>();
  if (!std::isfinite(v)) throw ProtocolError("reward is not a finite number", body);
  return v;
}

Gateway::Gateway(ImageStore images, RetryPolicy retry) : images_(std::move(images)), retry_(retry) {}

void Gateway::add_endpoint(const EndpointSpec& spec) { add_endpoint(spec, make_backend(spec)); }

void Gateway::add_endpoint(const EndpointSpec& spec, std::shared_ptr<Backend> backend) {
  validate(spec);
  std::lock_guard lock(mutex_);
  if (auto it = lanes_.find(spec.id); it != lanes_.end()) {
    // Re-registering the same endpoint is a no-op; a different one is an error.
    if (json(it->second->spec) == json(spec)) return;
    throw ValidationError("endpoint id '" + spec.id + "' already registered");
  }
  lanes_.emplace(spec.id, std::make_unique<Lane>(spec, std::move(backend)));
}

bool Gateway::has_endpoint(std::string_view id) const {
  std::lock_guard lock(mutex_);
  return lanes_.find(id) != lanes_.end();
}

EndpointSpec Gateway::endpoint(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = lanes_.find(id);
  if (it == lanes_.end()) throw PreconditionError("unknown endpoint '" + std::string(id) + "'");
  return it->second->spec;
}

EndpointStats Gateway::stats(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = lanes_.find(id);
  if (it == lanes_.end()) throw PreconditionError("unknown endpoint '" + std::string(id) + "'");
  return {it->second->requests.load(), it->second->attempts.load(), it->second->failures.load()};
}

Gateway::Lane& Gateway::lane(std::string_view id, EndpointKind expected) const {
  std::lock_guard lock(mutex_);
  auto it = lanes_.find(id);
  if (it == lanes_.end()) throw PreconditionError("unknown endpoint '" + std::string(id) + "'");
  if (it->second->spec.kind != expected) {
    throw PreconditionError("endpoint '" + std::string(id) + "' is a " + json(it->second->spec.kind).get<std::string>() +
                            " endpoint, expected " + json(expected).get<std::string>());
  }
  return *it->second;
}

std::string Gateway::call(Lane& lane, const std::string& path, const json& body) const {
  std::string credential;
  if (!lane.spec.auth_env_var.empty()) {
    const char* value = std::getenv(lane.spec.auth_env_var.c_str());
    if (value == nullptr) {
      throw PreconditionError("endpoint '" + lane.spec.id + "': environment variable " + lane.spec.auth_env_var +
                              " is not set");
    }
    credential = value;
  }
  ++lane.requests;
  thread_local std::mt19937_64 jitter{std::random_device{}()};
  std::vector<Attempt> attempts;
  for (int attempt = 0; attempt <= lane.spec.max_retries; ++attempt) {
    if (attempt > 0) {
      const double exp = static_cast<double>(retry_.base.count()) * std::ldexp(1.0, attempt - 1);
      const double capped = std::min(exp, static_cast<double>(retry_.cap.count()));
      const double factor = 0.5 + 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(jitter);
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(capped * factor));
    }
    ++lane.attempts;
    lane.slots.acquire();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&start] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };
    try {
      auto reply = lane.backend->post(path, body, credential);
      lane.slots.release();
      spdlog::debug("{} {} attempt {} ok in {:.1f} ms", lane.spec.id, path, attempt + 1, elapsed_ms());
      return reply;
    } catch (const TransportError& e) {
      lane.slots.release();
      attempts.push_back({attempt + 1, elapsed_ms(), e.what()});
      spdlog::debug("{} {} attempt {} failed in {:.1f} ms: {}", lane.spec.id, path, attempt + 1,
                    attempts.back().latency_ms, e.what());
    } catch (...) {
      lane.slots.release();
      ++lane.failures;
      throw;
    }
  }
  ++lane.failures;
  throw EndpointError(lane.spec.id, std::move(attempts),
                      "endpoint '" + lane.spec.id + "' failed after " + std::to_string(lane.spec.max_retries + 1) +
                          " attempts");
}

std::vector<Bytes> Gateway::load_images(std::span<const std::string> refs) const {
  std::vector<Bytes> out;
  out.reserve(refs.size());
  for (const auto& ref : refs) out.push_back(images_.load(ref));
  return out;
}

std::vector<std::string> Gateway::generate(std::string_view endpoint_id, const GenerationRequest& request) {
  if (request.n_samples < 1) throw PreconditionError("n_samples must be >= 1");
  if (!(request.temperature > 0.0)) throw PreconditionError("temperature must be > 0");
  if (!(request.top_p > 0.0 && request.top_p <= 1.0)) throw PreconditionError("top_p must be in (0, 1]");
  auto& ln = lane(endpoint_id, EndpointKind::generator);
  const auto body = chat_request_body(ln.spec.id, request.prompt_text, request.images, request.temperature,
                                      request.top_p, request.n_samples, request.seed);
  const auto reply = call(ln, kChatPath, body);
  auto texts = parse_chat_reply(reply);
  if (texts.size() != static_cast<std::size_t>(request.n_samples)) {
    throw ProtocolError("expected " + std::to_string(request.n_samples) + " samples, got " +
                            std::to_string(texts.size()),
                        reply);
  }
  return texts;
}

std::vector<JudgeVerdict> Gateway::judge(std::string_view endpoint_id, const PromptRecord& prompt,
                                         std::span<const JudgeCandidate> candidates, JudgeMode mode,
                                         const JudgeOptions& options) {
  if (mode == JudgeMode::pointwise && candidates.size() != 1) {
    throw PreconditionError("pointwise judging takes exactly one response");
  }
  if (mode == JudgeMode::listwise && candidates.size() < 2) {
    throw PreconditionError("listwise judging takes at least two responses");
  }
  auto& ln = lane(endpoint_id, EndpointKind::judge);
  std::vector<std::string> texts;
  texts.reserve(candidates.size());
  for (const auto& c : candidates) texts.push_back(c.text);
  const auto prompt_text = render_scoring_prompt(prompt.text, prompt.reference_answer, texts);
  const auto images = load_images(prompt.images);

  std::vector<std::string> raw_replies;
  std::string last_error;
  for (int ask = 0; ask <= options.max_reasks; ++ask) {
    const auto body = chat_request_body(ln.spec.id, prompt_text, images, options.temperature, 1.0, 1,
                                        options.seed + ask);
    const auto reply_body = call(ln, kChatPath, body);
    std::string reply;
    try {
      auto choices = parse_chat_reply(reply_body);
      if (choices.size() != 1) throw ProtocolError("expected one choice", reply_body);
      reply = std::move(choices.front());
    } catch (const ProtocolError& e) {
      raw_replies.push_back(reply_body);
      last_error = e.what();
      continue;
    }
    raw_replies.push_back(reply);
    JudgeReply parsed;
    try {
      parsed = parse_judge_reply(reply, candidates.size());
    } catch (const JudgeReplyError& e) {
      last_error = e.what();
      spdlog::debug("{}: judge reply for '{}' rejected (ask {}): {}", ln.spec.id, prompt.id, ask + 1, e.what());
      continue;
    }
    std::vector<JudgeVerdict> verdicts;
    verdicts.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      JudgeVerdict v;
      v.prompt_id = prompt.id;
      v.response_ref = {prompt.id, candidates[i].sample_index};
      v.mode = mode;
      v.judge_id = ln.spec.id;
      v.judge_reference = parsed.reference_answer;
      v.weights = parsed.responses[i].weights;
      v.criterion_scores = parsed.responses[i].scores;
      // The judge's own total is ignored.
      v.overall = weighted_overall(v.weights, v.criterion_scores);
      v.position = static_cast<int>(i);
      v.raw_judge_output = reply;
      verdicts.push_back(std::move(v));
    }
    return verdicts;
  }
  throw VerdictFailure("judge '" + ln.spec.id + "' gave no usable verdict for prompt '" + prompt.id +
                           "' after " + std::to_string(options.max_reasks + 1) + " asks: " + last_error,
                       std::move(raw_replies));
}

double Gateway::score_reward(std::string_view endpoint_id, const PairContext& context, std::string_view response) {
  auto& ln = lane(endpoint_id, EndpointKind::reward);
  const auto refs = context_images(context);
  const auto images = load_images(refs);
  const auto body = score_request_body(reward_prompt_text(context), images, response);
  return parse_score_reply(call(ln, kScorePath, body));
}

std::future<double> Gateway::score_reward_async(std::string endpoint_id, PairContext context, std::string response) {
  return std::async(std::launch::async, [this, id = std::move(endpoint_id), ctx = std::move(context),
                                         text = std::move(response)] { return score_reward(id, ctx, text); });
}

std::optional<PairwiseChoice> Gateway::compare(std::string_view endpoint_id, const PairContext& context,
                                               std::string_view first, std::string_view second, std::int64_t seed) {
  auto& ln = lane(endpoint_id, EndpointKind::judge);
  const auto refs = context_images(context);
  const auto images = load_images(refs);
  const auto prompt_text = render_pairwise_prompt(reward_prompt_text(context), first, second);
  const auto body = chat_request_body(ln.spec.id, prompt_text, images, 0.0, 1.0, 1, seed);
  const auto reply_body = call(ln, kChatPath, body);
  std::vector<std::string> choices;
  try {
    choices = parse_chat_reply(reply_body);
  } catch (const ProtocolError&) {
    return std::nullopt;
  }
  if (choices.size() != 1) return std::nullopt;
  return parse_pairwise_reply(choices.front());
}

}  // namespace prefkit
