#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "prefkit/gateway.hpp"

namespace prefkit {

// Quality of `response` on a 0..10 scale given the question and reference.
using Scorer = std::function<double(std::string_view question, std::string_view reference, std::string_view response)>;

// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);
// Jaccard similarity of token sets; 1 for two empty texts.
double token_jaccard(std::string_view a, std::string_view b);

// 10 * jaccard(response, reference).
Scorer overlap_scorer();
// Pseudo-random planted quality in [0, 10): a pure hash of
// (salt, normalized question, response).
Scorer planted_scorer(std::uint64_t salt);
double planted_quality(std::uint64_t salt, std::string_view question, std::string_view response);

// Integer criterion scores whose equal-weight average is the closest
// multiple of 1/6 to `target`.
std::vector<int> spread_scores(double target, std::size_t criteria = kDefaultCriteria);

// Generator persona. Texts are a pure function of (model, prompt, images,
// seed, sample index). Augment prompts are answered with the reference.
class MockGenerator : public Backend {
 public:
  std::string post(const std::string& path, const nlohmann::json& body, const std::string& credential) override;
};

struct MockJudgeOptions {
  double first_listed_bias = 0.0;  // added to the first-listed response
  double noise_sigma = 0.0;        // seeded perturbation of the target score
  std::uint64_t noise_seed = 0;
};

// Judge persona: scores via `scorer`, replies with analysis text plus the
// fenced block; pairwise prompts are answered "A"/"B".
class MockJudge : public Backend {
 public:
  MockJudge(Scorer scorer, MockJudgeOptions options = {});
  std::string post(const std::string& path, const nlohmann::json& body, const std::string& credential) override;

  // Target score (bias and noise included) for one presented response.
  double target_score(std::string_view question, std::string_view reference, std::string_view response,
                      std::size_t position, std::int64_t request_seed) const;

 private:
  Scorer scorer_;
  MockJudgeOptions options_;
};

using RewardFunction = std::function<double(std::string_view prompt_text, std::string_view response_text)>;

// Reward persona answering POST /score with {"reward": f(prompt, response)}.
class MockReward : public Backend {
 public:
  explicit MockReward(RewardFunction fn);
  std::string post(const std::string& path, const nlohmann::json& body, const std::string& credential) override;

 private:
  RewardFunction fn_;
};

// Reward that scores overlap with a per-prompt reference; prompts without a
// reference are scored against the prompt text itself.
RewardFunction overlap_reward(std::map<std::string, std::string> references_by_prompt = {});
RewardFunction planted_reward(std::uint64_t salt);

// mock://generator
// mock://judge?scorer=overlap|planted&salt=N&bias=D&noise=S&noise_seed=N
// mock://reward?scorer=overlap|planted&salt=N&references=<prompts.jsonl>
std::shared_ptr<Backend> make_mock_backend(const EndpointSpec& spec);

}  // namespace prefkit
