#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prefkit {

inline constexpr std::size_t kDefaultCriteria = 6;
inline constexpr double kWeightSumTolerance = 0.01;

// Raised when a judge reply cannot be turned into verdicts; triggers a re-ask.
class JudgeReplyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Listwise/pointwise scoring prompt: criteria, scoring rules, the standard
// answer and one "[Response i]" block per response, followed by the
// machine-readable output contract.
std::string render_scoring_prompt(std::string_view question, std::string_view reference,
                                  std::span<const std::string> responses);

// Two-response comparison used for re-annotation; asks for "A" or "B".
std::string render_pairwise_prompt(std::string_view question, std::string_view response_a,
                                   std::string_view response_b);

// Generation prompt for a better response with the reference visible.
std::string render_augment_prompt(std::string_view question, std::string_view reference);

struct ScoredResponse {
  std::vector<double> weights;
  std::vector<int> scores;
  std::optional<double> reported_overall;
};

struct JudgeReply {
  std::string reference_answer;
  std::vector<ScoredResponse> responses;
};

// Extracts the last ```json fenced block and checks its shape: exactly
// `expected_responses` entries, `criteria` weights and integer scores in
// 0..10 each, weights non-negative and summing to 1 within tolerance.
JudgeReply parse_judge_reply(std::string_view reply, std::size_t expected_responses,
                             std::size_t criteria = kDefaultCriteria);

// Renormalizes to sum 1; throws JudgeReplyError outside the tolerance.
std::vector<double> normalize_weights(std::span<const double> weights, double tolerance = kWeightSumTolerance);

// sum_m w_m * s_m, clamped to [0, 10].
double weighted_overall(std::span<const double> weights, std::span<const int> scores);

enum class PairwiseChoice { first, second };

// Strict: the trimmed reply must be exactly "A" or "B".
std::optional<PairwiseChoice> parse_pairwise_reply(std::string_view reply);

// Inverse helpers for mock judges and tests.
struct RenderedScoringPrompt {
  std::string question;
  std::string reference;
  std::vector<std::string> responses;
};
std::optional<RenderedScoringPrompt> parse_scoring_prompt(std::string_view prompt);

struct RenderedPairwisePrompt {
  std::string question;
  std::string response_a;
  std::string response_b;
};
std::optional<RenderedPairwisePrompt> parse_pairwise_prompt(std::string_view prompt);

std::optional<std::string> parse_augment_prompt(std::string_view prompt);

std::string format_judge_block(const JudgeReply& reply);

}  // namespace prefkit
