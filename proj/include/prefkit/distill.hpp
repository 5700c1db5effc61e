#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/dataset.hpp"
#include "prefkit/gateway.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

struct DistillConfig {
  int k_candidates = 4;
  double temperature = 1.0;
  double top_p = 0.95;
  double tau_low = 5.0;   // all listwise scores below: add a better response
  double tau_high = 8.0;  // all listwise scores above: add a degraded response
  double noise_sigma = 0.3;  // fraction of the pixel range
  double min_margin = 0.0;
  std::int64_t seed = 0;
  std::vector<std::string> generator_pool;
  std::vector<std::string> augment_pool;
  std::string judge;
  int judge_max_reasks = 2;
  double judge_temperature = 0.0;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);
void validate(const DistillConfig& c);

enum class DiversityBranch { none, augmented, degraded };

struct DiversityResult {
  std::vector<CandidateResponse> candidates;
  std::vector<JudgeVerdict> listwise;  // re-scored when the list grew
  DiversityBranch branch = DiversityBranch::none;
};

struct PromptOutcome {
  std::string prompt_id;
  bool ok = false;
  std::string note;
  DiversityBranch branch = DiversityBranch::none;
  std::vector<CandidateResponse> candidates;
  std::vector<JudgeVerdict> listwise;
  std::vector<JudgeVerdict> pointwise;
  std::vector<PreferencePair> pairs;
};

// Non-negative 31-bit seed derived for the wire.
std::int64_t wire_seed(std::uint64_t derived);

// Intersection rule: a pair (i, j) is emitted with i chosen iff i beats j by
// more than min_margin under both listwise and pointwise scores. Candidates
// missing either verdict are left out.
std::vector<PreferencePair> build_pairs(const PromptRecord& prompt, std::span<const CandidateResponse> candidates,
                                        std::span<const JudgeVerdict> listwise, std::span<const JudgeVerdict> pointwise,
                                        double min_margin);

// Debiased distillation over one gateway. Stateless apart from config;
// run_prompt is safe to call concurrently.
class Distiller {
 public:
  Distiller(Gateway& gateway, DistillConfig config);

  const DistillConfig& config() const noexcept { return config_; }

  // One generator per prompt, drawn from a PRNG keyed on (seed, prompt id).
  std::string pick_generator(const PromptRecord& prompt) const;
  std::vector<CandidateResponse> generate_candidates(const PromptRecord& prompt) const;

  // Presentation order is shuffled per (seed, prompt id, round); verdicts
  // come back in the order of `candidates`.
  std::vector<JudgeVerdict> listwise_score(const PromptRecord& prompt, std::span<const CandidateResponse> candidates,
                                           int round = 0) const;

  DiversityResult enhance_diversity(const PromptRecord& prompt, std::vector<CandidateResponse> candidates,
                                    std::vector<JudgeVerdict> verdicts) const;

  // One independent call per candidate; failed candidates are omitted.
  std::vector<JudgeVerdict> pointwise_score(const PromptRecord& prompt,
                                            std::span<const CandidateResponse> candidates) const;

  PromptOutcome run_prompt(const PromptRecord& prompt) const;
  // Prompts fan out over `workers` threads; results keep input order.
  std::vector<PromptOutcome> run(std::span<const PromptRecord> prompts, int workers = 8) const;

 private:
  Gateway& gateway_;
  DistillConfig config_;
};

struct DistillRunOptions {
  bool resume = false;
  std::optional<std::size_t> limit;
  std::size_t chunk_size = 64;
  int workers = 8;
};

struct DistillRunSummary {
  std::size_t processed = 0;
  std::size_t skipped = 0;  // already present when resuming
  std::size_t failed = 0;
  std::size_t pairs = 0;
  DatasetManifest manifest;
};

// Writes pairs to <out>/records.jsonl, candidates and verdicts under
// <out>/aux/, and a per-prompt status log to <out>/progress.jsonl that
// --resume uses to skip finished prompts.
DistillRunSummary run_distill(Gateway& gateway, const DistillConfig& config, std::span<const PromptRecord> prompts,
                              const std::filesystem::path& out, const DistillRunOptions& options = {});

}  // namespace prefkit
