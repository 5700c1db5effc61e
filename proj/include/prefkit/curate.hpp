#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/dataset.hpp"
#include "prefkit/gateway.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

struct StrengthResult {
  std::vector<StrengthEstimate> estimates;  // input order, dropped pairs left out
  std::vector<std::string> dropped_ids;     // every MRM failed on these
};

// Pure part of strength estimation over a filled margin table.
StrengthResult strengths_from_margins(std::span<const PreferencePair> pairs, std::span<const std::string> mrm_ids,
                                      const MarginTable& table);

// Margin per pair and MRM is r(x, chosen) - r(x, rejected). A failed call
// leaves a hole for that MRM only.
StrengthResult estimate_strength(Gateway& gateway, std::span<const PreferencePair> pairs,
                                 std::span<const std::string> mrm_pool, int workers = 8);

struct StepResult {
  std::vector<PreferencePair> pairs;
  std::vector<CurationDecision> decisions;
};

// Flips the floor(|N|/2) lowest of the pairs with negative strength. Ties
// keep input order. One decision per pair.
StepResult flip_bottom(std::span<const StrengthEstimate> estimates, std::span<const PreferencePair> pairs);

struct FilterResult {
  std::vector<PreferencePair> retained;
  std::vector<PreferencePair> forwarded;
  std::vector<std::string> forwarded_notes;  // parallel to forwarded
  std::vector<CurationDecision> decisions;   // retained pairs only
};

// Retained iff r(x, chosen) > r(x, rejected). Ties, reversals and failed
// calls are forwarded.
FilterResult consistency_filter(Gateway& gateway, std::span<const PreferencePair> pairs, const std::string& mrm,
                                int workers = 8);

// Majority over the valid votes; fewer than two votes or a tie discards.
CurationAction decide_votes(std::span<const Vote> votes);

struct ReannotateResult {
  std::vector<PreferencePair> relabeled;  // kept or flipped, input order
  std::vector<std::string> discarded_ids;
  std::vector<CurationDecision> decisions;
};

// Each annotator judges every pair twice, chosen first (AB) and rejected
// first (BA). Unparseable or failed calls are omitted votes.
ReannotateResult reannotate(Gateway& gateway, std::span<const PreferencePair> pairs,
                            std::span<const std::string> annotators, std::int64_t seed = 0, int workers = 8,
                            std::span<const std::string> notes = {});

struct CurateConfig {
  std::vector<std::string> mrm_pool;
  std::string mrm;
  std::vector<std::string> annotators;
  bool skip_strength = false;
  std::int64_t seed = 0;
  int workers = 8;
};

void to_json(nlohmann::json& j, const CurateConfig& c);
void validate(const CurateConfig& c);

struct CurateStats {
  std::size_t input = 0;
  std::size_t strength_dropped = 0;
  std::size_t flipped = 0;
  std::size_t retained = 0;
  std::size_t forwarded = 0;
  std::size_t reannotated_kept = 0;
  std::size_t reannotated_flipped = 0;
  std::size_t discarded = 0;
  std::size_t output = 0;
};

nlohmann::json to_json_value(const CurateStats& s);

struct CurateResult {
  std::vector<PreferencePair> pairs;  // surviving pairs in input order
  std::vector<CurationDecision> decisions;
  CurateStats stats;
};

// Strength flip (unless skipped), consistency filter, then re-annotation of
// the forwarded pairs.
CurateResult curate(Gateway& gateway, std::span<const PreferencePair> pairs, const CurateConfig& config);

// Reads the dataset at `in`, writes the curated dataset to `out` and one
// CurationDecision per line to `decisions`.
CurateResult run_curate(Gateway& gateway, const CurateConfig& config, const std::filesystem::path& in,
                        const std::filesystem::path& out, const std::filesystem::path& decisions);

}  // namespace prefkit
