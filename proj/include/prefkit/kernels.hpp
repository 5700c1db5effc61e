#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefkit/types.hpp"

namespace prefkit {

struct ScoredCandidate {
  int sample_index = 0;  // unique within one prompt
  double listwise = 0.0;
  double pointwise = 0.0;
};

struct IndexedPair {
  int chosen = 0;  // sample indices
  int rejected = 0;
  double listwise_margin = 0.0;
  double pointwise_margin = 0.0;
};

// All unordered candidate pairs whose listwise and pointwise orders agree
// with both margins strictly above min_margin. Output is sorted by
// (min sample index, max sample index), so it does not depend on the
// order of `candidates`.
std::vector<IndexedPair> intersect_pairs(std::span<const ScoredCandidate> candidates, double min_margin);

// Per-pair, per-model reward margins with holes for failed calls.
struct MarginTable {
  std::size_t pairs = 0;
  std::size_t models = 0;
  std::vector<double> values;         // row-major [pair][model]
  std::vector<std::uint8_t> present;  // 1 where values holds a margin

  MarginTable() = default;
  MarginTable(std::size_t n_pairs, std::size_t n_models)
      : pairs(n_pairs), models(n_models), values(n_pairs * n_models, 0.0), present(n_pairs * n_models, 0) {}

  void set(std::size_t pair, std::size_t model, double margin) {
    values[pair * models + model] = margin;
    present[pair * models + model] = 1;
  }
  bool has(std::size_t pair, std::size_t model) const { return present[pair * models + model] != 0; }
  double at(std::size_t pair, std::size_t model) const { return values[pair * models + model]; }
};

struct T2IOptions;

namespace kernels {

// Serial references; the OpenMP versions below must match them exactly.
namespace serial {

std::vector<std::vector<IndexedPair>> intersect_pairs_batch(std::span<const std::vector<ScoredCandidate>> prompts,
                                                            double min_margin);

// Each model's margins are divided by that model's population standard
// deviation (no centering, so signs survive); zero variance contributes 0.
// strength = mean over the models that scored the pair; nullopt if none did.
std::vector<std::optional<double>> normalized_strengths(const MarginTable& table);

std::vector<std::string> digest_lines(std::span<const std::string> lines);

std::vector<PreferencePair> reformulate_all(std::span<const T2IRecord> records, const T2IOptions& options);

}  // namespace serial

namespace omp {

std::vector<std::vector<IndexedPair>> intersect_pairs_batch(std::span<const std::vector<ScoredCandidate>> prompts,
                                                            double min_margin);
std::vector<std::optional<double>> normalized_strengths(const MarginTable& table);
std::vector<std::string> digest_lines(std::span<const std::string> lines);
std::vector<PreferencePair> reformulate_all(std::span<const T2IRecord> records, const T2IOptions& options);

}  // namespace omp

int max_threads();

}  // namespace kernels
}  // namespace prefkit
