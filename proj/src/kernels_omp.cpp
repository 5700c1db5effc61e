#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "prefkit/digest.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/t2i.hpp"

namespace prefkit::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

std::vector<std::vector<IndexedPair>> intersect_pairs_batch(std::span<const std::vector<ScoredCandidate>> prompts,
                                                            double min_margin) {
  std::vector<std::vector<IndexedPair>> out(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t p = 0; p < n; ++p) out[p] = intersect_pairs(prompts[p], min_margin);
  return out;
}

std::vector<std::optional<double>> normalized_strengths(const MarginTable& table) {
  const auto n_models = static_cast<std::ptrdiff_t>(table.models);
  const auto n_pairs = static_cast<std::ptrdiff_t>(table.pairs);
  std::vector<double> scale(table.models, 0.0);
  // Per-model passes keep the summation order of the serial reference, so
  // the results are bit-identical.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t m = 0; m < n_models; ++m) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::ptrdiff_t p = 0; p < n_pairs; ++p) {
      if (table.has(p, m)) {
        sum += table.at(p, m);
        ++n;
      }
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::ptrdiff_t p = 0; p < n_pairs; ++p) {
      if (table.has(p, m)) ss += (table.at(p, m) - mean) * (table.at(p, m) - mean);
    }
    scale[m] = std::sqrt(ss / static_cast<double>(n));
  }
  std::vector<std::optional<double>> out(table.pairs);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < n_pairs; ++p) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::ptrdiff_t m = 0; m < n_models; ++m) {
      if (!table.has(p, m)) continue;
      sum += scale[m] > 0.0 ? table.at(p, m) / scale[m] : 0.0;
      ++n;
    }
    if (n > 0) out[p] = sum / static_cast<double>(n);
  }
  return out;
}

std::vector<std::string> digest_lines(std::span<const std::string> lines) {
  std::vector<std::string> out(lines.size());
  const auto n = static_cast<std::ptrdiff_t>(lines.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = sha256_hex(lines[i]);
  return out;
}

std::vector<PreferencePair> reformulate_all(std::span<const T2IRecord> records, const T2IOptions& options) {
  std::vector<PreferencePair> out(records.size());
  const auto n = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = reformulate(records[i], options);
  return out;
}

}  // namespace omp
}  // namespace prefkit::kernels
