#include <algorithm>
#include <cmath>

#include "prefkit/digest.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/t2i.hpp"

namespace prefkit {

std::vector<IndexedPair> intersect_pairs(std::span<const ScoredCandidate> candidates, double min_margin) {
  std::vector<ScoredCandidate> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.sample_index < b.sample_index; });
  std::vector<IndexedPair> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      const auto& a = sorted[i];
      const auto& b = sorted[j];
      const double dl = a.listwise - b.listwise;
      const double dp = a.pointwise - b.pointwise;
      if (dl > min_margin && dp > min_margin) {
        out.push_back({a.sample_index, b.sample_index, dl, dp});
      } else if (-dl > min_margin && -dp > min_margin) {
        out.push_back({b.sample_index, a.sample_index, -dl, -dp});
      }
    }
  }
  return out;
}

namespace kernels::serial {

std::vector<std::vector<IndexedPair>> intersect_pairs_batch(std::span<const std::vector<ScoredCandidate>> prompts,
                                                            double min_margin) {
  std::vector<std::vector<IndexedPair>> out(prompts.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) out[p] = intersect_pairs(prompts[p], min_margin);
  return out;
}

std::vector<std::optional<double>> normalized_strengths(const MarginTable& table) {
  std::vector<double> scale(table.models, 0.0);
  for (std::size_t m = 0; m < table.models; ++m) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < table.pairs; ++p) {
      if (table.has(p, m)) {
        sum += table.at(p, m);
        ++n;
      }
    }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t p = 0; p < table.pairs; ++p) {
      if (table.has(p, m)) ss += (table.at(p, m) - mean) * (table.at(p, m) - mean);
    }
    scale[m] = std::sqrt(ss / static_cast<double>(n));
  }
  std::vector<std::optional<double>> out(table.pairs);
  for (std::size_t p = 0; p < table.pairs; ++p) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < table.models; ++m) {
      if (!table.has(p, m)) continue;
      sum += scale[m] > 0.0 ? table.at(p, m) / scale[m] : 0.0;
      ++n;
    }
    if (n > 0) out[p] = sum / static_cast<double>(n);
  }
  return out;
}

std::vector<std::string> digest_lines(std::span<const std::string> lines) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(sha256_hex(line));
  return out;
}

std::vector<PreferencePair> reformulate_all(std::span<const T2IRecord> records, const T2IOptions& options) {
  std::vector<PreferencePair> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(reformulate(r, options));
  return out;
}

}  // namespace kernels::serial
}  // namespace prefkit
