#include <doctest.h>

#include "prefkit/dataset.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/rng.hpp"

using namespace prefkit;

TEST_CASE("intersect_pairs batch: OpenMP matches serial") {
  Rng rng(3);
  std::vector<std::vector<ScoredCandidate>> prompts(300);
  for (auto& p : prompts) {
    const auto k = 2 + rng.uniform_index(5);
    for (std::uint64_t i = 0; i < k; ++i) {
      p.push_back({static_cast<int>(i), static_cast<double>(rng.uniform_index(11)),
                   static_cast<double>(rng.uniform_index(11))});
    }
  }
  const auto a = kernels::serial::intersect_pairs_batch(prompts, 0.0);
  const auto b = kernels::omp::intersect_pairs_batch(prompts, 0.0);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].size() == b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      CHECK(a[i][j].chosen == b[i][j].chosen);
      CHECK(a[i][j].rejected == b[i][j].rejected);
      CHECK(a[i][j].listwise_margin == b[i][j].listwise_margin);
    }
  }
}

TEST_CASE("normalized strengths: OpenMP matches serial bit for bit, holes respected") {
  Rng rng(8);
  MarginTable t(5000, 3);
  for (std::size_t p = 0; p < t.pairs; ++p) {
    for (std::size_t m = 0; m < 3; ++m) {
      if (rng.bernoulli(0.95)) t.set(p, m, rng.normal() * static_cast<double>(m + 1));
    }
  }
  t.present[0] = t.present[1] = t.present[2] = 0;
  const auto a = kernels::serial::normalized_strengths(t);
  const auto b = kernels::omp::normalized_strengths(t);
  CHECK_FALSE(a[0].has_value());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].has_value() == b[i].has_value());
    if (a[i]) CHECK(*a[i] == *b[i]);
  }
}

TEST_CASE("digest_lines: OpenMP matches serial") {
  std::vector<std::string> lines;
  for (int i = 0; i < 1000; ++i) lines.push_back("{\"i\":" + std::to_string(i) + "}");
  CHECK(kernels::serial::digest_lines(lines) == kernels::omp::digest_lines(lines));
  CHECK(kernels::max_threads() >= 1);
}
