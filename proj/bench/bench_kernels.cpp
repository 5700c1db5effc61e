// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "prefkit/kernels.hpp"
#include "prefkit/rng.hpp"
#include "prefkit/t2i.hpp"

using namespace prefkit;

namespace {

std::vector<std::vector<ScoredCandidate>> candidate_sets(std::size_t n) {
  Rng rng(1);
  std::vector<std::vector<ScoredCandidate>> out(n);
  for (auto& prompt : out) {
    const auto k = 2 + rng.uniform_index(5);
    for (std::uint64_t i = 0; i < k; ++i) {
      prompt.push_back({static_cast<int>(i), rng.uniform(0, 10), rng.uniform(0, 10)});
    }
  }
  return out;
}

MarginTable margins(std::size_t n) {
  Rng rng(2);
  MarginTable t(n, 3);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t m = 0; m < 3; ++m) {
      if (rng.bernoulli(0.98)) t.set(p, m, rng.normal());
    }
  }
  return t;
}

std::vector<std::string> lines(std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(R"({"chosen":"a fairly long response text number )" + std::to_string(i) + R"(","rejected":"another"})");
  }
  return out;
}

std::vector<T2IRecord> triplets(std::size_t n) {
  std::vector<T2IRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"t" + std::to_string(i), "prompt " + std::to_string(i), "a.png", "b.png", "bench"});
  }
  return out;
}

template <auto Fn>
void bm_intersect(benchmark::State& state) {
  const auto data = candidate_sets(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(data, 0.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void bm_strengths(benchmark::State& state) {
  const auto table = margins(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(table));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void bm_digest(benchmark::State& state) {
  const auto data = lines(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void bm_reformulate(benchmark::State& state) {
  const auto data = triplets(static_cast<std::size_t>(state.range(0)));
  T2IOptions options;
  for (auto _ : state) benchmark::DoNotOptimize(Fn(data, options));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(bm_intersect<kernels::serial::intersect_pairs_batch>)->Name("intersect/serial")->Arg(100000);
BENCHMARK(bm_intersect<kernels::omp::intersect_pairs_batch>)->Name("intersect/omp")->Arg(100000);
BENCHMARK(bm_strengths<kernels::serial::normalized_strengths>)->Name("strengths/serial")->Arg(1000000);
BENCHMARK(bm_strengths<kernels::omp::normalized_strengths>)->Name("strengths/omp")->Arg(1000000);
BENCHMARK(bm_digest<kernels::serial::digest_lines>)->Name("digest/serial")->Arg(100000);
BENCHMARK(bm_digest<kernels::omp::digest_lines>)->Name("digest/omp")->Arg(100000);
BENCHMARK(bm_reformulate<kernels::serial::reformulate_all>)->Name("reformulate/serial")->Arg(100000);
BENCHMARK(bm_reformulate<kernels::omp::reformulate_all>)->Name("reformulate/omp")->Arg(100000);

BENCHMARK_MAIN();
