#include <benchmark/benchmark.h>

#include <random>

#include "treehop/model.hpp"

using namespace treehop;

namespace {

Vector random_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(d);
  for (auto& x : v) x = g(rng);
  return v;
}

void BM_NextQuery(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto p = init_params(d, 1, 0.0);
  auto q = random_vector(d, rng), c = random_vector(d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(next_query(p, q, c));
}
BENCHMARK(BM_NextQuery)->Arg(64)->Arg(256)->Arg(1024);

void BM_ForwardBackward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto p = init_params(d, 1, 0.0);
  auto q = random_vector(d, rng), c = random_vector(d, rng), u = random_vector(d, rng);
  for (auto _ : state) {
    auto trace = next_query(p, q, c);
    benchmark::DoNotOptimize(backward(p, trace, u));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256)->Arg(1024);

}  // namespace
