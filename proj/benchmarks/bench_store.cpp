#include <benchmark/benchmark.h>

#include <random>

#include "treehop/store.hpp"

using namespace treehop;

namespace {

Store random_store(std::size_t n, std::size_t d) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  Store s(d);
  for (std::size_t i = 0; i < n; ++i) {
    Embedding e(d);
    for (auto& x : e) x = g(rng);
    s.insert({"c" + std::to_string(i), std::nullopt, std::nullopt, std::move(e)});
  }
  return s;
}

std::vector<Vector> random_queries(std::size_t b, std::size_t d) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<Vector> qs(b, Vector(d));
  for (auto& q : qs)
    for (auto& x : q) x = g(rng);
  return qs;
}

void BM_TopK(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  Store s = random_store(n, 64);
  auto q = random_queries(1, 64).front();
  for (auto _ : state) benchmark::DoNotOptimize(s.top_k(q, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_TopK)->Args({1000, 5})->Args({5500, 5})->Args({5500, 100})->Args({50000, 5});

void BM_TopKBatch(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  Store s = random_store(5500, 64);
  auto qs = random_queries(b, 64);
  for (auto _ : state) benchmark::DoNotOptimize(s.top_k_batch(qs, 5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_TopKBatch)->Arg(1)->Arg(5)->Arg(25);

}  // namespace
