#include <benchmark/benchmark.h>

#include "treehop/data.hpp"
#include "treehop/multihop.hpp"

using namespace treehop;

namespace {

struct Corpus {
  SyntheticCorpus corpus = generate_synthetic(SynthConfig{});
  Store store{64};
  ModelParams params = init_params(64, 1, 0.0);
  Corpus() {
    for (const auto& ch : corpus.chunks) store.insert(ch);
  }
};

const Corpus& corpus() {
  static const Corpus c;
  return c;
}

void BM_MultihopRetrieve(benchmark::State& state) {
  const auto& c = corpus();
  ControllerConfig config;
  config.top_k = 5;
  config.hops = static_cast<std::size_t>(state.range(0));
  config.redundancy_pruning = config.layerwise_top_pruning = state.range(1) != 0;
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& q = c.corpus.queries[i++ % c.corpus.queries.size()].query_emb;
    benchmark::DoNotOptimize(multihop_retrieve(c.store, &c.params, q, config));
  }
}
BENCHMARK(BM_MultihopRetrieve)->ArgsProduct({{1, 2, 3}, {1}})->Args({2, 0})->Args({3, 0});

}  // namespace
