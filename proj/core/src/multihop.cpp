#include "treehop/multihop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_set>

#include "treehop/errors.hpp"

namespace treehop {

void ControllerConfig::validate() const {
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (hops < 1) throw ConfigError("hops must be >= 1");
}

Json to_json(const ControllerConfig& c) {
  return Json{{"top_k", c.top_k},
              {"hops", c.hops},
              {"redundancy_pruning", c.redundancy_pruning},
              {"layerwise_top_pruning", c.layerwise_top_pruning},
              {"normalize_next_query", c.normalize_next_query}};
}

Json to_json(const HopTrace& trace) {
  Json layers = Json::array();
  for (const auto& l : trace.layers) {
    Json admitted = Json::array();
    for (const auto& a : l.admitted) {
      admitted.push_back({{"id", a.id},
                          {"score", a.score},
                          {"parent", a.parent ? Json(*a.parent) : Json(nullptr)},
                          {"added", a.added}});
    }
    layers.push_back({{"depth", l.depth},
                      {"branches", l.branches},
                      {"candidates", l.candidates},
                      {"redundant", l.redundant},
                      {"threshold", l.threshold ? Json(*l.threshold) : Json(nullptr)},
                      {"admitted", std::move(admitted)},
                      {"added", l.added},
                      {"tie_surplus", l.tie_surplus},
                      {"spawned", l.spawned},
                      {"dead", l.dead}});
  }
  return Json{{"config", to_json(trace.config)},
              {"layers", std::move(layers)},
              {"retrieved", trace.retrieved},
              {"early_stop", trace.early_stop},
              {"model_forwards", trace.model_forwards},
              {"retrieval_calls", trace.retrieval_calls}};
}

namespace {

using Clock = std::chrono::steady_clock;

struct Candidate {
  std::size_t branch;
  const ScoredHit* hit;
};

}  // namespace

RetrievalResult multihop_retrieve(const Store& store, const ModelParams* params,
                                  std::span<const double> q0, const ControllerConfig& config,
                                  ControllerTimings* timings) {
  config.validate();
  if (store.empty()) throw EmptyStoreError();
  if (q0.size() != store.dim()) throw DimensionError(store.dim(), q0.size());
  if (config.hops > 1) {
    if (params == nullptr) throw ConfigError("multi-hop retrieval needs model parameters");
    if (params->dim() != store.dim()) throw DimensionError(store.dim(), params->dim());
  }

  RetrievalResult result;
  HopTrace& trace = result.trace;
  trace.config = config;
  std::unordered_set<std::string> retrieved_set;

  std::vector<QueryBranch> branches;
  branches.push_back({Vector(q0.begin(), q0.end()), 1, std::nullopt, {}});

  for (std::size_t depth = 1; depth <= config.hops; ++depth) {
    if (branches.empty()) {
      trace.early_stop = true;
      break;
    }
    LayerTrace layer;
    layer.depth = depth;
    layer.branches = branches.size();

    std::vector<Vector> queries;
    queries.reserve(branches.size());
    for (auto& b : branches) queries.push_back(std::move(b.query_emb));
    auto t0 = Clock::now();
    auto hits = store.top_k_batch(queries, config.top_k);
    if (timings) timings->retrieval_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    trace.retrieval_calls += branches.size();

    // Redundancy pruning tests membership in everything retrieved by earlier
    // layers; duplicates inside one layer all survive.
    std::vector<Candidate> survivors;
    for (std::size_t b = 0; b < hits.size(); ++b) {
      for (const auto& h : hits[b]) {
        ++layer.candidates;
        if (config.redundancy_pruning && retrieved_set.contains(h.chunk_id)) {
          ++layer.redundant;
          continue;
        }
        survivors.push_back({b, &h});
      }
    }

    std::sort(survivors.begin(), survivors.end(), [](const Candidate& x, const Candidate& y) {
      if (x.hit->score != y.hit->score) return x.hit->score > y.hit->score;
      if (x.hit->chunk_id != y.hit->chunk_id) return x.hit->chunk_id < y.hit->chunk_id;
      return x.branch < y.branch;
    });

    std::size_t admit_count = survivors.size();
    if (config.layerwise_top_pruning && !survivors.empty()) {
      const std::size_t kth = std::min(config.top_k, survivors.size()) - 1;
      const double t = survivors[kth].hit->score;
      layer.threshold = t;
      admit_count = kth + 1;
      while (admit_count < survivors.size() && survivors[admit_count].hit->score >= t) ++admit_count;
      if (admit_count > config.top_k) layer.tie_surplus = admit_count - config.top_k;
    }

    std::vector<QueryBranch> next;
    const bool expand = depth < config.hops;
    for (std::size_t s = 0; s < admit_count; ++s) {
      const auto& cand = survivors[s];
      const ScoredHit& hit = *cand.hit;
      const QueryBranch& parent = branches[cand.branch];
      AdmittedChunk a{hit.chunk_id, hit.score, parent.path.empty() ? std::nullopt
                                                                   : std::optional(parent.path.back()),
                      false};
      if (retrieved_set.insert(hit.chunk_id).second) {
        a.added = true;
        ++layer.added;
        result.retrieved.push_back(hit.chunk_id);
      }
      layer.admitted.push_back(std::move(a));

      if (!expand) continue;
      auto t1 = Clock::now();
      Vector chunk = store.embedding_f64(hit.index);
      ForwardTrace fwd = next_query(*params, queries[cand.branch], chunk);
      ++trace.model_forwards;
      ++layer.spawned;
      if (timings) timings->model_seconds += std::chrono::duration<double>(Clock::now() - t1).count();

      double norm = 0.0;
      for (double x : fwd.next_query) norm += x * x;
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) throw NumericError("generated query embedding is not finite");
      if (norm == 0.0) {
        ++layer.dead;
        continue;
      }
      if (config.normalize_next_query)
        for (double& x : fwd.next_query) x /= norm;

      QueryBranch child{std::move(fwd.next_query), depth + 1, hit.chunk_id, parent.path};
      child.path.push_back(hit.chunk_id);
      next.push_back(std::move(child));
    }

    trace.layers.push_back(std::move(layer));
    branches = std::move(next);
    if (expand && branches.empty()) {
      trace.early_stop = true;
      break;
    }
  }
  trace.retrieved = result.retrieved;
  return result;
}

std::vector<std::string> direct_retrieve(const Store& store, std::span<const double> q0,
                                         std::size_t k) {
  if (k < 1) throw ConfigError("top_k must be >= 1");
  std::vector<std::string> ids;
  for (auto& h : store.top_k(q0, k)) ids.push_back(std::move(h.chunk_id));
  return ids;
}

}  // namespace treehop
