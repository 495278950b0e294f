#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treehop/jsonl.hpp"
#include "treehop/model.hpp"
#include "treehop/store.hpp"

namespace treehop {

struct ControllerConfig {
  std::size_t top_k = 5;  // K per retrieval
  std::size_t hops = 2;   // N >= 1
  bool redundancy_pruning = true;
  bool layerwise_top_pruning = true;
  // Rescale each generated query to unit length before the next retrieval.
  bool normalize_next_query = false;

  void validate() const;
};

Json to_json(const ControllerConfig& config);

// A live node of the retrieval tree.
struct QueryBranch {
  Vector query_emb;
  std::size_t depth = 1;  // hop index r
  std::optional<std::string> parent_chunk_id;
  std::vector<std::string> path;  // chunk ids from the root, size depth - 1
};

struct AdmittedChunk {
  std::string id;
  double score = 0.0;
  std::optional<std::string> parent;  // chunk that spawned the retrieving branch
  bool added = false;                 // first time the chunk entered the retrieved set
};

struct LayerTrace {
  std::size_t depth = 0;
  std::size_t branches = 0;    // queries retrieved with at this layer
  std::size_t candidates = 0;  // hits before redundancy pruning
  std::size_t redundant = 0;   // hits dropped because already retrieved
  std::optional<double> threshold;  // layer-wise K-th score; empty when that rule is off
  std::vector<AdmittedChunk> admitted;  // (score desc, id asc)
  std::size_t added = 0;       // new chunks this layer
  std::size_t tie_surplus = 0; // admissions beyond K caused by ties at the threshold
  std::size_t spawned = 0;     // next-hop branches generated (one model forward each)
  std::size_t dead = 0;        // generated queries with zero norm, not expanded
};

struct HopTrace {
  ControllerConfig config;
  std::vector<LayerTrace> layers;
  std::vector<std::string> retrieved;
  bool early_stop = false;
  std::size_t model_forwards = 0;
  std::size_t retrieval_calls = 0;  // per-branch top-K lookups
};

Json to_json(const HopTrace& trace);

struct RetrievalResult {
  std::vector<std::string> retrieved;  // ordered by (layer, score desc, id asc)
  HopTrace trace;
};

// Optional wall-clock split of one retrieval.
struct ControllerTimings {
  double retrieval_seconds = 0.0;
  double model_seconds = 0.0;
};

// Iterative tree retrieval with redundancy pruning and layer-wise top-K
// pruning. `params` may be null only when config.hops == 1. Pure function of
// its inputs; safe to call concurrently on shared store and params.
RetrievalResult multihop_retrieve(const Store& store, const ModelParams* params,
                                  std::span<const double> q0, const ControllerConfig& config,
                                  ControllerTimings* timings = nullptr);

// Single top-K retrieval, ids only.
std::vector<std::string> direct_retrieve(const Store& store, std::span<const double> q0,
                                         std::size_t k);

}  // namespace treehop
