#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "treehop/jsonl.hpp"
#include "treehop/model.hpp"
#include "treehop/multihop.hpp"
#include "treehop/store.hpp"

namespace treehop {

struct EvalQuery {
  std::string question_id;
  Vector query_emb;
  std::vector<std::string> gold_ids;
};

// One row of the retriever comparison table.
struct EvalRow {
  std::string label;
  double recall_at_k = 0.0;  // mean gold-fraction recall
  double hit_rate = 0.0;     // fraction of queries with every gold chunk retrieved
  double avg_k = 0.0;        // mean distinct chunks retrieved
  double latency_seconds = 0.0;    // per query, retrieval call only
  double retrieval_seconds = 0.0;  // per query, inside top-K scans
  double model_seconds = 0.0;      // per query, inside next-query forwards
  double avg_model_forwards = 0.0;
  std::size_t query_count = 0;
  std::size_t timed_sections = 0;  // clock intervals that fed latency_seconds
  std::size_t top_k = 0;
  std::size_t hops = 0;
};

Json to_json(const EvalRow& row);

// |retrieved & gold| / |gold|; duplicates on either side count once.
double recall(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold);
bool all_gold_retrieved(const std::vector<std::string>& retrieved,
                        const std::vector<std::string>& gold);

struct EvalOptions {
  std::size_t timing_runs = 3;  // latency is the median over runs
  std::string label;            // defaults to "direct" / "treehop-iterN"
};

// Without params this evaluates direct top-K retrieval; otherwise the
// multi-hop controller. Recall and avg_k come from an untimed pass; latency
// times only the retrieval call, single-threaded.
EvalRow run_eval(const Store& store, const ModelParams* params,
                 const std::vector<EvalQuery>& queries, const ControllerConfig& config,
                 const EvalOptions& options = {});

struct Comparison {
  std::string baseline;  // label of the first input row
  std::vector<EvalRow> rows;  // stably sorted by label
  Json json;
  std::string markdown;
};

// Deltas of every row against the first input row.
Comparison compare(const std::vector<EvalRow>& rows);

Json store_fingerprint(const Store& store);

std::vector<EvalQuery> read_eval_queries(const std::filesystem::path& path);
Json to_json(const EvalQuery& query);

}  // namespace treehop
