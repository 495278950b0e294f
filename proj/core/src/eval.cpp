#include "treehop/eval.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "treehop/errors.hpp"
#include "treehop/parallel.hpp"

namespace treehop {

Json to_json(const EvalRow& r) {
  return Json{{"label", r.label},
              {"recall_at_k", r.recall_at_k},
              {"hit_rate", r.hit_rate},
              {"avg_k", r.avg_k},
              {"latency_seconds", r.latency_seconds},
              {"retrieval_seconds", r.retrieval_seconds},
              {"model_seconds", r.model_seconds},
              {"avg_model_forwards", r.avg_model_forwards},
              {"query_count", r.query_count},
              {"timed_sections", r.timed_sections},
              {"top_k", r.top_k},
              {"hops", r.hops}};
}

double recall(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold) {
  std::unordered_set<std::string> g(gold.begin(), gold.end());
  if (g.empty()) throw DataError("recall needs a non-empty gold set");
  std::unordered_set<std::string> found;
  for (const auto& id : retrieved)
    if (g.contains(id)) found.insert(id);
  return static_cast<double>(found.size()) / static_cast<double>(g.size());
}

bool all_gold_retrieved(const std::vector<std::string>& retrieved,
                        const std::vector<std::string>& gold) {
  return recall(retrieved, gold) == 1.0;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::string> retrieve_one(const Store& store, const ModelParams* params,
                                      const EvalQuery& q, const ControllerConfig& config,
                                      ControllerTimings* timings, std::size_t* forwards) {
  if (params == nullptr) {
    auto t0 = Clock::now();
    auto ids = direct_retrieve(store, q.query_emb, config.top_k);
    if (timings) timings->retrieval_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    return ids;
  }
  auto r = multihop_retrieve(store, params, q.query_emb, config, timings);
  if (forwards) *forwards += r.trace.model_forwards;
  return std::move(r.retrieved);
}

}  // namespace

EvalRow run_eval(const Store& store, const ModelParams* params,
                 const std::vector<EvalQuery>& queries, const ControllerConfig& config,
                 const EvalOptions& options) {
  config.validate();
  if (queries.empty()) throw DataError("evaluation needs at least one query");
  if (options.timing_runs < 1) throw ConfigError("timing_runs must be >= 1");
  for (const auto& q : queries)
    if (q.gold_ids.empty()) throw DataError("query " + q.question_id + " has no gold ids");

  EvalRow row;
  row.label = !options.label.empty()
                  ? options.label
                  : (params ? "treehop-iter" + std::to_string(config.hops) : "direct");
  row.query_count = queries.size();
  row.top_k = config.top_k;
  row.hops = params ? config.hops : 1;

  // Quality pass, parallel over queries.
  std::vector<double> recalls(queries.size()), hits(queries.size()), sizes(queries.size());
  std::vector<std::size_t> forwards(queries.size(), 0);
  parallel_for(queries.size(), [&](std::size_t i) {
    auto ids = retrieve_one(store, params, queries[i], config, nullptr, &forwards[i]);
    recalls[i] = recall(ids, queries[i].gold_ids);
    hits[i] = recalls[i] == 1.0 ? 1.0 : 0.0;
    sizes[i] = static_cast<double>(ids.size());
  });
  const double n = static_cast<double>(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    row.recall_at_k += recalls[i];
    row.hit_rate += hits[i];
    row.avg_k += sizes[i];
    row.avg_model_forwards += static_cast<double>(forwards[i]);
  }
  row.recall_at_k /= n;
  row.hit_rate /= n;
  row.avg_k /= n;
  row.avg_model_forwards /= n;

  // Timing pass: serial, one clock interval per retrieval call.
  struct Run {
    double total;
    ControllerTimings split;
  };
  std::vector<Run> runs;
  for (std::size_t run = 0; run < options.timing_runs; ++run) {
    Run r{0.0, {}};
    for (const auto& q : queries) {
      auto t0 = Clock::now();
      auto ids = retrieve_one(store, params, q, config, &r.split, nullptr);
      r.total += std::chrono::duration<double>(Clock::now() - t0).count();
      ++row.timed_sections;
    }
    runs.push_back(r);
  }
  std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) { return a.total < b.total; });
  const Run& median = runs[runs.size() / 2];
  row.latency_seconds = median.total / n;
  row.retrieval_seconds = median.split.retrieval_seconds / n;
  row.model_seconds = median.split.model_seconds / n;
  return row;
}

Comparison compare(const std::vector<EvalRow>& rows) {
  if (rows.size() < 2) throw DataError("compare needs at least two rows");
  Comparison c;
  const EvalRow& base = rows.front();
  c.baseline = base.label;
  c.rows = rows;
  std::stable_sort(c.rows.begin(), c.rows.end(),
                   [](const EvalRow& a, const EvalRow& b) { return a.label < b.label; });

  Json out = Json::array();
  std::ostringstream md;
  md << "| retriever | K | hops | Recall@K | hit rate | avg K | latency (s) | dRecall | dK | dLatency |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|\n";
  auto fmt = [](double v, const char* spec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return std::string(buf);
  };
  for (const auto& r : c.rows) {
    const double d_recall = r.recall_at_k - base.recall_at_k;
    const double d_k = r.avg_k - base.avg_k;
    const double d_latency = r.latency_seconds - base.latency_seconds;
    Json j = to_json(r);
    j["delta"] = {{"recall_at_k", d_recall}, {"avg_k", d_k}, {"latency_seconds", d_latency}};
    out.push_back(std::move(j));
    md << "| " << r.label << " | " << r.top_k << " | " << r.hops << " | "
       << fmt(100.0 * r.recall_at_k, "%.1f") << " | " << fmt(100.0 * r.hit_rate, "%.1f") << " | "
       << fmt(r.avg_k, "%.2f") << " | " << fmt(r.latency_seconds, "%.6f") << " | "
       << fmt(100.0 * d_recall, "%+.1f") << " | " << fmt(d_k, "%+.2f") << " | "
       << fmt(d_latency, "%+.6f") << " |\n";
  }
  c.json = Json{{"baseline", c.baseline}, {"rows", std::move(out)}};
  c.markdown = md.str();
  return c;
}

Json store_fingerprint(const Store& store) {
  // FNV-1a over ids and raw embedding bits.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& id = store.id(i);
    mix(id.data(), id.size());
    for (float x : store.embedding(i)) {
      auto bits = std::bit_cast<std::uint32_t>(x);
      mix(&bits, sizeof bits);
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return Json{{"records", store.size()}, {"dimension", store.dim()}, {"fnv1a64", hex}};
}

std::vector<EvalQuery> read_eval_queries(const std::filesystem::path& path) {
  std::vector<EvalQuery> out;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    for (const char* key : {"question_id", "query_emb", "gold_ids"})
      if (!obj.contains(key))
        throw FormatError(path.string() + ": missing field '" + key + "'", line);
    EvalQuery q;
    q.question_id = obj["question_id"].get<std::string>();
    q.query_emb = json_to_vector(obj["query_emb"], "query_emb");
    q.gold_ids = obj["gold_ids"].get<std::vector<std::string>>();
    if (q.gold_ids.empty()) throw FormatError(path.string() + ": empty gold_ids", line);
    out.push_back(std::move(q));
  });
  return out;
}

Json to_json(const EvalQuery& q) {
  return Json{{"question_id", q.question_id},
              {"query_emb", vector_to_json(q.query_emb)},
              {"gold_ids", q.gold_ids}};
}

}  // namespace treehop
