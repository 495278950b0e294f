#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "json_config.hpp"
#include "treehop/data.hpp"
#include "treehop/errors.hpp"
#include "treehop/eval.hpp"
#include "treehop/gradcheck.hpp"
#include "treehop/jsonl.hpp"
#include "treehop/model.hpp"
#include "treehop/multihop.hpp"
#include "treehop/parallel.hpp"
#include "treehop/store.hpp"
#include "treehop/training.hpp"
#include "treehop/version.hpp"

namespace fs = std::filesystem;
using treehop::Json;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool json = false;
  std::string embedding_model = "unspecified";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_flag("--json", c.json, "Print machine-readable JSON on stdout");
  sub->add_option("--embedding-model", c.embedding_model,
                  "Name of the external model that produced the embeddings (recorded in the manifest)")
      ->capture_default_str();
}

// Written next to the primary output of every run. Contains no timestamps,
// so identical invocations produce identical manifests.
struct Manifest {
  std::string subcommand;
  std::string config_path;
  const Common* common = nullptr;
  Json inputs = Json::object();
  Json outputs = Json::object();
  Json effective = Json::object();

  void write(const fs::path& path) const {
    Json j{{"subcommand", subcommand},
           {"tool_version", treehop::version()},
           {"config_path", config_path.empty() ? Json(nullptr) : Json(config_path)},
           {"seed", common->seed},
           {"embedding_model", common->embedding_model},
           {"inputs", inputs},
           {"outputs", outputs},
           {"effective_config", effective}};
    treehop::write_json(path, j);
  }
};

// model.bin -> model.manifest.json, kept.jsonl -> kept.report.json
fs::path sibling(const fs::path& output, const char* suffix) {
  fs::path p = output;
  return p.replace_extension(suffix);
}

fs::path manifest_for(const fs::path& output) { return sibling(output, ".manifest.json"); }

void emit(const Common& c, const Json& j, const std::string& text) {
  if (c.json)
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
}

treehop::Vector read_query_embedding(const std::string& source) {
  Json j;
  try {
    if (source == "-") {
      j = Json::parse(std::string(std::istreambuf_iterator<char>(std::cin), {}));
    } else {
      j = treehop::read_json(source);
    }
  } catch (const Json::exception& e) {
    throw treehop::FormatError(source + ": invalid JSON: " + e.what(), 0);
  }
  if (j.is_object() && j.contains("query_emb")) j = j["query_emb"];
  return treehop::json_to_vector(j, "query_emb");
}

int exit_code(treehop::ErrorKind kind) {
  switch (kind) {
    case treehop::ErrorKind::kUsage:
    case treehop::ErrorKind::kConfig: return 1;
    case treehop::ErrorKind::kData:
    case treehop::ErrorKind::kFormat: return 2;
    case treehop::ErrorKind::kNumeric: return 3;
  }
  return 2;
}

const char* kind_name(treehop::ErrorKind kind) {
  switch (kind) {
    case treehop::ErrorKind::kUsage: return "usage";
    case treehop::ErrorKind::kConfig: return "config";
    case treehop::ErrorKind::kData: return "data";
    case treehop::ErrorKind::kFormat: return "format";
    case treehop::ErrorKind::kNumeric: return "numeric";
  }
  return "data";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TreeHop: embedding-level multi-hop retrieval", "treehop"};
  app.set_version_flag("--version", treehop::version());
  app.config_formatter(std::make_shared<JsonConfig>());
  CLI::Option* config_opt = app.set_config("--config", "", "JSON config file; explicit flags take precedence");
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  std::string config_path;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a binary store from chunk JSONL");
  std::string ingest_in, ingest_out;
  bool no_normalize = false;
  ingest->add_option("--input", ingest_in, "Chunk JSONL")->required();
  ingest->add_option("--output", ingest_out, "Binary store path")->required();
  ingest->add_flag("--no-normalize", no_normalize, "Keep embeddings as given instead of L2-normalizing");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic multi-hop corpus");
  treehop::SynthConfig sc;
  std::string synth_dir;
  synth->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth->add_option("--dim", sc.dim)->capture_default_str();
  synth->add_option("--entities", sc.num_entities)->capture_default_str();
  synth->add_option("--relations", sc.num_relations)->capture_default_str();
  synth->add_option("--chains", sc.num_chains)->capture_default_str();
  synth->add_option("--distractors", sc.num_distractors)->capture_default_str();
  synth->add_option("--noise", sc.noise_sigma, "Noise standard deviation")->capture_default_str();

  // curate
  auto* curate = app.add_subcommand("curate", "Filter decomposition records by type and integrity");
  std::string curate_in, curate_out, curate_store;
  curate->add_option("--records", curate_in, "Decomposition record JSONL")->required();
  curate->add_option("--output", curate_out, "Kept records JSONL")->required();
  curate->add_option("--store", curate_store, "Store used to resolve gold chunk ids");

  // build-pairs
  auto* pairs = app.add_subcommand("build-pairs", "Emit teacher-forced training pairs");
  std::string pairs_in, pairs_store, pairs_out;
  std::size_t pairs_negatives = 5;
  pairs->add_option("--records", pairs_in, "Curated record JSONL")->required();
  pairs->add_option("--store", pairs_store, "Binary store")->required();
  pairs->add_option("--output", pairs_out, "Training pair JSONL")->required();
  pairs->add_option("--negatives", pairs_negatives)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train the update gate with InfoNCE and AdamW");
  treehop::TrainConfig tc;
  std::string train_pairs, train_store, train_out, train_init;
  train->add_option("--pairs", train_pairs, "Training pair JSONL")->required();
  train->add_option("--store", train_store, "Binary store")->required();
  train->add_option("--output", train_out, "Checkpoint path")->required();
  train->add_option("--init", train_init, "Start from this checkpoint");
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.learning_rate)->capture_default_str();
  train->add_option("--temperature", tc.temperature)->capture_default_str();
  train->add_option("--negatives", tc.num_negatives)->capture_default_str();
  train->add_option("--dropout", tc.dropout_rate)->capture_default_str();
  train->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  train->add_flag("--zero-value-init", tc.zero_value_init, "Initialise the value path to zero (model starts as q - c)");

  // retrieve
  auto* retrieve = app.add_subcommand("retrieve", "Multi-hop retrieval for one query embedding");
  treehop::ControllerConfig rc;
  std::string ret_store, ret_model, ret_query, ret_trace = "trace.json";
  bool no_redundancy = false, no_layerwise = false;
  retrieve->add_option("--store", ret_store, "Binary store")->required();
  retrieve->add_option("--model", ret_model, "Checkpoint (required when --hops > 1)");
  retrieve->add_option("--query-emb", ret_query, "JSON vector file, or - for stdin")->required();
  retrieve->add_option("--k", rc.top_k, "Top-K per retrieval")->capture_default_str();
  retrieve->add_option("--hops", rc.hops, "Total hops N")->capture_default_str();
  retrieve->add_flag("--no-redundancy-pruning", no_redundancy);
  retrieve->add_flag("--no-layerwise-pruning", no_layerwise);
  retrieve->add_flag("--normalize-next-query", rc.normalize_next_query);
  retrieve->add_option("--trace", ret_trace, "Where to write the hop trace")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Compare direct retrieval with TreeHop");
  std::string eval_store, eval_queries, eval_model, eval_out = "eval.json";
  std::size_t eval_k = 5, eval_runs = 3;
  std::vector<std::size_t> eval_hops{2, 3};
  bool eval_untrained = false;
  eval->add_option("--store", eval_store, "Binary store")->required();
  eval->add_option("--queries", eval_queries, "Eval query JSONL")->required();
  eval->add_option("--model", eval_model, "Trained checkpoint");
  eval->add_flag("--untrained", eval_untrained, "Also evaluate the q - c controller");
  eval->add_option("--k", eval_k)->capture_default_str();
  eval->add_option("--hops", eval_hops, "Hop counts for the TreeHop rows")->capture_default_str();
  eval->add_option("--timing-runs", eval_runs)->capture_default_str();
  eval->add_option("--output", eval_out, "Report path")->capture_default_str();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  treehop::GradCheckOptions go;
  std::string grad_out;
  grad->add_option("--dim", go.dims, "Dimensions to check")->capture_default_str();
  grad->add_option("--trials", go.trials, "Random instances per dimension")->capture_default_str();
  grad->add_option("--step", go.step)->capture_default_str();
  grad->add_option("--tolerance", go.tolerance)->capture_default_str();
  grad->add_option("--output", grad_out, "Optional report path");

  for (CLI::App* sub : {ingest, synth, curate, pairs, train, retrieve, eval, grad}) {
    add_common(sub, common);
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (config_opt->count() > 0) config_path = config_opt->as<std::string>();

  Manifest m;
  m.config_path = config_path;
  m.common = &common;

  try {
    if (*ingest) {
      m.subcommand = "ingest";
      treehop::Store store = treehop::ingest_jsonl(ingest_in, {!no_normalize});
      save_store(store, ingest_out);
      m.inputs = {{"chunks", ingest_in}};
      m.outputs = {{"store", ingest_out}, {"sidecar", treehop::sidecar_path(ingest_out).string()}};
      m.effective = {{"normalize_on_ingest", !no_normalize}};
      m.write(manifest_for(ingest_out));
      emit(common, {{"records", store.size()}, {"dim", store.dim()}, {"output", ingest_out}},
           "ingested " + std::to_string(store.size()) + " chunks (d=" + std::to_string(store.dim()) +
               ") into " + ingest_out + "\n");
    } else if (*synth) {
      m.subcommand = "synth";
      sc.seed = common.seed;
      auto corpus = generate_synthetic(sc);
      fs::path dir(synth_dir);
      fs::create_directories(dir);
      write_chunks(dir / "chunks.jsonl", corpus.chunks);
      write_records(dir / "records.jsonl", corpus.records);
      write_eval_queries(dir / "queries.jsonl", corpus.queries);
      treehop::Store store = treehop::ingest_jsonl(dir / "chunks.jsonl");
      save_store(store, dir / "store.bin");
      m.outputs = {{"chunks", (dir / "chunks.jsonl").string()},
                   {"records", (dir / "records.jsonl").string()},
                   {"queries", (dir / "queries.jsonl").string()},
                   {"store", (dir / "store.bin").string()}};
      m.effective = to_json(sc);
      m.write(dir / "manifest.json");
      emit(common,
           {{"chunks", corpus.chunks.size()}, {"records", corpus.records.size()}, {"out_dir", synth_dir}},
           "wrote " + std::to_string(corpus.chunks.size()) + " chunks and " +
               std::to_string(corpus.records.size()) + " questions to " + synth_dir + "\n");
    } else if (*curate) {
      m.subcommand = "curate";
      auto records = treehop::read_records(curate_in);
      std::optional<treehop::Store> store;
      if (!curate_store.empty()) store = treehop::load_store(curate_store);
      auto result = treehop::curate(records, store ? &*store : nullptr);
      write_records(curate_out, result.kept);
      fs::path report = sibling(curate_out, ".report.json");
      Json rep = to_json(result.report);
      treehop::write_json(report, rep);
      m.inputs = {{"records", curate_in}, {"store", curate_store.empty() ? Json(nullptr) : Json(curate_store)}};
      m.outputs = {{"kept", curate_out}, {"report", report.string()}};
      m.write(manifest_for(curate_out));
      emit(common, rep,
           "kept " + std::to_string(result.report.kept) + " of " + std::to_string(result.report.input) +
               " records (" + std::to_string(result.report.kept_pairs) + " hop pairs)\n");
    } else if (*pairs) {
      m.subcommand = "build-pairs";
      auto records = treehop::read_records(pairs_in);
      treehop::Store store = treehop::load_store(pairs_store);
      auto examples = build_train_examples(records, store, pairs_negatives, common.seed);
      std::vector<Json> rows;
      for (const auto& ex : examples) rows.push_back(to_json(ex));
      treehop::write_jsonl(pairs_out, rows);
      m.inputs = {{"records", pairs_in}, {"store", pairs_store}};
      m.outputs = {{"pairs", pairs_out}};
      m.effective = {{"negatives", pairs_negatives}};
      m.write(manifest_for(pairs_out));
      emit(common, {{"examples", examples.size()}, {"output", pairs_out}},
           "wrote " + std::to_string(examples.size()) + " training pairs to " + pairs_out + "\n");
    } else if (*train) {
      m.subcommand = "train";
      tc.seed = common.seed;
      treehop::Store store = treehop::load_store(train_store);
      auto examples = treehop::read_train_examples(train_pairs, store, tc.num_negatives, tc.seed);
      std::optional<treehop::ModelParams> init;
      if (!train_init.empty()) init = treehop::load_params(train_init, store.dim());
      auto result = treehop::train(examples, store, tc, init);
      save_params(result.params, train_out);
      result.report.checkpoint_path = train_out;
      fs::path report = sibling(train_out, ".report.json");
      Json rep = to_json(result.report);
      treehop::write_json(report, rep);
      m.inputs = {{"pairs", train_pairs}, {"store", train_store},
                  {"init", train_init.empty() ? Json(nullptr) : Json(train_init)}};
      m.outputs = {{"checkpoint", train_out}, {"report", report.string()}};
      m.effective = to_json(tc);
      m.write(manifest_for(train_out));
      std::string text;
      for (std::size_t e = 0; e < result.report.epoch_losses.size(); ++e)
        text += "epoch " + std::to_string(e + 1) + " loss " + std::to_string(result.report.epoch_losses[e]) + "\n";
      emit(common, rep, text + "checkpoint written to " + train_out + "\n");
    } else if (*retrieve) {
      m.subcommand = "retrieve";
      rc.redundancy_pruning = !no_redundancy;
      rc.layerwise_top_pruning = !no_layerwise;
      rc.validate();
      treehop::Store store = treehop::load_store(ret_store);
      std::optional<treehop::ModelParams> params;
      if (!ret_model.empty()) {
        params = treehop::load_params(ret_model, store.dim());
      } else if (rc.hops > 1) {
        throw treehop::Error(treehop::ErrorKind::kUsage, "--model is required when --hops > 1");
      }
      auto q = read_query_embedding(ret_query);
      auto result = multihop_retrieve(store, params ? &*params : nullptr, q, rc);
      treehop::write_json(ret_trace, to_json(result.trace));
      m.inputs = {{"store", ret_store}, {"model", ret_model.empty() ? Json(nullptr) : Json(ret_model)},
                  {"query_emb", ret_query}};
      m.outputs = {{"trace", ret_trace}};
      m.effective = to_json(rc);
      m.write(manifest_for(ret_trace));
      std::string text;
      for (const auto& id : result.retrieved) text += id + "\n";
      emit(common, {{"retrieved", result.retrieved}, {"trace", ret_trace}}, text);
    } else if (*eval) {
      m.subcommand = "eval";
      treehop::Store store = treehop::load_store(eval_store);
      auto queries = treehop::read_eval_queries(eval_queries);
      std::optional<treehop::ModelParams> params;
      if (!eval_model.empty()) params = treehop::load_params(eval_model, store.dim());
      treehop::ControllerConfig c;
      c.top_k = eval_k;
      c.hops = 1;
      std::vector<treehop::EvalRow> rows{run_eval(store, nullptr, queries, c, {eval_runs, "direct"})};
      auto zero = treehop::zero_params(store.dim(), 0.0);
      for (std::size_t n : eval_hops) {
        c.hops = n;
        if (params) rows.push_back(run_eval(store, &*params, queries, c, {eval_runs, "treehop-iter" + std::to_string(n)}));
        if (eval_untrained) rows.push_back(run_eval(store, &zero, queries, c, {eval_runs, "untrained-iter" + std::to_string(n)}));
      }
      if (rows.size() < 2)
        throw treehop::Error(treehop::ErrorKind::kUsage, "eval needs --model and/or --untrained");
      auto cmp = treehop::compare(rows);
      Json report{{"tool_version", treehop::version()},
                  {"store", store_fingerprint(store)},
                  {"queries", queries.size()},
                  {"config", {{"top_k", eval_k}, {"hops", eval_hops}, {"timing_runs", eval_runs},
                              {"threads", treehop::thread_count()}}},
                  {"baseline", cmp.baseline},
                  {"rows", cmp.json["rows"]}};
      treehop::write_json(eval_out, report);
      m.inputs = {{"store", eval_store}, {"queries", eval_queries},
                  {"model", eval_model.empty() ? Json(nullptr) : Json(eval_model)}};
      m.outputs = {{"report", eval_out}};
      m.effective = report["config"];
      m.write(manifest_for(eval_out));
      emit(common, report, cmp.markdown);
    } else if (*grad) {
      m.subcommand = "gradcheck";
      go.seed = common.seed;
      auto rep = treehop::run_gradcheck(go);
      Json j = to_json(rep);
      if (!grad_out.empty()) {
        treehop::write_json(grad_out, j);
        m.outputs = {{"report", grad_out}};
        m.effective = {{"dims", go.dims}, {"trials", go.trials}, {"step", go.step}, {"tolerance", go.tolerance}};
        m.write(manifest_for(grad_out));
      }
      char buf[128];
      std::snprintf(buf, sizeof buf, "max relative error %.3e over %zu instances (%s)\n",
                    rep.max_relative_error, rep.instances, rep.passed ? "pass" : "FAIL");
      emit(common, j, buf);
      return rep.passed ? 0 : 3;
    }
  } catch (const treehop::Error& e) {
    std::cerr << "treehop " << m.subcommand << ": " << e.what() << '\n';
    if (common.json) std::cout << Json{{"error", {{"kind", kind_name(e.kind())}, {"message", e.what()}}}}.dump(2) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "treehop " << m.subcommand << ": " << e.what() << '\n';
    if (common.json) std::cout << Json{{"error", {{"kind", "data"}, {"message", e.what()}}}}.dump(2) << '\n';
    return 2;
  }
  return 0;
}
