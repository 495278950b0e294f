#include <doctest.h>

#include "support/temp_dir.hpp"
#include "treehop/data.hpp"
#include "treehop/errors.hpp"
#include "treehop/eval.hpp"

using namespace treehop;

namespace {

struct Fixture {
  SynthConfig config;
  SyntheticCorpus corpus;
  Store store{1};

  Fixture() {
    config.dim = 32;
    config.num_entities = 600;
    config.num_relations = 8;
    config.num_chains = 120;
    config.num_distractors = 1000;
    config.seed = 17;
    corpus = generate_synthetic(config);
    store = Store(config.dim);
    for (const auto& ch : corpus.chunks) store.insert(ch);
  }
};

EvalRow row(const std::string& label, double recall, double k, double latency) {
  EvalRow r;
  r.label = label;
  r.recall_at_k = recall;
  r.avg_k = k;
  r.latency_seconds = latency;
  r.query_count = 10;
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("recall examples") {
    CHECK(recall({"a", "b", "c"}, {"a", "b"}) == 1.0);
    CHECK(recall({"x", "y"}, {"a", "b"}) == 0.0);
    CHECK(recall({"a", "x", "y"}, {"a", "b"}) == 0.5);
    CHECK(recall({"a", "a", "a"}, {"a", "b"}) == 0.5);
    CHECK(recall({}, {"a"}) == 0.0);
    CHECK_THROWS_AS(recall({"a"}, {}), DataError);
    CHECK(all_gold_retrieved({"b", "a"}, {"a", "b"}));
    CHECK_FALSE(all_gold_retrieved({"b"}, {"a", "b"}));
  }

  TEST_CASE("recall is monotone in the retrieved set") {
    std::vector<std::string> gold{"g1", "g2", "g3", "g4"};
    std::vector<std::string> pool{"x", "g3", "y", "g1", "z", "g4", "g2"};
    std::vector<std::string> retrieved;
    double prev = 0.0;
    for (const auto& id : pool) {
      retrieved.push_back(id);
      double r = recall(retrieved, gold);
      CHECK(r >= prev);
      prev = r;
    }
    CHECK(prev == 1.0);
  }

  TEST_CASE("single query whose gold is the top-K set") {
    Fixture f;
    auto q = f.corpus.queries[0];
    q.gold_ids = direct_retrieve(f.store, q.query_emb, 5);
    ControllerConfig c;
    c.top_k = 5;
    c.hops = 1;
    auto r = run_eval(f.store, nullptr, {q}, c);
    CHECK(r.recall_at_k == 1.0);
    CHECK(r.hit_rate == 1.0);
    CHECK(r.avg_k == 5.0);
    CHECK(r.query_count == 1);
    CHECK(r.label == "direct");
  }

  TEST_CASE("N = 1 controller equals the direct baseline") {
    Fixture f;
    auto params = init_params(f.config.dim, 1, 0.0);
    ControllerConfig c;
    c.top_k = 5;
    c.hops = 1;
    auto direct = run_eval(f.store, nullptr, f.corpus.queries, c);
    auto tree = run_eval(f.store, &params, f.corpus.queries, c);
    CHECK(direct.recall_at_k == tree.recall_at_k);
    CHECK(direct.hit_rate == tree.hit_rate);
    CHECK(direct.avg_k == tree.avg_k);
    CHECK(tree.avg_model_forwards == 0.0);
    CHECK(tree.label == "treehop-iter1");
  }

  TEST_CASE("avg_k with both prunings stays within N * K") {
    Fixture f;
    auto params = init_params(f.config.dim, 2, 0.0);
    ControllerConfig c;
    c.top_k = 5;
    for (std::size_t n : {2u, 3u}) {
      c.hops = n;
      auto r = run_eval(f.store, &params, f.corpus.queries, c, {1, ""});
      CHECK(r.avg_k <= 5.0 * static_cast<double>(n));
      CHECK(r.avg_k >= 5.0);
      CHECK(r.recall_at_k >= 0.0);
      CHECK(r.recall_at_k <= 1.0);
      CHECK(r.avg_model_forwards > 0.0);
    }
  }

  TEST_CASE("timed sections count retrieval calls only") {
    Fixture f;
    ControllerConfig c;
    c.top_k = 5;
    c.hops = 1;
    std::vector<EvalQuery> qs(f.corpus.queries.begin(), f.corpus.queries.begin() + 7);
    auto r = run_eval(f.store, nullptr, qs, c, {3, "x"});
    CHECK(r.timed_sections == 3 * 7);
    CHECK(r.label == "x");
    CHECK(r.latency_seconds >= 0.0);
    CHECK(r.retrieval_seconds <= r.latency_seconds + 1e-9);
    CHECK_THROWS_AS(run_eval(f.store, nullptr, {}, c), DataError);
    CHECK_THROWS_AS(run_eval(f.store, nullptr, qs, c, {0, ""}), ConfigError);
  }

  TEST_CASE("compare") {
    auto same = compare({row("direct", 0.5, 5, 0.01), row("direct", 0.5, 5, 0.01)});
    for (const auto& j : same.json["rows"]) {
      CHECK(j["delta"]["recall_at_k"] == 0.0);
      CHECK(j["delta"]["avg_k"] == 0.0);
      CHECK(j["delta"]["latency_seconds"] == 0.0);
    }

    auto sorted = compare({row("treehop-iter3", 0.7, 12, 0.03), row("direct", 0.5, 5, 0.01),
                           row("treehop-iter2", 0.6, 8, 0.02)});
    CHECK(sorted.baseline == "treehop-iter3");
    REQUIRE(sorted.rows.size() == 3);
    CHECK(sorted.rows[0].label == "direct");
    CHECK(sorted.rows[1].label == "treehop-iter2");
    CHECK(sorted.rows[2].label == "treehop-iter3");
    CHECK(sorted.json["rows"][0]["delta"]["recall_at_k"].get<double>() == doctest::Approx(-0.2));
    CHECK(sorted.json["rows"][1]["delta"]["avg_k"].get<double>() == doctest::Approx(-4.0));
    CHECK(sorted.json["rows"][2]["delta"]["avg_k"].get<double>() == 0.0);

    auto three = compare({row("a", 0.5, 5, 0.01), row("b", 0.6, 8, 0.02), row("c", 0.7, 12, 0.03)});
    CHECK(three.json["rows"][1]["delta"]["recall_at_k"].get<double>() == doctest::Approx(0.1));
    CHECK(three.json["rows"][2]["delta"]["recall_at_k"].get<double>() == doctest::Approx(0.2));
    CHECK(three.markdown.find("| a |") != std::string::npos);
    CHECK(three.markdown.find("+10.0") != std::string::npos);

    // stable for equal labels
    auto a = row("same", 0.1, 1, 0);
    auto b = row("same", 0.2, 1, 0);
    auto st = compare({a, b});
    CHECK(st.rows[0].recall_at_k == 0.1);
    CHECK(st.rows[1].recall_at_k == 0.2);

    CHECK_THROWS_AS(compare({a}), DataError);
  }

  TEST_CASE("store fingerprint and query JSONL") {
    Fixture f;
    auto fp = store_fingerprint(f.store);
    CHECK(fp["records"] == f.store.size());
    CHECK(fp["dimension"] == 32);
    CHECK(fp["fnv1a64"].get<std::string>().size() == 16);
    CHECK(store_fingerprint(f.store) == fp);

    test_support::TempDir dir;
    write_eval_queries(dir.path() / "q.jsonl", f.corpus.queries);
    auto back = read_eval_queries(dir.path() / "q.jsonl");
    REQUIRE(back.size() == f.corpus.queries.size());
    CHECK(back[3].gold_ids == f.corpus.queries[3].gold_ids);
    CHECK(back[3].query_emb == f.corpus.queries[3].query_emb);

    test_support::write_text(dir.path() / "bad.jsonl",
                             "{\"question_id\": \"q\", \"query_emb\": [1], \"gold_ids\": []}\n");
    CHECK_THROWS_AS(read_eval_queries(dir.path() / "bad.jsonl"), FormatError);
  }
}
