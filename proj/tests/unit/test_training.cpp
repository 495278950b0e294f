#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "../support/temp_dir.hpp"
#include "treehop/data.hpp"
#include "treehop/errors.hpp"
#include "treehop/gradcheck.hpp"
#include "treehop/training.hpp"

using namespace treehop;

namespace {

Store orthonormal_store(std::size_t d) {
  Store s(d);
  for (std::size_t i = 0; i < d; ++i) {
    Embedding e(d, 0.0f);
    e[i] = 1.0f;
    s.insert({"b" + std::to_string(i), std::nullopt, std::nullopt, e});
  }
  return s;
}

Store random_store(std::size_t n, std::size_t d, std::uint64_t seed) {
  Store s(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (std::size_t i = 0; i < n; ++i) {
    Embedding e(d);
    for (auto& x : e) x = g(rng);
    s.insert({"c" + std::to_string(i), std::nullopt, std::nullopt, e});
  }
  return s;
}

Vector random_vec(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(d);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("InfoNCE closed forms") {
    std::vector<double> five(5, 0.3);
    CHECK(std::abs(info_nce_loss(0.3, five, 0.15).loss - 1.79175946922805500081) <= 1e-9);
    CHECK(std::abs(info_nce_loss(-0.8, std::vector<double>(5, -0.8), 2.0).loss - std::log(6.0)) <= 1e-9);

    std::vector<double> anti(5, -1.0);
    const double expected = 8.09795117306794640623692280177e-6;  // ln(1 + 5 e^{-2/0.15})
    CHECK(std::abs(info_nce_loss(1.0, anti, 0.15).loss - expected) <= 1e-15);

    auto none = info_nce_loss(0.7, {}, 0.15);
    CHECK(none.loss == 0.0);
    CHECK(none.grad_positive == 0.0);

    CHECK_THROWS_AS(info_nce_loss(0.1, five, 0.0), ConfigError);
    CHECK_THROWS_AS(info_nce_loss(0.1, five, -1.0), ConfigError);
  }

  TEST_CASE("InfoNCE invariants") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
      std::size_t n = 1 + trial % 8;
      double tau = 0.05 + 0.5 * (trial % 5);
      std::vector<double> negs(n);
      for (auto& x : negs) x = u(rng);
      double pos = u(rng);
      auto base = info_nce_loss(pos, negs, tau);
      CHECK(base.loss >= 0.0);
      const double eps = 1e-3;
      CHECK(info_nce_loss(pos + eps, negs, tau).loss < base.loss);
      for (std::size_t j = 0; j < n; ++j) {
        auto up = negs;
        up[j] += eps;
        CHECK(info_nce_loss(pos, up, tau).loss >= base.loss);
      }
      double s = u(rng);
      CHECK(std::abs(info_nce_loss(s, std::vector<double>(n, s), tau).loss - std::log(1.0 + n)) <= 1e-12);
    }
  }

  TEST_CASE("InfoNCE gradients match central differences") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double h = 1e-6;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> negs(5);
      for (auto& x : negs) x = u(rng);
      double pos = u(rng);
      auto r = info_nce_loss(pos, negs, 0.15);
      double num = (info_nce_loss(pos + h, negs, 0.15).loss - info_nce_loss(pos - h, negs, 0.15).loss) / (2 * h);
      CHECK(relative_error(r.grad_positive, num, 1e-3) < 1e-5);
      for (std::size_t j = 0; j < 5; ++j) {
        auto a = negs, b = negs;
        a[j] += h;
        b[j] -= h;
        num = (info_nce_loss(pos, a, 0.15).loss - info_nce_loss(pos, b, 0.15).loss) / (2 * h);
        CHECK(relative_error(r.grad_negatives[j], num, 1e-3) < 1e-5);
      }
    }
  }

  TEST_CASE("InfoNCE is stable for very large logits") {
    const double tau = 0.15;
    const double scale = 1e3 / tau;
    std::vector<double> negs{0.9 * scale, -0.4 * scale, 0.99 * scale};
    auto r = info_nce_loss(1.0 * scale, negs, tau);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss >= 0.0);
    auto flipped = info_nce_loss(-1.0 * scale, negs, tau);
    CHECK(std::isfinite(flipped.loss));
    CHECK(flipped.loss == doctest::Approx((0.99 * scale + 1.0 * scale) / tau).epsilon(1e-12));
  }

  TEST_CASE("example_loss with perfect alignment meets the bound") {
    Store s = orthonormal_store(8);
    TrainConfig cfg;
    cfg.dropout_rate = 0.0;
    // zero params: next = q - c = e_0, positive b0, negatives orthogonal
    TrainExample ex{Vector{1, 0.5, 0, 0, 0, 0, 0, 0}, Vector{0, 0.5, 0, 0, 0, 0, 0, 0}, "b0",
                    {"b1", "b2", "b3", "b4", "b5"}, std::nullopt};
    Rng rng(0);
    auto r = example_loss(zero_params(8, 0.0), ex, s, cfg, rng);
    const double bound = 0.00634300952041306261876927253229;  // ln(1 + 5 e^{-1/0.15})
    CHECK(r.loss <= bound * (1 + 1e-12));
    CHECK(r.loss == doctest::Approx(bound).epsilon(1e-12));
  }

  TEST_CASE("example_loss reports unresolvable ids") {
    Store s = orthonormal_store(4);
    TrainConfig cfg;
    TrainExample ex{Vector{1, 0, 0, 0}, Vector{0, 1, 0, 0}, "nope", {"b1"}, std::nullopt};
    Rng rng(0);
    try {
      example_loss(zero_params(4), ex, s, cfg, rng);
      FAIL("expected UnknownIdError");
    } catch (const UnknownIdError& e) {
      CHECK(e.id() == "nope");
    }
  }

  TEST_CASE("example_loss gradient matches central differences at d = 4") {
    Store s = random_store(30, 4, 5);
    TrainConfig cfg;
    cfg.dropout_rate = 0.2;
    std::mt19937_64 g(6);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      ModelParams p = init_params(4, 100 + trial, cfg.dropout_rate);
      std::normal_distribution<double> n(0.0, 0.3);
      for (Vector* b : {&p.weights.b_query, &p.weights.b_key, &p.weights.b_value})
        for (double& x : *b) x = n(g);
      TrainExample ex{random_vec(4, g), random_vec(4, g), "c0", {"c1", "c2", "c3", "c4", "c5"}, std::nullopt};
      // the same rng seed reproduces the same dropout mask on every evaluation
      auto loss_at = [&](const ModelParams& q) {
        Rng rng(trial);
        return example_loss(q, ex, s, cfg, rng).loss;
      };
      Rng rng(trial);
      auto analytic = example_loss(p, ex, s, cfg, rng);
      auto ps = p.weights.tensors();
      auto gs = analytic.grads.tensors();
      const double h = 1e-4;
      for (std::size_t k = 0; k < ps.size(); ++k) {
        for (std::size_t i = 0; i < ps[k]->size(); ++i) {
          ModelParams plus = p, minus = p;
          (*plus.weights.tensors()[k])[i] += h;
          (*minus.weights.tensors()[k])[i] -= h;
          double num = (loss_at(plus) - loss_at(minus)) / (2 * h);
          worst = std::max(worst, relative_error((*gs[k])[i], num));
        }
      }
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("example_loss is deterministic for a fixed seed without dropout") {
    Store s = random_store(20, 6, 8);
    TrainConfig cfg;
    cfg.dropout_rate = 0.0;
    std::mt19937_64 g(9);
    TrainExample ex{random_vec(6, g), random_vec(6, g), "c3", {"c1", "c2", "c4", "c5", "c6"}, std::nullopt};
    auto p = init_params(6, 1, 0.0);
    Rng a(5), b(5);
    auto ra = example_loss(p, ex, s, cfg, a);
    auto rb = example_loss(p, ex, s, cfg, b);
    CHECK(ra.loss == rb.loss);
    CHECK(ra.grads == rb.grads);
  }

  TEST_CASE("sample_negatives") {
    Store six = random_store(6, 3, 1);
    Rng rng(3);
    auto forced = sample_negatives(six, {"c2"}, 5, rng);
    std::sort(forced.begin(), forced.end());
    CHECK(forced == std::vector<std::string>{"c0", "c1", "c3", "c4", "c5"});
    CHECK(sample_negatives(six, {"c2"}, 0, rng).empty());
    CHECK_THROWS_AS(sample_negatives(six, {"c2"}, 6, rng), DataError);

    Rng r1(11), r2(11);
    CHECK(sample_negatives(six, {}, 3, r1) == sample_negatives(six, {}, 3, r2));

    Store big = random_store(100, 3, 2);
    Rng r3(12);
    for (int i = 0; i < 50; ++i) {
      auto ids = sample_negatives(big, {"c0", "c1"}, 10, r3);
      std::set<std::string> uniq(ids.begin(), ids.end());
      CHECK(uniq.size() == 10);
      CHECK_FALSE(uniq.contains("c0"));
      CHECK_FALSE(uniq.contains("c1"));
    }
  }

  TEST_CASE("sample_negatives is uniform") {
    Store big = random_store(100, 3, 2);
    Rng rng(2024);
    std::map<std::string, int> freq;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++freq[sample_negatives(big, {}, 1, rng).front()];
    CHECK(freq.size() == 100);
    const double expected = draws / 100.0;
    const double sigma = std::sqrt(draws * 0.01 * 0.99);
    double chi2 = 0.0;
    for (const auto& [id, count] : freq) {
      CHECK(std::abs(count - expected) <= 3 * sigma);
      chi2 += (count - expected) * (count - expected) / expected;
    }
    CHECK(chi2 < 148.23);  // chi-square 99.9th percentile, 99 dof
  }

  TEST_CASE("adamw_step") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.learning_rate = 1e-3;
    auto p = init_params(3, 4, 0.0);
    auto state = AdamWState::zeros(3);
    auto before = p;
    adamw_step(p, GateTensors::zeros(3), state, cfg);
    CHECK(p == before);
    CHECK(state.step == 1);

    // t = 1: update is -lr * g / (|g| + eps)
    auto q = init_params(3, 5, 0.0);
    auto fresh = AdamWState::zeros(3);
    auto g = GateTensors::zeros(3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (Vector* v : g.tensors())
      for (double& x : *v) x = n(rng);
    auto q0 = q;
    adamw_step(q, g, fresh, cfg);
    auto qs = q.weights.tensors();
    auto q0s = q0.weights.tensors();
    auto gs = g.tensors();
    for (std::size_t k = 0; k < qs.size(); ++k)
      for (std::size_t i = 0; i < qs[k]->size(); ++i) {
        double gi = (*gs[k])[i];
        double want = (*q0s[k])[i] - cfg.learning_rate * gi / (std::abs(gi) + cfg.epsilon);
        CHECK(std::abs((*qs[k])[i] - want) <= 1e-12);
      }

    // decoupled decay with zero gradient shrinks parameters by (1 - lr * wd)
    TrainConfig decay = cfg;
    decay.weight_decay = 0.5;
    auto r = init_params(3, 6, 0.0);
    auto r0 = r;
    auto st = AdamWState::zeros(3);
    adamw_step(r, GateTensors::zeros(3), st, decay);
    for (std::size_t i = 0; i < r.weights.w_key.size(); ++i)
      CHECK(r.weights.w_key[i] == doctest::Approx(r0.weights.w_key[i] * (1 - 1e-3 * 0.5)));
  }

  TEST_CASE("adamw_step aborts on NaN without touching state") {
    TrainConfig cfg;
    auto p = init_params(2, 1, 0.0);
    auto state = AdamWState::zeros(2);
    auto g = GateTensors::zeros(2);
    g.b_key[1] = NAN;
    auto before = p;
    CHECK_THROWS_AS(adamw_step(p, g, state, cfg), NumericError);
    CHECK(p == before);
    CHECK(state.step == 0);
  }

  TEST_CASE("adamw converges on a quadratic bowl") {
    // f(w) = |w|^2 over every parameter; grad = 2w
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.0;
    auto p = init_params(4, 7, 0.0);
    for (Vector* v : p.weights.tensors())
      for (double& x : *v) x += 0.5;
    auto state = AdamWState::zeros(4);
    auto norm = [](const ModelParams& m) {
      double s = 0;
      for (const Vector* v : m.weights.tensors())
        for (double x : *v) s += x * x;
      return std::sqrt(s);
    };
    std::vector<double> norms{norm(p)};
    for (int step = 0; step < 100; ++step) {
      auto g = p.weights;
      for (Vector* v : g.tensors())
        for (double& x : *v) x *= 2.0;
      adamw_step(p, g, state, cfg);
      norms.push_back(norm(p));
    }
    for (std::size_t i = 5; i < norms.size(); ++i) CHECK(norms[i] < norms[i - 1]);
    CHECK(norms.back() < 0.5 * norms.front());
  }

  TEST_CASE("train: zero epochs, determinism and config validation") {
    SynthConfig sc;
    sc.dim = 16;
    sc.num_entities = 120;
    sc.num_relations = 4;
    sc.num_chains = 40;
    sc.num_distractors = 100;
    sc.seed = 3;
    auto corpus = generate_synthetic(sc);
    Store store(sc.dim);
    for (auto& ch : corpus.chunks) store.insert(ch);
    auto examples = build_train_examples(corpus.records, store, 5, 1);

    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 4;
    auto none = train(examples, store, cfg);
    CHECK(none.report.epoch_losses.empty());
    CHECK(none.params == init_params(16, 4, cfg.dropout_rate));

    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-2;
    auto a = train(examples, store, cfg);
    auto b = train(examples, store, cfg);
    CHECK(a.report.epoch_losses.size() == 3);
    CHECK(a.report.epoch_losses == b.report.epoch_losses);
    CHECK(a.params == b.params);
    CHECK(a.report.steps == 3 * 5);

    TrainConfig bad = cfg;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(train(examples, store, bad), ConfigError);
    CHECK_THROWS_AS(train({}, store, cfg), DataError);
  }

  TEST_CASE("train lowers the loss monotonically on the synthetic task") {
    SynthConfig sc;
    sc.dim = 32;
    sc.num_entities = 600;
    sc.num_relations = 8;
    sc.num_chains = 200;
    sc.num_distractors = 800;
    sc.noise_sigma = 0.05;
    sc.seed = 5;
    auto corpus = generate_synthetic(sc);
    Store store(sc.dim);
    for (auto& ch : corpus.chunks) store.insert(ch);
    auto examples = build_train_examples(corpus.records, store, 5, 2);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1e-2;
    cfg.zero_value_init = true;
    cfg.dropout_rate = 0.0;
    cfg.seed = 6;
    auto r = train(examples, store, cfg);
    REQUIRE(r.report.epoch_losses.size() == 5);
    for (std::size_t i = 1; i < 5; ++i) CHECK(r.report.epoch_losses[i] < r.report.epoch_losses[i - 1]);
  }

  TEST_CASE("training JSONL samples missing negatives") {
    test_support::TempDir dir;
    Store s = random_store(10, 2, 1);
    test_support::write_text(dir.path() / "pairs.jsonl",
                             "{\"query_emb\": [1, 0], \"context_emb\": [0, 1], \"positive_id\": \"c1\", \"context_id\": \"c2\"}\n"
                             "{\"query_emb\": [1, 1], \"context_emb\": [0, 1], \"positive_id\": \"c3\", \"negative_ids\": [\"c4\"]}\n");
    auto ex = read_train_examples(dir.path() / "pairs.jsonl", s, 5, 9);
    REQUIRE(ex.size() == 2);
    CHECK(ex[0].negative_ids.size() == 5);
    for (const auto& id : ex[0].negative_ids) {
      CHECK(id != "c1");
      CHECK(id != "c2");
    }
    CHECK(ex[1].negative_ids == std::vector<std::string>{"c4"});
    CHECK(read_train_examples(dir.path() / "pairs.jsonl", s, 5, 9)[0].negative_ids == ex[0].negative_ids);

    test_support::write_text(dir.path() / "bad.jsonl",
                             "{\"query_emb\": [1, 0], \"context_emb\": [0, 1], \"positive_id\": \"c1\", \"negative_ids\": [\"c1\"]}\n");
    CHECK_THROWS_AS(read_train_examples(dir.path() / "bad.jsonl", s, 5, 9), DataError);
    test_support::write_text(dir.path() / "unknown.jsonl",
                             "{\"query_emb\": [1, 0], \"context_emb\": [0, 1], \"positive_id\": \"zz\", \"negative_ids\": []}\n");
    CHECK_THROWS_AS(read_train_examples(dir.path() / "unknown.jsonl", s, 5, 9), UnknownIdError);
  }
}
