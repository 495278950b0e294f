#include "treehop/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "treehop/errors.hpp"
#include "treehop/parallel.hpp"

namespace treehop {

void TrainConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("temperature must be > 0");
  if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("AdamW betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
}

Json to_json(const TrainConfig& c) {
  return Json{{"temperature", c.temperature},   {"num_negatives", c.num_negatives},
              {"batch_size", c.batch_size},     {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},               {"beta2", c.beta2},
              {"epsilon", c.epsilon},           {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},             {"seed", c.seed},
              {"dropout_rate", c.dropout_rate}, {"zero_value_init", c.zero_value_init}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  take("temperature", c.temperature);
  take("num_negatives", c.num_negatives);
  take("batch_size", c.batch_size);
  take("learning_rate", c.learning_rate);
  take("beta1", c.beta1);
  take("beta2", c.beta2);
  take("epsilon", c.epsilon);
  take("weight_decay", c.weight_decay);
  take("epochs", c.epochs);
  take("seed", c.seed);
  take("dropout_rate", c.dropout_rate);
  take("zero_value_init", c.zero_value_init);
  return c;
}

InfoNceResult info_nce_loss(double positive_sim, std::span<const double> negative_sims,
                            double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!std::isfinite(positive_sim)) throw NumericError("non-finite positive similarity");
  for (double s : negative_sims)
    if (!std::isfinite(s)) throw NumericError("non-finite negative similarity");

  InfoNceResult r;
  r.grad_negatives.assign(negative_sims.size(), 0.0);
  if (negative_sims.empty()) return r;

  double shift = positive_sim / temperature;
  for (double s : negative_sims) shift = std::max(shift, s / temperature);
  double pos_term = std::exp(positive_sim / temperature - shift);
  double z = pos_term;
  for (double s : negative_sims) z += std::exp(s / temperature - shift);

  r.loss = std::log(z) + shift - positive_sim / temperature;
  r.grad_positive = (pos_term / z - 1.0) / temperature;
  for (std::size_t j = 0; j < negative_sims.size(); ++j)
    r.grad_negatives[j] = std::exp(negative_sims[j] / temperature - shift) / z / temperature;
  return r;
}

namespace {

struct CosineGrad {
  double value;
  Vector grad;  // d cos / d y
};

// Cosine between y and stored row i, with its gradient in y. Matches
// Store::score for the value.
CosineGrad cosine_with_grad(std::span<const double> y, double y_norm, const Store& store,
                            std::size_t i) {
  auto x = store.embedding(i);
  const double x_norm = store.norm(i);
  double dot = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) dot += y[t] * static_cast<double>(x[t]);
  CosineGrad out{dot / (y_norm * x_norm), Vector(y.size())};
  const double a = 1.0 / (y_norm * x_norm);
  const double b = out.value / (y_norm * y_norm);
  for (std::size_t t = 0; t < y.size(); ++t) out.grad[t] = static_cast<double>(x[t]) * a - y[t] * b;
  return out;
}

void add_into(GateTensors& acc, const GateTensors& g, double scale = 1.0) {
  auto dst = acc.tensors();
  auto src = g.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    Vector& a = *dst[k];
    const Vector& b = *src[k];
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  }
}

}  // namespace

ExampleLoss example_loss(const ModelParams& params, const TrainExample& example,
                         const Store& store, const TrainConfig& config, Rng& rng) {
  const std::size_t pos = store.index_of(example.positive_id);
  std::vector<std::size_t> negs;
  negs.reserve(example.negative_ids.size());
  for (const auto& id : example.negative_ids) negs.push_back(store.index_of(id));

  ForwardTrace tr =
      next_query(params, example.query_emb, example.context_emb, ForwardMode::kTraining, &rng);
  const Vector& y = tr.next_query;
  double y_norm = 0.0;
  for (double v : y) y_norm += v * v;
  y_norm = std::sqrt(y_norm);
  if (!(y_norm > 0.0) || !std::isfinite(y_norm))
    throw NumericError("generated query embedding has zero or non-finite norm");

  CosineGrad pos_sim = cosine_with_grad(y, y_norm, store, pos);
  std::vector<CosineGrad> neg_sims;
  std::vector<double> neg_values;
  for (std::size_t i : negs) {
    neg_sims.push_back(cosine_with_grad(y, y_norm, store, i));
    neg_values.push_back(neg_sims.back().value);
  }
  InfoNceResult nce = info_nce_loss(pos_sim.value, neg_values, config.temperature);

  Vector upstream(y.size(), 0.0);
  for (std::size_t t = 0; t < y.size(); ++t) {
    double g = nce.grad_positive * pos_sim.grad[t];
    for (std::size_t j = 0; j < neg_sims.size(); ++j) g += nce.grad_negatives[j] * neg_sims[j].grad[t];
    upstream[t] = g;
  }
  Gradients grads = backward(params, tr, upstream);
  return {nce.loss, std::move(grads.params)};
}

std::vector<std::string> sample_negatives(const Store& store,
                                          const std::unordered_set<std::string>& exclude,
                                          std::size_t n, Rng& rng) {
  if (n == 0) return {};
  std::size_t excluded_present = 0;
  for (const auto& id : exclude)
    if (store.find(id)) ++excluded_present;
  const std::size_t available = store.size() - excluded_present;
  if (n > available)
    throw DataError("cannot sample " + std::to_string(n) + " negatives from " +
                    std::to_string(available) + " candidates");

  std::vector<std::string> out;
  out.reserve(n);
  if (2 * n > available) {
    // Dense draw: partial Fisher-Yates over the eligible rows.
    std::vector<std::size_t> pool;
    pool.reserve(available);
    for (std::size_t i = 0; i < store.size(); ++i)
      if (!exclude.contains(store.id(i))) pool.push_back(i);
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t j = k + static_cast<std::size_t>(rng() % (pool.size() - k));
      std::swap(pool[k], pool[j]);
      out.push_back(store.id(pool[k]));
    }
    return out;
  }
  std::unordered_set<std::size_t> taken;
  while (out.size() < n) {
    std::size_t i = static_cast<std::size_t>(rng() % store.size());
    if (taken.contains(i) || exclude.contains(store.id(i))) continue;
    taken.insert(i);
    out.push_back(store.id(i));
  }
  return out;
}

AdamWState AdamWState::zeros(std::size_t dim) {
  return {GateTensors::zeros(dim), GateTensors::zeros(dim), 0};
}

void adamw_step(ModelParams& params, const ParamGrads& grads, AdamWState& state,
                const TrainConfig& config) {
  if (grads.dim != params.dim()) throw DimensionError(params.dim(), grads.dim);
  if (state.first_moment.dim != params.dim()) throw DimensionError(params.dim(), state.first_moment.dim);
  for (const Vector* g : grads.tensors())
    for (double x : *g)
      if (!std::isfinite(x)) throw NumericError("non-finite gradient; AdamW step aborted");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  const double step_size = config.learning_rate / bias1;
  const double decay = 1.0 - config.learning_rate * config.weight_decay;

  auto p = params.weights.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    Vector& pk = *p[k];
    const Vector& gk = *g[k];
    Vector& mk = *m[k];
    Vector& vk = *v[k];
    for (std::size_t i = 0; i < pk.size(); ++i) {
      pk[i] *= decay;
      mk[i] = config.beta1 * mk[i] + (1.0 - config.beta1) * gk[i];
      vk[i] = config.beta2 * vk[i] + (1.0 - config.beta2) * gk[i] * gk[i];
      const double denom = std::sqrt(vk[i]) / std::sqrt(bias2) + config.epsilon;
      pk[i] -= step_size * mk[i] / denom;
    }
  }
}

Json to_json(const TrainReport& r) {
  return Json{{"epoch_losses", r.epoch_losses},
              {"wall_seconds", r.wall_seconds},
              {"examples", r.examples},
              {"steps", r.steps},
              {"config", to_json(r.config)},
              {"checkpoint_path", r.checkpoint_path}};
}

TrainResult train(const std::vector<TrainExample>& dataset, const Store& store,
                  const TrainConfig& config, std::optional<ModelParams> initial) {
  config.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  const std::size_t dim = store.dim();
  for (const auto& ex : dataset) validate_example(ex, store);

  ModelParams params;
  if (initial) {
    params = std::move(*initial);
    if (params.dim() != dim) throw DimensionError(dim, params.dim());
  } else {
    params = init_params(dim, config.seed, config.dropout_rate);
    if (config.zero_value_init) {
      std::fill(params.weights.w_value.begin(), params.weights.w_value.end(), 0.0);
      std::fill(params.weights.b_value.begin(), params.weights.b_value.end(), 0.0);
    }
  }
  params.dropout_rate = config.dropout_rate;
  validate(params);

  const auto start = std::chrono::steady_clock::now();
  AdamWState state = AdamWState::zeros(dim);
  TrainReport report;
  report.config = config;
  report.examples = dataset.size();

  const std::size_t wave = std::max<std::size_t>(1, thread_count());
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 1, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::size_t count = end - begin;
      ParamGrads batch_grad = GateTensors::zeros(dim);
      double batch_loss = 0.0;
      // Examples are evaluated in waves; accumulation always follows batch
      // position so the sum is independent of the worker count.
      std::vector<ExampleLoss> slots(std::min(wave, count));
      for (std::size_t w0 = begin; w0 < end; w0 += wave) {
        const std::size_t w1 = std::min(end, w0 + wave);
        parallel_for(w1 - w0, [&](std::size_t s) {
          const std::size_t idx = order[w0 + s];
          Rng rng(mix_seed(config.seed, 2 + epoch, idx));
          slots[s] = example_loss(params, dataset[idx], store, config, rng);
        });
        for (std::size_t s = 0; s < w1 - w0; ++s) {
          batch_loss += slots[s].loss;
          add_into(batch_grad, slots[s].grads);
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (Vector* v : batch_grad.tensors())
        for (double& x : *v) x *= inv;
      adamw_step(params, batch_grad, state, config);
      epoch_loss += batch_loss;
      ++report.steps;
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(params), std::move(report)};
}

void validate_example(const TrainExample& ex, const Store& store) {
  if (ex.query_emb.size() != store.dim()) throw DimensionError(store.dim(), ex.query_emb.size());
  if (ex.context_emb.size() != store.dim()) throw DimensionError(store.dim(), ex.context_emb.size());
  store.index_of(ex.positive_id);
  for (const auto& id : ex.negative_ids) {
    store.index_of(id);
    if (id == ex.positive_id) throw DataError("positive id " + id + " also listed as a negative");
  }
  if (ex.context_id && *ex.context_id == ex.positive_id)
    throw DataError("positive id " + ex.positive_id + " equals the context chunk id");
}

Json to_json(const TrainExample& ex) {
  Json j{{"query_emb", vector_to_json(ex.query_emb)},
         {"context_emb", vector_to_json(ex.context_emb)},
         {"positive_id", ex.positive_id},
         {"negative_ids", ex.negative_ids}};
  if (ex.context_id) j["context_id"] = *ex.context_id;
  return j;
}

std::vector<TrainExample> read_train_examples(const std::filesystem::path& path,
                                              const Store& store, std::size_t num_negatives,
                                              std::uint64_t seed) {
  std::vector<TrainExample> out;
  for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
    for (const char* key : {"query_emb", "context_emb", "positive_id"})
      if (!obj.contains(key))
        throw FormatError(path.string() + ": missing field '" + key + "'", line);
    TrainExample ex;
    ex.query_emb = json_to_vector(obj["query_emb"], "query_emb");
    ex.context_emb = json_to_vector(obj["context_emb"], "context_emb");
    ex.positive_id = obj["positive_id"].get<std::string>();
    if (obj.contains("context_id")) ex.context_id = obj["context_id"].get<std::string>();
    if (obj.contains("negative_ids")) {
      ex.negative_ids = obj["negative_ids"].get<std::vector<std::string>>();
    } else {
      std::unordered_set<std::string> exclude{ex.positive_id};
      if (ex.context_id) exclude.insert(*ex.context_id);
      Rng rng(mix_seed(seed, 0x6e6567, line));
      ex.negative_ids = sample_negatives(store, exclude, num_negatives, rng);
    }
    validate_example(ex, store);
    out.push_back(std::move(ex));
  });
  return out;
}

}  // namespace treehop
