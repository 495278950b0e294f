#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "treehop/jsonl.hpp"
#include "treehop/model.hpp"
#include "treehop/store.hpp"

namespace treehop {

struct TrainExample {
  Vector query_emb;
  Vector context_emb;
  std::string positive_id;
  std::vector<std::string> negative_ids;
  // Id of the chunk behind context_emb when known; excluded from negatives.
  std::optional<std::string> context_id;
};

struct TrainConfig {
  double temperature = 0.15;
  std::size_t num_negatives = 5;
  std::size_t batch_size = 64;
  double learning_rate = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double dropout_rate = 0.1;
  // Start from Glorot Q/K with a zero value path, i.e. exactly q - c.
  bool zero_value_init = false;

  void validate() const;
};

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

struct InfoNceResult {
  double loss = 0.0;
  double grad_positive = 0.0;
  std::vector<double> grad_negatives;
};

// -log(e^{pos/t} / (e^{pos/t} + sum_j e^{neg_j/t})) via a max-shifted
// log-sum-exp, with analytic gradients in each similarity.
InfoNceResult info_nce_loss(double positive_sim, std::span<const double> negative_sims,
                            double temperature);

struct ExampleLoss {
  double loss = 0.0;
  ParamGrads grads;
};

// Training-mode forward, cosine against the positive and negative chunks,
// InfoNCE, and the full backward pass.
ExampleLoss example_loss(const ModelParams& params, const TrainExample& example,
                         const Store& store, const TrainConfig& config, Rng& rng);

// n distinct ids drawn uniformly from the store minus `exclude`, in draw order.
std::vector<std::string> sample_negatives(const Store& store,
                                          const std::unordered_set<std::string>& exclude,
                                          std::size_t n, Rng& rng);

struct AdamWState {
  GateTensors first_moment;
  GateTensors second_moment;
  std::uint64_t step = 0;

  static AdamWState zeros(std::size_t dim);
};

// Decoupled weight decay followed by the bias-corrected Adam update.
// A non-finite gradient raises NumericError before anything is modified.
void adamw_step(ModelParams& params, const ParamGrads& grads, AdamWState& state,
                const TrainConfig& config);

struct TrainReport {
  std::vector<double> epoch_losses;
  double wall_seconds = 0.0;
  std::size_t examples = 0;
  std::size_t steps = 0;
  TrainConfig config;
  std::string checkpoint_path;
};

Json to_json(const TrainReport& report);

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// Shuffled mini-batches, mean loss per batch, one AdamW step per batch.
// Bitwise deterministic for a given (dataset, store, config), independent of
// TREEHOP_THREADS. With no initial params, init_params(seed) is used.
TrainResult train(const std::vector<TrainExample>& dataset, const Store& store,
                  const TrainConfig& config,
                  std::optional<ModelParams> initial = std::nullopt);

// Checks the TrainExample invariants against a store; throws DataError.
void validate_example(const TrainExample& example, const Store& store);

Json to_json(const TrainExample& example);
// Missing "negative_ids" are sampled (under `seed`, per line) excluding the
// positive and, when given, the context chunk.
std::vector<TrainExample> read_train_examples(const std::filesystem::path& path,
                                              const Store& store, std::size_t num_negatives,
                                              std::uint64_t seed);

}  // namespace treehop
