#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "treehop/parallel.hpp"
#include "treehop/store.hpp"

namespace treehop {

// The six tensors of the update gate. Matrices are row-major dim x dim and
// act on column vectors: proj = W x + b.
struct GateTensors {
  std::size_t dim = 0;
  Vector w_query, b_query;
  Vector w_key, b_key;
  Vector w_value, b_value;

  static GateTensors zeros(std::size_t dim);

  std::array<Vector*, 6> tensors() {
    return {&w_query, &b_query, &w_key, &b_key, &w_value, &b_value};
  }
  std::array<const Vector*, 6> tensors() const {
    return {&w_query, &b_query, &w_key, &b_key, &w_value, &b_value};
  }
  std::size_t parameter_count() const { return 3 * dim * dim + 3 * dim; }

  bool operator==(const GateTensors&) const = default;
};

using ParamGrads = GateTensors;

struct ModelParams {
  GateTensors weights;
  double dropout_rate = 0.1;

  std::size_t dim() const noexcept { return weights.dim; }
  bool operator==(const ModelParams&) const = default;
};

// Intermediate values of one forward pass, kept for backward().
struct ForwardTrace {
  Vector query;
  Vector context;
  Vector q_proj;
  Vector k_proj;
  Vector v_proj;
  Vector attn_logits;
  Vector attn_weights;
  Vector gate_out;  // before dropout
  std::optional<Vector> dropout_mask;  // entries are 0 or 1/(1-p)
  Vector next_query;
};

enum class ForwardMode { kInference, kTraining };

// Glorot-uniform matrices in +-sqrt(6/(2d)), zero biases. Deterministic in seed.
ModelParams init_params(std::size_t dim, std::uint64_t seed, double dropout_rate = 0.1);

// All-zero tensors: next_query reduces to q - c.
ModelParams zero_params(std::size_t dim, double dropout_rate = 0.1);

// Throws ConfigError/NumericError when shapes, dropout rate or entries are invalid.
void validate(const ModelParams& params);

// Cross-attention gate: softmax over the d components of
// (W_Q q + b_Q) * (W_K c + b_K) / sqrt(d), multiplied into W_V c + b_V.
// Fills everything in the trace except next_query and dropout_mask.
ForwardTrace update_gate(const ModelParams& params, std::span<const double> query,
                         std::span<const double> context);

// next = q - c + gate. Training mode applies inverted dropout to the gate
// output and requires an rng.
ForwardTrace next_query(const ModelParams& params, std::span<const double> query,
                        std::span<const double> context,
                        ForwardMode mode = ForwardMode::kInference, Rng* rng = nullptr);

struct Gradients {
  ParamGrads params;
  Vector query;
  Vector context;
};

// Exact gradients of <upstream, next_query> with respect to every parameter
// and both inputs. Throws NumericError if any gradient is not finite.
Gradients backward(const ModelParams& params, const ForwardTrace& trace,
                   std::span<const double> upstream);

// "THM1" checkpoint: magic | u32 version=1 | u32 dim | f32 dropout |
// W_Q b_Q W_K b_K W_V b_V as little-endian f32, row-major.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path,
                        std::optional<std::size_t> expected_dim = std::nullopt);

// Rounds every entry through f32, i.e. the values a checkpoint preserves.
ModelParams round_to_f32(const ModelParams& params);

}  // namespace treehop
