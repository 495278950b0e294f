#include "treehop/model.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "treehop/errors.hpp"

namespace treehop {

namespace {

constexpr char kModelMagic[4] = {'T', 'H', 'M', '1'};
constexpr std::uint32_t kModelVersion = 1;

void affine(const Vector& w, const Vector& b, std::span<const double> x, Vector& out) {
  const std::size_t d = b.size();
  out.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = w.data() + i * d;
    double s = b[i];
    for (std::size_t j = 0; j < d; ++j) s += row[j] * x[j];
    out[i] = s;
  }
}

// grad_w += g x^T, grad_b += g, grad_x += W^T g
void affine_backward(const Vector& w, std::span<const double> x, const Vector& g, Vector& grad_w,
                     Vector& grad_b, Vector& grad_x) {
  const std::size_t d = g.size();
  for (std::size_t i = 0; i < d; ++i) {
    const double gi = g[i];
    grad_b[i] += gi;
    double* grow = grad_w.data() + i * d;
    const double* row = w.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      grow[j] += gi * x[j];
      grad_x[j] += row[j] * gi;
    }
  }
}

void check_dims(const ModelParams& params, std::span<const double> q, std::span<const double> c) {
  if (q.size() != params.dim()) throw DimensionError(params.dim(), q.size());
  if (c.size() != params.dim()) throw DimensionError(params.dim(), c.size());
}

bool all_finite(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

GateTensors GateTensors::zeros(std::size_t dim) {
  if (dim == 0) throw InvalidDimensionError();
  GateTensors t;
  t.dim = dim;
  t.w_query.assign(dim * dim, 0.0);
  t.w_key.assign(dim * dim, 0.0);
  t.w_value.assign(dim * dim, 0.0);
  t.b_query.assign(dim, 0.0);
  t.b_key.assign(dim, 0.0);
  t.b_value.assign(dim, 0.0);
  return t;
}

ModelParams zero_params(std::size_t dim, double dropout_rate) {
  ModelParams p{GateTensors::zeros(dim), dropout_rate};
  validate(p);
  return p;
}

ModelParams init_params(std::size_t dim, std::uint64_t seed, double dropout_rate) {
  ModelParams p = zero_params(dim, dropout_rate);
  const double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(dim)));
  Rng rng(seed);
  for (Vector* w : {&p.weights.w_query, &p.weights.w_key, &p.weights.w_value})
    for (double& x : *w) x = bound * (2.0 * uniform01(rng) - 1.0);
  return p;
}

void validate(const ModelParams& params) {
  const std::size_t d = params.dim();
  if (d == 0) throw InvalidDimensionError();
  if (!(params.dropout_rate >= 0.0 && params.dropout_rate < 1.0))
    throw ConfigError("dropout_rate must be in [0, 1)");
  const auto& t = params.weights;
  for (const Vector* w : {&t.w_query, &t.w_key, &t.w_value})
    if (w->size() != d * d) throw DimensionError(d * d, w->size());
  for (const Vector* b : {&t.b_query, &t.b_key, &t.b_value})
    if (b->size() != d) throw DimensionError(d, b->size());
  for (const Vector* v : t.tensors())
    if (!all_finite(*v)) throw NumericError("non-finite model parameter");
}

ForwardTrace update_gate(const ModelParams& params, std::span<const double> query,
                         std::span<const double> context) {
  check_dims(params, query, context);
  const std::size_t d = params.dim();
  const auto& t = params.weights;
  ForwardTrace tr;
  tr.query.assign(query.begin(), query.end());
  tr.context.assign(context.begin(), context.end());
  affine(t.w_query, t.b_query, query, tr.q_proj);
  affine(t.w_key, t.b_key, context, tr.k_proj);
  affine(t.w_value, t.b_value, context, tr.v_proj);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  tr.attn_logits.resize(d);
  for (std::size_t i = 0; i < d; ++i) tr.attn_logits[i] = tr.q_proj[i] * tr.k_proj[i] * scale;

  const double shift = *std::max_element(tr.attn_logits.begin(), tr.attn_logits.end());
  tr.attn_weights.resize(d);
  double z = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    tr.attn_weights[i] = std::exp(tr.attn_logits[i] - shift);
    z += tr.attn_weights[i];
  }
  tr.gate_out.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    tr.attn_weights[i] /= z;
    tr.gate_out[i] = tr.attn_weights[i] * tr.v_proj[i];
  }
  return tr;
}

ForwardTrace next_query(const ModelParams& params, std::span<const double> query,
                        std::span<const double> context, ForwardMode mode, Rng* rng) {
  ForwardTrace tr = update_gate(params, query, context);
  const std::size_t d = params.dim();
  tr.next_query.resize(d);
  if (mode == ForwardMode::kTraining) {
    if (rng == nullptr) throw ConfigError("training-mode forward requires an rng");
    const double p = params.dropout_rate;
    const double keep_scale = 1.0 / (1.0 - p);
    Vector mask(d);
    for (std::size_t i = 0; i < d; ++i) {
      mask[i] = uniform01(*rng) >= p ? keep_scale : 0.0;
      tr.next_query[i] = query[i] - context[i] + mask[i] * tr.gate_out[i];
    }
    tr.dropout_mask = std::move(mask);
  } else {
    for (std::size_t i = 0; i < d; ++i) tr.next_query[i] = query[i] - context[i] + tr.gate_out[i];
  }
  return tr;
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace,
                   std::span<const double> upstream) {
  const std::size_t d = params.dim();
  if (upstream.size() != d) throw DimensionError(d, upstream.size());
  if (trace.attn_weights.size() != d) throw DimensionError(d, trace.attn_weights.size());
  const auto& t = params.weights;

  Gradients g{GateTensors::zeros(d), Vector(upstream.begin(), upstream.end()), Vector(d)};
  for (std::size_t i = 0; i < d; ++i) g.context[i] = -upstream[i];

  // gate = w * v
  Vector d_gate(upstream.begin(), upstream.end());
  if (trace.dropout_mask)
    for (std::size_t i = 0; i < d; ++i) d_gate[i] *= (*trace.dropout_mask)[i];
  Vector d_value(d), d_weights(d);
  double weighted = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    d_value[i] = d_gate[i] * trace.attn_weights[i];
    d_weights[i] = d_gate[i] * trace.v_proj[i];
    weighted += trace.attn_weights[i] * d_weights[i];
  }

  // softmax Jacobian (diag(w) - w w^T), then the scaled componentwise product
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vector d_qproj(d), d_kproj(d);
  for (std::size_t i = 0; i < d; ++i) {
    double d_logit = trace.attn_weights[i] * (d_weights[i] - weighted);
    d_qproj[i] = d_logit * trace.k_proj[i] * scale;
    d_kproj[i] = d_logit * trace.q_proj[i] * scale;
  }

  affine_backward(t.w_query, trace.query, d_qproj, g.params.w_query, g.params.b_query, g.query);
  affine_backward(t.w_key, trace.context, d_kproj, g.params.w_key, g.params.b_key, g.context);
  affine_backward(t.w_value, trace.context, d_value, g.params.w_value, g.params.b_value, g.context);

  for (const Vector* v : g.params.tensors())
    if (!all_finite(*v)) throw NumericError("non-finite parameter gradient");
  if (!all_finite(g.query) || !all_finite(g.context))
    throw NumericError("non-finite input gradient");
  return g;
}

ModelParams round_to_f32(const ModelParams& params) {
  ModelParams out = params;
  out.dropout_rate = static_cast<float>(params.dropout_rate);
  for (Vector* v : out.weights.tensors())
    for (double& x : *v) x = static_cast<float>(x);
  return out;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  validate(params);
  detail::BinaryWriter w(path);
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(params.dim()));
  w.f32(static_cast<float>(params.dropout_rate));
  for (const Vector* v : params.weights.tensors())
    for (double x : *v) w.f32(static_cast<float>(x));
  w.finish();
}

ModelParams load_params(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  detail::BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kModelMagic))
    throw FormatError(path.string() + ": bad magic (expected THM1)", 0);
  std::uint32_t version = r.u32("version");
  if (version != kModelVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version), 4);
  std::uint32_t dim = r.u32("dimension");
  if (dim == 0) throw FormatError(path.string() + ": zero dimension", 8);
  if (expected_dim && *expected_dim != dim) throw DimensionError(*expected_dim, dim);
  float dropout = r.f32("dropout rate");
  if (!(dropout >= 0.0f && dropout < 1.0f))
    throw FormatError(path.string() + ": dropout rate out of range", 12);

  const std::uint64_t payload = 4ull * (3ull * dim * dim + 3ull * dim);
  if (r.remaining() < payload)
    throw FormatError(path.string() + ": truncated parameter payload", r.offset());
  if (r.remaining() > payload)
    throw FormatError(path.string() + ": trailing bytes after parameters", r.offset() + payload);

  ModelParams p{GateTensors::zeros(dim), dropout};
  for (Vector* v : p.weights.tensors())
    for (double& x : *v) {
      float f = r.f32("parameters");
      if (!std::isfinite(f)) throw FormatError(path.string() + ": non-finite parameter", r.offset() - 4);
      x = f;
    }
  return p;
}

}  // namespace treehop
