// SPDX-License-Identifier: Apache-2.0
//
// Conditional LSTM with quantile heads.
//
//   h0 = dropout(tanh(cat . cond_W + cond_b)),  c0 = 0
//   (h, c) <- lstm_step(x_t, h, c) for t = 1..history_len
//   yhat_k = h . head_W_k + head_b_k            k = 1..9
//
// The pseudo-categorical baseline feeds concat(x_t, cat) at every step from
// zero states instead. Packed gate layout is (i, f, g, o).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condlstmq/adam.hpp"
#include "condlstmq/autodiff.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/quantile_loss.hpp"

namespace condlstmq {

enum class ModelKind { condlstm_q, pseudo_categorical };

inline std::string to_string(ModelKind kind) {
  return kind == ModelKind::condlstm_q ? "condlstm-q" : "pseudo-categorical";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "condlstm-q" || s == "cond" || s == "condlstmq") return ModelKind::condlstm_q;
  if (s == "pseudo-categorical" || s == "pseudo") return ModelKind::pseudo_categorical;
  throw ContractError("unknown model kind '" + s + "' (expected condlstm-q or pseudo-categorical)");
}

enum class Mode { train, infer };

struct ModelConfig {
  std::size_t hidden_units = 128;
  double learning_rate = 0.001;
  double dropout_rate = 0.2;
  std::size_t epochs = 20;
  std::size_t history_len = 7;
  std::size_t horizon = 14;
  std::size_t n_quantiles = kNumQuantiles;
  std::size_t n_ts_features = 8;
  std::size_t n_cat_features = 50;
  std::uint64_t seed = 0;
  std::size_t batch_size = 256;
  bool condition_cell_state = false;
  bool sort_quantiles = false;
  double clip_norm = 0.0;

  void validate() const {
    if (hidden_units == 0) throw ContractError("config: hidden_units must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractError("config: dropout_rate must lie in [0, 1)");
    if (history_len == 0) throw ContractError("config: history_len must be at least 1");
    if (horizon == 0) throw ContractError("config: horizon must be at least 1");
    if (n_quantiles != kNumQuantiles) throw ContractError("config: n_quantiles is fixed at 9");
    if (batch_size == 0) throw ContractError("config: batch_size must be positive");
    if (learning_rate < 0.0) throw ContractError("config: learning_rate must be non-negative");
  }
};

struct ModelParams {
  ModelKind kind = ModelKind::condlstm_q;
  ParamMap arrays;

  [[nodiscard]] const ad::Array& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ContractError("model parameters lack '" + name + "'");
    return it->second;
  }
  ad::Array& at(const std::string& name) { return const_cast<ad::Array&>(std::as_const(*this).at(name)); }
  bool operator==(const ModelParams&) const = default;
};

inline std::string head_weight_name(std::size_t k) { return "head_W_" + std::to_string(k + 1); }
inline std::string head_bias_name(std::size_t k) { return "head_b_" + std::to_string(k + 1); }

/// Width of the per-step LSTM input for a model kind.
inline std::size_t input_width(ModelKind kind, const ModelConfig& c) {
  return kind == ModelKind::condlstm_q ? c.n_ts_features : c.n_ts_features + c.n_cat_features;
}

/// Expected shape of every parameter array for (kind, config).
inline std::map<std::string, ad::Shape> param_shapes(ModelKind kind, const ModelConfig& c) {
  const std::size_t h = c.hidden_units;
  std::map<std::string, ad::Shape> s;
  if (kind == ModelKind::condlstm_q) {
    s["cond_W"] = {c.n_cat_features, h};
    s["cond_b"] = {h};
    if (c.condition_cell_state) {
      s["cond_c_W"] = {c.n_cat_features, h};
      s["cond_c_b"] = {h};
    }
  }
  s["lstm_Wx"] = {input_width(kind, c), 4 * h};
  s["lstm_Wh"] = {h, 4 * h};
  s["lstm_b"] = {4 * h};
  for (std::size_t k = 0; k < kNumQuantiles; ++k) {
    s[head_weight_name(k)] = {h, c.horizon};
    s[head_bias_name(k)] = {c.horizon};
  }
  return s;
}

/// Throws unless `p` has exactly the arrays and shapes implied by `c`.
inline void validate_params(const ModelParams& p, const ModelConfig& c) {
  const auto expected = param_shapes(p.kind, c);
  if (expected.size() != p.arrays.size())
    throw DimensionError("model parameters: expected " + std::to_string(expected.size()) + " arrays, found " +
                         std::to_string(p.arrays.size()));
  for (const auto& [name, shape] : expected) {
    const auto& a = p.at(name);
    if (a.shape != shape)
      throw DimensionError("parameter " + name + " has shape " + ad::shape_str(a.shape) + ", config implies " +
                           ad::shape_str(shape));
    for (double v : a.data)
      if (!std::isfinite(v)) throw NumericError("parameter " + name + " is not finite");
  }
}

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
inline ModelParams init_params(const ModelConfig& c, ModelKind kind, std::uint64_t seed) {
  c.validate();
  ModelParams p;
  p.kind = kind;
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : param_shapes(kind, c)) {
    ad::Array a = ad::Array::zeros(shape);
    if (shape.size() == 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : a.data) v = u(rng);
    }
    p.arrays.emplace(name, std::move(a));
  }
  auto& b = p.at("lstm_b").data;
  for (std::size_t j = c.hidden_units; j < 2 * c.hidden_units; ++j) b[j] = 1.0;
  return p;
}

/// One training or inference instance.
struct WindowSample {
  std::string county_id;
  std::size_t onset = 0;             // panel date index of the first target day
  std::vector<double> history;       // [history_len x n_ts] row-major, oldest first
  std::vector<double> categorical;   // [n_cat]
  std::vector<double> target;        // [horizon]
};

// ---------------------------------------------------------------------------
// Building blocks on the tape. Every tensor carries a leading batch axis.

/// Parameters bound as graph leaves.
class ParamVars {
 public:
  ParamVars(ad::Graph& g, const ModelParams& p, bool trainable) {
    for (const auto& [name, a] : p.arrays) vars_.emplace(name, trainable ? g.param(a) : g.constant(a));
  }
  /// Binds already-created graph variables by name.
  explicit ParamVars(std::map<std::string, ad::Var> vars) : vars_(std::move(vars)) {}
  [[nodiscard]] const ad::Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("parameter '" + name + "' not bound");
    return it->second;
  }
  [[nodiscard]] bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  /// Gradients of every bound parameter, keyed by name.
  [[nodiscard]] ParamMap grads() const {
    ParamMap out;
    for (const auto& [name, v] : vars_) {
      std::vector<double> g = v.grad();
      if (g.size() != v.size()) g.assign(v.size(), 0.0);
      out.emplace(name, ad::Array(v.shape(), std::move(g)));
    }
    return out;
  }

 private:
  std::map<std::string, ad::Var> vars_;
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

inline LstmState zero_state(ad::Graph& g, std::size_t batch, std::size_t hidden) {
  return {g.constant({batch, hidden}, std::vector<double>(batch * hidden, 0.0)),
          g.constant({batch, hidden}, std::vector<double>(batch * hidden, 0.0))};
}

/// Initial LSTM state from static features ([B x n_cat]).
inline LstmState cond_init(const ad::Var& categorical, const ParamVars& p, const ModelConfig& c, Mode mode) {
  const auto& s = categorical.shape();
  if (s.size() != 2 || s[1] != c.n_cat_features)
    throw DimensionError("cond_init: categorical input " + ad::shape_str(s) + " expected [B x " +
                         std::to_string(c.n_cat_features) + "]");
  const bool training = mode == Mode::train;
  ad::Var h0 = ad::dropout(ad::tanh(ad::add_bias(ad::matmul(categorical, p["cond_W"]), p["cond_b"])),
                           c.dropout_rate, training);
  ad::Var c0;
  if (c.condition_cell_state) {
    c0 = ad::dropout(ad::tanh(ad::add_bias(ad::matmul(categorical, p["cond_c_W"]), p["cond_c_b"])),
                     c.dropout_rate, training);
  } else {
    c0 = categorical.graph().constant({s[0], c.hidden_units}, std::vector<double>(s[0] * c.hidden_units, 0.0));
  }
  return {h0, c0};
}

/// Classical LSTM cell update.
inline LstmState lstm_step(const ad::Var& x, const LstmState& state, const ParamVars& p, std::size_t hidden) {
  const ad::Var z = ad::add_bias(ad::add(ad::matmul(x, p["lstm_Wx"]), ad::matmul(state.h, p["lstm_Wh"])), p["lstm_b"]);
  const ad::Var i = ad::sigmoid(ad::slice(z, 0, hidden));
  const ad::Var f = ad::sigmoid(ad::slice(z, hidden, 2 * hidden));
  const ad::Var g = ad::tanh(ad::slice(z, 2 * hidden, 3 * hidden));
  const ad::Var o = ad::sigmoid(ad::slice(z, 3 * hidden, 4 * hidden));
  const ad::Var c_next = ad::add(ad::mul(f, state.c), ad::mul(i, g));
  const ad::Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

/// Runs the recurrence over `steps` (oldest first) and returns the last hidden state.
inline ad::Var encode(std::span<const ad::Var> steps, LstmState state, const ParamVars& p, const ModelConfig& c) {
  if (steps.size() != c.history_len)
    throw DimensionError("encode: " + std::to_string(steps.size()) + " steps, history_len is " +
                         std::to_string(c.history_len));
  for (const auto& x : steps) state = lstm_step(x, state, p, c.hidden_units);
  return state.h;
}

/// Nine affine maps of the final hidden state, each [B x horizon].
inline std::vector<ad::Var> quantile_heads(const ad::Var& h, const ParamVars& p) {
  std::vector<ad::Var> heads;
  heads.reserve(kNumQuantiles);
  for (std::size_t k = 0; k < kNumQuantiles; ++k)
    heads.push_back(ad::add_bias(ad::matmul(h, p[head_weight_name(k)]), p[head_bias_name(k)]));
  return heads;
}

/// Batch tensors assembled from samples.
struct BatchInputs {
  std::vector<ad::Var> steps;   // history_len tensors [B x n_ts]
  ad::Var categorical;          // [B x n_cat]
  ad::Var target;               // [B x horizon]
  std::size_t size = 0;
};

inline BatchInputs make_batch(ad::Graph& g, std::span<const WindowSample* const> samples, const ModelConfig& c) {
  const std::size_t b = samples.size();
  if (b == 0) throw ContractError("make_batch: empty batch");
  BatchInputs in;
  in.size = b;
  std::vector<std::vector<double>> steps(c.history_len, std::vector<double>(b * c.n_ts_features));
  std::vector<double> cat(b * c.n_cat_features), target(b * c.horizon, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    const auto& s = *samples[r];
    if (s.history.size() != c.history_len * c.n_ts_features)
      throw DimensionError("sample " + s.county_id + ": history has " + std::to_string(s.history.size()) +
                           " values, expected " + std::to_string(c.history_len) + " x " +
                           std::to_string(c.n_ts_features));
    if (s.categorical.size() != c.n_cat_features)
      throw DimensionError("sample " + s.county_id + ": " + std::to_string(s.categorical.size()) +
                           " categorical values, expected " + std::to_string(c.n_cat_features));
    if (!s.target.empty() && s.target.size() != c.horizon)
      throw DimensionError("sample " + s.county_id + ": target length " + std::to_string(s.target.size()) +
                           ", horizon is " + std::to_string(c.horizon));
    for (std::size_t t = 0; t < c.history_len; ++t)
      std::copy_n(s.history.begin() + static_cast<std::ptrdiff_t>(t * c.n_ts_features), c.n_ts_features,
                  steps[t].begin() + static_cast<std::ptrdiff_t>(r * c.n_ts_features));
    std::copy(s.categorical.begin(), s.categorical.end(), cat.begin() + static_cast<std::ptrdiff_t>(r * c.n_cat_features));
    std::copy(s.target.begin(), s.target.end(), target.begin() + static_cast<std::ptrdiff_t>(r * c.horizon));
  }
  for (auto& s : steps) in.steps.push_back(g.constant({b, c.n_ts_features}, std::move(s)));
  in.categorical = g.constant({b, c.n_cat_features}, std::move(cat));
  in.target = g.constant({b, c.horizon}, std::move(target));
  return in;
}

/// Per-step inputs of the pseudo-categorical baseline: concat(x_t, cat).
inline std::vector<ad::Var> pseudo_inputs(const BatchInputs& in) {
  std::vector<ad::Var> out;
  out.reserve(in.steps.size());
  for (const auto& x : in.steps) out.push_back(ad::concat({x, in.categorical}));
  return out;
}

/// Quantile heads for a batch, dispatching on the parameter kind.
inline std::vector<ad::Var> forward_batch(ad::Graph& g, const BatchInputs& in, const ParamVars& p, ModelKind kind,
                                          const ModelConfig& c, Mode mode) {
  if (kind == ModelKind::condlstm_q) {
    const LstmState init = cond_init(in.categorical, p, c, mode);
    return quantile_heads(encode(in.steps, init, p, c), p);
  }
  const auto steps = pseudo_inputs(in);
  return quantile_heads(encode(steps, zero_state(g, in.size, c.hidden_units), p, c), p);
}

/// Gathers head tensors into one [B x horizon x 9] array.
inline std::vector<ad::Array> gather_heads(std::span<const ad::Var> heads, std::size_t batch, std::size_t horizon) {
  std::vector<ad::Array> out;
  out.reserve(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    ad::Array a = ad::Array::zeros({horizon, kNumQuantiles});
    for (std::size_t k = 0; k < kNumQuantiles; ++k) {
      const auto& v = heads[k].value();
      for (std::size_t d = 0; d < horizon; ++d) a.data[d * kNumQuantiles + k] = v[r * horizon + d];
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Ascending sort of the 9 quantile values within each day.
inline void sort_quantiles_per_day(ad::Array& preds) {
  for (std::size_t d = 0; d + 1 <= preds.data.size() / kNumQuantiles; ++d) {
    auto first = preds.data.begin() + static_cast<std::ptrdiff_t>(d * kNumQuantiles);
    std::sort(first, first + kNumQuantiles);
  }
}

namespace detail {

inline ad::Array forward_single(const WindowSample& sample, const ModelParams& params, const ModelConfig& c, Mode mode,
                                std::uint64_t rng_seed) {
  ad::Graph g(rng_seed);
  const WindowSample* ptr = &sample;
  const BatchInputs in = make_batch(g, std::span<const WindowSample* const>(&ptr, 1), c);
  const ParamVars p(g, params, false);
  const auto heads = forward_batch(g, in, p, params.kind, c, mode);
  return gather_heads(heads, 1, c.horizon).front();
}

}  // namespace detail

/// condLSTM-Q forward pass of one sample; returns [horizon x 9] (standardized scale).
inline ad::Array forward(const WindowSample& sample, const ModelParams& params, const ModelConfig& c,
                         Mode mode = Mode::infer, std::uint64_t rng_seed = 0) {
  if (params.kind != ModelKind::condlstm_q) throw ContractError("forward: parameters are not condlstm-q");
  return detail::forward_single(sample, params, c, mode, rng_seed);
}

/// Pseudo-categorical baseline forward pass of one sample.
inline ad::Array forward_pseudo(const WindowSample& sample, const ModelParams& params, const ModelConfig& c,
                                Mode mode = Mode::infer, std::uint64_t rng_seed = 0) {
  if (params.kind != ModelKind::pseudo_categorical)
    throw ContractError("forward_pseudo: parameters are not pseudo-categorical");
  return detail::forward_single(sample, params, c, mode, rng_seed);
}

/// Inference over many samples in fixed-size chunks; one [horizon x 9] array per sample.
inline std::vector<ad::Array> predict_samples(std::span<const WindowSample> samples, const ModelParams& params,
                                              const ModelConfig& c, std::size_t chunk = 512) {
  std::vector<ad::Array> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    std::vector<const WindowSample*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&samples[i]);
    ad::Graph g;
    const BatchInputs in = make_batch(g, ptrs, c);
    const ParamVars p(g, params, false);
    const auto heads = forward_batch(g, in, p, params.kind, c, Mode::infer);
    for (auto& a : gather_heads(heads, ptrs.size(), c.horizon)) out.push_back(std::move(a));
  }
  return out;
}

/// Mean avg_quantile_loss over samples in inference mode.
inline double mean_loss(std::span<const WindowSample> samples, const ModelParams& params, const ModelConfig& c) {
  if (samples.empty()) throw ContractError("mean_loss: no samples");
  const auto preds = predict_samples(samples, params, c);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) total += avg_quantile_loss(samples[i].target, preds[i].data);
  return total / static_cast<double>(samples.size());
}

/// Compares the batch-loss gradient of every parameter with central
/// differences. Every evaluation uses a fresh graph with the same seed, so
/// train-mode dropout masks are identical across evaluations.
inline ad::GradCheckReport loss_grad_check(const ModelParams& params, const ModelConfig& c,
                                           std::span<const WindowSample> samples, Mode mode, double eps = 1e-6) {
  if (samples.empty()) throw ContractError("loss_grad_check: no samples");
  validate_params(params, c);
  std::vector<std::string> names;
  std::vector<ad::Array> points;
  for (const auto& [name, a] : params.arrays) {
    names.push_back(name);
    points.push_back(a);
  }
  std::vector<const WindowSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const ad::TensorFunction f = [&](ad::Graph& g, std::span<const ad::Var> vars) {
    std::map<std::string, ad::Var> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
    const ParamVars p(std::move(bound));
    const BatchInputs in = make_batch(g, ptrs, c);
    return avg_quantile_loss(in.target, forward_batch(g, in, p, params.kind, c, mode));
  };
  return ad::grad_check(f, points, eps);
}

}  // namespace condlstmq
