// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "condlstmq/autodiff.hpp"
#include "condlstmq/errors.hpp"

namespace condlstmq {

/// Named trainable arrays, iterated in name order.
using ParamMap = std::map<std::string, ad::Array>;

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clipping; 0 disables
};

struct AdamState {
  AdamOptions options;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t t = 0;

  AdamState() = default;
  AdamState(const ParamMap& params, AdamOptions opts) : options(opts) {
    for (const auto& [name, a] : params) {
      m[name].assign(a.size(), 0.0);
      v[name].assign(a.size(), 0.0);
    }
  }
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for parameter " + name);
    if (it->second.shape != p.shape)
      throw DimensionError("adam_step: gradient of " + name + " has shape " + ad::shape_str(it->second.shape) +
                           ", parameter has " + ad::shape_str(p.shape));
    for (double g : it->second.data)
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + name);
  }
  if (state.m.empty()) state = AdamState(params, state.options);

  double scale = 1.0;
  if (state.options.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double x : g.data) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > state.options.clip_norm) scale = state.options.clip_norm / norm;
  }

  state.t += 1;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).data;
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.data[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace condlstmq
