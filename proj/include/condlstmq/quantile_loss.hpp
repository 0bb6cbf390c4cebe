// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "condlstmq/autodiff.hpp"
#include "condlstmq/errors.hpp"

namespace condlstmq {

inline constexpr std::size_t kNumQuantiles = 9;

/// q_i = i/10 for i = 1..9.
inline std::array<double, kNumQuantiles> quantile_grid() {
  std::array<double, kNumQuantiles> q{};
  for (std::size_t i = 0; i < kNumQuantiles; ++i) q[i] = static_cast<double>(i + 1) / 10.0;
  return q;
}

/// Pinball loss max(q*e, (q-1)*e) with e = y - yhat.
inline double pinball(double q, double y, double yhat) {
  if (!(q > 0.0 && q < 1.0)) throw ContractError("pinball: quantile must lie in (0, 1), got " + std::to_string(q));
  const double e = y - yhat;
  return std::max(q * e, (q - 1.0) * e);
}

/// Mean over the horizon of the pinball loss of each quantile column, then
/// averaged over the 9 quantiles. `preds` is row-major [horizon x 9].
inline double avg_quantile_loss(std::span<const double> target, std::span<const double> preds) {
  if (preds.size() != target.size() * kNumQuantiles)
    throw DimensionError("avg_quantile_loss: " + std::to_string(target.size()) + " targets but " +
                         std::to_string(preds.size()) + " predictions (expected horizon x 9)");
  if (target.empty()) throw DimensionError("avg_quantile_loss: empty horizon");
  const auto q = quantile_grid();
  double total = 0.0;
  for (std::size_t k = 0; k < kNumQuantiles; ++k) {
    double s = 0.0;
    for (std::size_t d = 0; d < target.size(); ++d) s += pinball(q[k], target[d], preds[d * kNumQuantiles + k]);
    total += s / static_cast<double>(target.size());
  }
  return total / static_cast<double>(kNumQuantiles);
}

/// Elementwise pinball loss on the tape.
inline ad::Var pinball(double q, const ad::Var& y, const ad::Var& yhat) {
  if (!(q > 0.0 && q < 1.0)) throw ContractError("pinball: quantile must lie in (0, 1), got " + std::to_string(q));
  const ad::Var e = ad::sub(y, yhat);
  return ad::maximum(ad::scale(e, q), ad::scale(e, q - 1.0));
}

/// Differentiable batch loss: `target` is [B x horizon], `heads[k]` the
/// [B x horizon] prediction for quantile q_k. Result is the mean over batch
/// and horizon, averaged over quantiles.
inline ad::Var avg_quantile_loss(const ad::Var& target, std::span<const ad::Var> heads) {
  if (heads.size() != kNumQuantiles)
    throw DimensionError("avg_quantile_loss: expected 9 heads, got " + std::to_string(heads.size()));
  const auto q = quantile_grid();
  ad::Var total;
  for (std::size_t k = 0; k < kNumQuantiles; ++k) {
    ad::Var term = ad::mean(pinball(q[k], target, heads[k]));
    total = k == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, 1.0 / static_cast<double>(kNumQuantiles));
}

}  // namespace condlstmq
