// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condlstmq/errors.hpp"

namespace condlstmq {

/// Daily values; nullopt marks a hole.
using HoleySeries = std::vector<std::optional<double>>;

/// Converts NaN entries to holes.
inline HoleySeries holes_from_nan(std::span<const double> v) {
  HoleySeries s(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isnan(v[i])) s[i] = v[i];
  return s;
}

inline std::size_t longest_hole_run(const HoleySeries& s) {
  std::size_t best = 0, run = 0;
  for (const auto& v : s) {
    run = v ? 0 : run + 1;
    best = std::max(best, run);
  }
  return best;
}

inline std::size_t count_holes(const HoleySeries& s) {
  std::size_t n = 0;
  for (const auto& v : s) n += v ? 0 : 1;
  return n;
}

namespace detail {

/// Indices of the first and last observation; throws on an empty series.
inline std::pair<std::size_t, std::size_t> observed_span(const HoleySeries& s, const char* who) {
  std::size_t first = s.size(), last = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i]) {
      first = std::min(first, i);
      last = i;
    }
  if (first == s.size()) throw DataError(std::string(who) + ": series has no observed values");
  return {first, last};
}

}  // namespace detail

/// Fills each hole from the nearest observed day sharing its weekday
/// (index mod 7); ties go to the past. Holes for which no same-weekday
/// observation exists repeat the first observation (before the observed
/// range), the last one (after it), or take the nearest observed day.
inline std::vector<double> same_day_interpolate(const HoleySeries& s) {
  const auto [first, last] = detail::observed_span(s, "same_day_interpolate");
  const std::size_t n = s.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i]) {
      out[i] = *s[i];
      continue;
    }
    std::optional<double> found;
    for (std::size_t k = 7; !found && (k <= i || i + k < n); k += 7) {
      if (k <= i && s[i - k]) found = s[i - k];
      else if (i + k < n && s[i + k]) found = s[i + k];
    }
    if (!found) {
      if (i < first) found = s[first];
      else if (i > last) found = s[last];
      else {
        for (std::size_t k = 1; !found; ++k) {
          if (k <= i && s[i - k]) found = s[i - k];
          else if (i + k < n && s[i + k]) found = s[i + k];
        }
      }
    }
    out[i] = *found;
  }
  return out;
}

/// Natural cubic spline through (x_j, y_j) with strictly increasing x.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw DataError("spline: need at least two points");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw DataError("spline: abscissae must be strictly increasing");
    m_.assign(n, 0.0);
    if (n == 2) return;
    // Thomas algorithm on the interior second derivatives; M_0 = M_{n-1} = 0.
    const std::size_t k = n - 2;
    std::vector<double> diag(k), upper(k), rhs(k);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x_[i] - x_[i - 1];
      const double h1 = x_[i + 1] - x_[i];
      diag[i - 1] = (h0 + h1) / 3.0;
      upper[i - 1] = h1 / 6.0;
      rhs[i - 1] = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
    }
    for (std::size_t i = 1; i < k; ++i) {
      const double lower = (x_[i + 1] - x_[i]) / 6.0;
      const double w = lower / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m_[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
  }

  /// Evaluates inside [x_0, x_{n-1}]; clamps to the edge values outside.
  [[nodiscard]] double operator()(double t) const {
    if (t <= x_.front()) return y_.front();
    if (t >= x_.back()) return y_.back();
    std::size_t j = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), t) - x_.begin()) - 1;
    const double h = x_[j + 1] - x_[j];
    const double a = (x_[j + 1] - t) / h;
    const double b = (t - x_[j]) / h;
    return a * y_[j] + b * y_[j + 1] + ((a * a * a - a) * m_[j] + (b * b * b - b) * m_[j + 1]) * h * h / 6.0;
  }

  [[nodiscard]] const std::vector<double>& second_derivatives() const { return m_; }

 private:
  std::vector<double> x_, y_, m_;
};

/// Natural cubic spline through the observed points, evaluated at holes;
/// holes outside the observed range repeat the edge value.
inline std::vector<double> spline_interpolate(const HoleySeries& s) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i]) {
      x.push_back(static_cast<double>(i));
      y.push_back(*s[i]);
    }
  if (x.size() < 2) throw DataError("spline_interpolate: need at least two observed points, have " + std::to_string(x.size()));
  const NaturalCubicSpline spline(std::move(x), std::move(y));
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] ? *s[i] : spline(static_cast<double>(i));
  return out;
}

enum class FillMethod { none, same_day, spline };

struct FillResult {
  std::vector<double> values;
  FillMethod method = FillMethod::none;
  std::size_t filled = 0;
};

/// Same-day interpolation when the longest hole run is shorter than
/// `spline_run_threshold` days, spline otherwise.
inline FillResult fill_holes(const HoleySeries& s, std::size_t spline_run_threshold = 14) {
  FillResult r;
  r.filled = count_holes(s);
  if (r.filled == 0) {
    r.values.reserve(s.size());
    for (const auto& v : s) r.values.push_back(*v);
    return r;
  }
  std::size_t observed = s.size() - r.filled;
  if (longest_hole_run(s) >= spline_run_threshold && observed >= 2) {
    r.method = FillMethod::spline;
    r.values = spline_interpolate(s);
  } else {
    r.method = FillMethod::same_day;
    r.values = same_day_interpolate(s);
  }
  return r;
}

}  // namespace condlstmq
