// SPDX-License-Identifier: Apache-2.0
//
// Standalone SVG 1.1 fan chart of one county's quantile trajectories.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/eval.hpp"

namespace condlstmq {

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

struct FanChartOptions {
  double width = 640.0;
  double height = 400.0;
  std::optional<std::vector<double>> truth;  // observed deaths overlay
};

/// SVG document with one polyline per quantile (q10 lightest at the edges,
/// darkest at the median) and an optional truth overlay.
inline std::string fan_chart_svg(const QuantileForecast& f, const FanChartOptions& opt = {}) {
  const std::size_t horizon = f.values.shape.at(0);
  if (horizon == 0) throw ContractError("fan chart: empty forecast");
  const double left = 60.0, right = 20.0, top = 40.0, bottom = 50.0;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;

  double lo = 0.0, hi = 0.0;
  for (double v : f.values.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (opt.truth)
    for (double v : *opt.truth) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  auto x_of = [&](std::size_t d) {
    return left + (horizon == 1 ? 0.5 * pw : pw * static_cast<double>(d) / static_cast<double>(horizon - 1));
  };
  auto y_of = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << detail::fmt2(opt.width) << "\" height=\""
    << detail::fmt2(opt.height) << "\" viewBox=\"0 0 " << detail::fmt2(opt.width) << " " << detail::fmt2(opt.height)
    << "\">\n";
  s << "  <rect x=\"0\" y=\"0\" width=\"" << detail::fmt2(opt.width) << "\" height=\"" << detail::fmt2(opt.height)
    << "\" fill=\"white\"/>\n";
  s << "  <text x=\"" << detail::fmt2(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
    << detail::xml_escape("County " + f.county_id + ", onset " + format_date(f.onset_date)) << "</text>\n";
  // Axes with min/max labels.
  s << "  <line x1=\"" << detail::fmt2(left) << "\" y1=\"" << detail::fmt2(top + ph) << "\" x2=\""
    << detail::fmt2(left + pw) << "\" y2=\"" << detail::fmt2(top + ph) << "\" stroke=\"black\"/>\n";
  s << "  <line x1=\"" << detail::fmt2(left) << "\" y1=\"" << detail::fmt2(top) << "\" x2=\"" << detail::fmt2(left)
    << "\" y2=\"" << detail::fmt2(top + ph) << "\" stroke=\"black\"/>\n";
  s << "  <text x=\"" << detail::fmt2(left - 6) << "\" y=\"" << detail::fmt2(top + 4)
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << detail::fmt2(hi) << "</text>\n";
  s << "  <text x=\"" << detail::fmt2(left - 6) << "\" y=\"" << detail::fmt2(top + ph + 4)
    << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << detail::fmt2(lo) << "</text>\n";
  s << "  <text x=\"" << detail::fmt2(left + pw / 2) << "\" y=\"" << detail::fmt2(opt.height - 12)
    << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">day since onset</text>\n";

  for (std::size_t k = 0; k < kNumQuantiles; ++k) {
    const double dist = std::abs(static_cast<double>(k) - 4.0) / 4.0;  // 0 at the median, 1 at q10/q90
    const int shade = static_cast<int>(std::lround(40.0 + 160.0 * dist));
    char color[16];
    std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
    s << "  <polyline class=\"q" << (k + 1) * 10 << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
      << (k == 4 ? "2.5" : "1.5") << "\" points=\"";
    for (std::size_t d = 0; d < horizon; ++d)
      s << (d ? " " : "") << detail::fmt2(x_of(d)) << "," << detail::fmt2(y_of(f.values.data[d * kNumQuantiles + k]));
    s << "\"/>\n";
  }
  if (opt.truth) {
    s << "  <polyline class=\"truth\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"4,3\" points=\"";
    for (std::size_t d = 0; d < std::min(horizon, opt.truth->size()); ++d)
      s << (d ? " " : "") << detail::fmt2(x_of(d)) << "," << detail::fmt2(y_of((*opt.truth)[d]));
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Reads a forecast CSV and writes the fan chart of `county` to `out_path`.
inline void emit_fan_chart(const std::string& forecast_csv, const std::string& county, const std::string& out_path,
                           const FanChartOptions& opt = {}) {
  const auto forecasts = read_forecast_csv(forecast_csv);
  for (const auto& f : forecasts)
    if (f.county_id == county) {
      write_text_file(out_path, fan_chart_svg(f, opt));
      return;
    }
  std::vector<std::string> ids;
  for (const auto& f : forecasts) ids.push_back(f.county_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  throw DataError("fan chart: county '" + county + "' not in " + forecast_csv + "; candidates: " + detail::joined(ids));
}

}  // namespace condlstmq
