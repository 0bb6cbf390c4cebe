// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/interpolate.hpp"
#include "condlstmq/model.hpp"

namespace condlstmq {

inline constexpr int kPanelFormatVersion = 1;
inline const std::string kDeathsFeature = "new_deaths";

struct FeatureStats {
  double mean = 0.0;
  double std = 1.0;
  bool zero_variance = false;
  bool operator==(const FeatureStats&) const = default;
};

/// Per-feature statistics used to standardize a panel.
struct StandardizationStats {
  std::vector<FeatureStats> ts;
  std::vector<FeatureStats> cat;
  std::size_t train_dates = 0;  // leading dates the ts statistics were computed on
  bool operator==(const StandardizationStats&) const = default;

  [[nodiscard]] std::vector<std::size_t> flagged_ts() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ts.size(); ++i)
      if (ts[i].zero_variance) out.push_back(i);
    return out;
  }
};

/// County x date x feature panel plus static county features.
/// Missing time-series values are NaN until the panel is filled.
struct CountyPanel {
  std::vector<std::string> county_ids;
  std::map<std::string, std::string> state_of;
  std::vector<Date> dates;
  std::vector<std::string> ts_feature_names;
  std::vector<std::string> cat_feature_names;
  std::vector<double> ts;   // [county][date][feature]
  std::vector<double> cat;  // [county][feature]
  std::optional<StandardizationStats> stats;

  [[nodiscard]] std::size_t n_counties() const { return county_ids.size(); }
  [[nodiscard]] std::size_t n_dates() const { return dates.size(); }
  [[nodiscard]] std::size_t n_ts() const { return ts_feature_names.size(); }
  [[nodiscard]] std::size_t n_cat() const { return cat_feature_names.size(); }

  [[nodiscard]] std::size_t ts_index(std::size_t c, std::size_t d, std::size_t f) const {
    return (c * n_dates() + d) * n_ts() + f;
  }
  double& ts_at(std::size_t c, std::size_t d, std::size_t f) { return ts[ts_index(c, d, f)]; }
  [[nodiscard]] double ts_at(std::size_t c, std::size_t d, std::size_t f) const { return ts[ts_index(c, d, f)]; }
  double& cat_at(std::size_t c, std::size_t f) { return cat[c * n_cat() + f]; }
  [[nodiscard]] double cat_at(std::size_t c, std::size_t f) const { return cat[c * n_cat() + f]; }

  [[nodiscard]] std::optional<std::size_t> find_ts(const std::string& name) const {
    for (std::size_t i = 0; i < ts_feature_names.size(); ++i)
      if (ts_feature_names[i] == name) return i;
    return std::nullopt;
  }
  [[nodiscard]] std::optional<std::size_t> find_cat(const std::string& name) const {
    for (std::size_t i = 0; i < cat_feature_names.size(); ++i)
      if (cat_feature_names[i] == name) return i;
    return std::nullopt;
  }
  [[nodiscard]] std::size_t deaths_feature() const {
    if (auto f = find_ts(kDeathsFeature)) return *f;
    throw DataError("panel has no '" + kDeathsFeature + "' time-series feature");
  }
  [[nodiscard]] std::optional<std::size_t> date_index(Date d) const {
    if (dates.empty()) return std::nullopt;
    const long off = days_between(dates.front(), d);
    if (off < 0 || static_cast<std::size_t>(off) >= dates.size()) return std::nullopt;
    return static_cast<std::size_t>(off);
  }

  [[nodiscard]] std::size_t missing_count() const {
    std::size_t n = 0;
    for (double v : ts) n += std::isnan(v) ? 1 : 0;
    for (double v : cat) n += std::isnan(v) ? 1 : 0;
    return n;
  }

  /// Throws unless array sizes, date contiguity and state mapping are consistent.
  void validate() const {
    if (ts.size() != n_counties() * n_dates() * n_ts())
      throw DimensionError("panel: ts holds " + std::to_string(ts.size()) + " values, expected " +
                           std::to_string(n_counties() * n_dates() * n_ts()));
    if (cat.size() != n_counties() * n_cat())
      throw DimensionError("panel: cat holds " + std::to_string(cat.size()) + " values, expected " +
                           std::to_string(n_counties() * n_cat()));
    for (std::size_t i = 1; i < dates.size(); ++i)
      if (days_between(dates[i - 1], dates[i]) != 1)
        throw DataError("panel: dates not consecutive at " + format_date(dates[i]));
    for (const auto& c : county_ids)
      if (state_of.find(c) == state_of.end()) throw DataError("panel: county " + c + " has no state");
    if (stats && (stats->ts.size() != n_ts() || stats->cat.size() != n_cat()))
      throw DimensionError("panel: standardization stats do not match feature counts");
  }
};

/// State code of a county FIPS (first two digits).
inline std::string state_of_fips(const std::string& fips) {
  if (fips.size() != 5) throw DataError("malformed county FIPS '" + fips + "'");
  return fips.substr(0, 2);
}

// ---------------------------------------------------------------------------
// Standardization

namespace detail {

inline FeatureStats population_stats(const std::vector<double>& v) {
  FeatureStats s;
  if (v.empty()) return s;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  s.mean = mean;
  s.std = std::sqrt(var);
  s.zero_variance = !(s.std > 0.0);
  if (s.zero_variance) s.std = 0.0;
  return s;
}

inline double apply(const FeatureStats& s, double x) { return s.zero_variance ? 0.0 : (x - s.mean) / s.std; }
inline double invert(const FeatureStats& s, double x) { return s.zero_variance ? s.mean : x * s.std + s.mean; }

}  // namespace detail

/// Standardizes a hole-free raw panel: ts statistics over the first
/// `train_dates` dates of every county, cat statistics over all counties.
/// Population standard deviation; zero-variance features map to 0 and are flagged.
inline CountyPanel standardize(const CountyPanel& raw, std::size_t train_dates) {
  raw.validate();
  if (raw.stats) throw ContractError("standardize: panel is already standardized");
  if (raw.missing_count() != 0) throw ContractError("standardize: panel has missing values");
  if (train_dates == 0 || train_dates > raw.n_dates())
    throw ContractError("standardize: training range of " + std::to_string(train_dates) + " dates invalid for " +
                        std::to_string(raw.n_dates()) + "-date panel");
  StandardizationStats stats;
  stats.train_dates = train_dates;
  for (std::size_t f = 0; f < raw.n_ts(); ++f) {
    std::vector<double> v;
    v.reserve(raw.n_counties() * train_dates);
    for (std::size_t c = 0; c < raw.n_counties(); ++c)
      for (std::size_t d = 0; d < train_dates; ++d) v.push_back(raw.ts_at(c, d, f));
    stats.ts.push_back(detail::population_stats(v));
  }
  for (std::size_t f = 0; f < raw.n_cat(); ++f) {
    std::vector<double> v;
    for (std::size_t c = 0; c < raw.n_counties(); ++c) v.push_back(raw.cat_at(c, f));
    stats.cat.push_back(detail::population_stats(v));
  }
  CountyPanel out = raw;
  for (std::size_t c = 0; c < out.n_counties(); ++c) {
    for (std::size_t d = 0; d < out.n_dates(); ++d)
      for (std::size_t f = 0; f < out.n_ts(); ++f) out.ts_at(c, d, f) = detail::apply(stats.ts[f], raw.ts_at(c, d, f));
    for (std::size_t f = 0; f < out.n_cat(); ++f) out.cat_at(c, f) = detail::apply(stats.cat[f], raw.cat_at(c, f));
  }
  out.stats = std::move(stats);
  return out;
}

/// Re-standardizes a raw panel with existing statistics.
inline CountyPanel apply_stats(const CountyPanel& raw, const StandardizationStats& stats) {
  if (raw.stats) throw ContractError("apply_stats: panel is already standardized");
  if (stats.ts.size() != raw.n_ts() || stats.cat.size() != raw.n_cat())
    throw DimensionError("apply_stats: statistics cover " + std::to_string(stats.ts.size()) + "/" +
                         std::to_string(stats.cat.size()) + " features, panel has " + std::to_string(raw.n_ts()) +
                         "/" + std::to_string(raw.n_cat()));
  CountyPanel out = raw;
  for (std::size_t i = 0; i < out.ts.size(); ++i) out.ts[i] = detail::apply(stats.ts[i % raw.n_ts()], raw.ts[i]);
  if (raw.n_cat() > 0)
    for (std::size_t i = 0; i < out.cat.size(); ++i) out.cat[i] = detail::apply(stats.cat[i % raw.n_cat()], raw.cat[i]);
  out.stats = stats;
  return out;
}

/// Inverse of standardize (zero-variance features return their mean).
inline CountyPanel destandardize(const CountyPanel& p) {
  if (!p.stats) return p;
  CountyPanel out = p;
  const auto& s = *p.stats;
  for (std::size_t i = 0; i < out.ts.size(); ++i) out.ts[i] = detail::invert(s.ts[i % p.n_ts()], p.ts[i]);
  if (p.n_cat() > 0)
    for (std::size_t i = 0; i < out.cat.size(); ++i) out.cat[i] = detail::invert(s.cat[i % p.n_cat()], p.cat[i]);
  out.stats.reset();
  return out;
}

/// Panel on the scale of `stats`, whatever the scale of `p`.
inline CountyPanel rescale_to(const CountyPanel& p, const StandardizationStats& stats) {
  if (p.stats && *p.stats == stats) return p;
  return apply_stats(destandardize(p), stats);
}

// ---------------------------------------------------------------------------
// Hole filling across a whole panel

struct PanelFillReport {
  std::size_t same_day_filled = 0;
  std::size_t spline_filled = 0;
  std::size_t series_filled = 0;
};

/// Fills every NaN run in every (county, feature) series.
inline PanelFillReport fill_panel_holes(CountyPanel& p, std::size_t spline_run_threshold = 14) {
  PanelFillReport r;
  std::vector<double> series(p.n_dates());
  for (std::size_t c = 0; c < p.n_counties(); ++c)
    for (std::size_t f = 0; f < p.n_ts(); ++f) {
      for (std::size_t d = 0; d < p.n_dates(); ++d) series[d] = p.ts_at(c, d, f);
      const HoleySeries s = holes_from_nan(series);
      if (count_holes(s) == 0) continue;
      const auto res = fill_holes(s, spline_run_threshold);
      for (std::size_t d = 0; d < p.n_dates(); ++d) p.ts_at(c, d, f) = res.values[d];
      (res.method == FillMethod::spline ? r.spline_filled : r.same_day_filled) += res.filled;
      r.series_filled += 1;
    }
  return r;
}

// ---------------------------------------------------------------------------
// Windowing

/// Number of windows with history `h` and horizon `k` in `n` dates.
inline std::size_t window_count(std::size_t n, std::size_t h, std::size_t k) { return n >= h + k ? n - (h + k) + 1 : 0; }

/// Samples whose full window [onset - history, onset + horizon) lies in
/// dates [first, last]; ordered by county, then onset.
inline std::vector<WindowSample> make_windows_in(const CountyPanel& p, std::size_t history, std::size_t horizon,
                                                 std::size_t first, std::size_t last) {
  const std::size_t span = history + horizon;
  if (last >= p.n_dates() || last < first || last - first + 1 < span)
    throw DataError("make_windows: date range of " + std::to_string(last >= first ? last - first + 1 : 0) +
                    " days is shorter than history + horizon = " + std::to_string(span));
  const std::size_t deaths = p.deaths_feature();
  std::vector<WindowSample> out;
  out.reserve(p.n_counties() * window_count(last - first + 1, history, horizon));
  for (std::size_t c = 0; c < p.n_counties(); ++c) {
    std::vector<double> categorical(p.cat.begin() + static_cast<std::ptrdiff_t>(c * p.n_cat()),
                                    p.cat.begin() + static_cast<std::ptrdiff_t>((c + 1) * p.n_cat()));
    for (std::size_t onset = first + history; onset + horizon <= last + 1; ++onset) {
      WindowSample s;
      s.county_id = p.county_ids[c];
      s.onset = onset;
      s.categorical = categorical;
      s.history.reserve(history * p.n_ts());
      for (std::size_t d = onset - history; d < onset; ++d)
        for (std::size_t f = 0; f < p.n_ts(); ++f) s.history.push_back(p.ts_at(c, d, f));
      for (std::size_t d = onset; d < onset + horizon; ++d) s.target.push_back(p.ts_at(c, d, deaths));
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Every window of the panel: n_counties * (n_dates - history - horizon + 1) samples.
inline std::vector<WindowSample> make_windows(const CountyPanel& p, std::size_t history = 7, std::size_t horizon = 14) {
  if (p.n_dates() < history + horizon)
    throw DataError("make_windows: panel has " + std::to_string(p.n_dates()) + " dates, needs at least " +
                    std::to_string(history + horizon));
  return make_windows_in(p, history, horizon, 0, p.n_dates() - 1);
}

/// One sample per county with the given onset; the target is left empty
/// when it runs past the end of the panel.
inline std::vector<WindowSample> samples_at_onset(const CountyPanel& p, std::size_t onset, std::size_t history,
                                                  std::size_t horizon) {
  if (onset < history)
    throw DataError("onset " + (onset < p.n_dates() ? format_date(p.dates[onset]) : std::to_string(onset)) +
                    " leaves fewer than " + std::to_string(history) + " history days in the panel");
  if (onset > p.n_dates()) throw DataError("onset lies beyond the day after the last panel date");
  const std::size_t deaths = p.deaths_feature();
  const bool has_target = onset + horizon <= p.n_dates();
  std::vector<WindowSample> out;
  for (std::size_t c = 0; c < p.n_counties(); ++c) {
    WindowSample s;
    s.county_id = p.county_ids[c];
    s.onset = onset;
    s.categorical.assign(p.cat.begin() + static_cast<std::ptrdiff_t>(c * p.n_cat()),
                         p.cat.begin() + static_cast<std::ptrdiff_t>((c + 1) * p.n_cat()));
    for (std::size_t d = onset - history; d < onset; ++d)
      for (std::size_t f = 0; f < p.n_ts(); ++f) s.history.push_back(p.ts_at(c, d, f));
    if (has_target)
      for (std::size_t d = onset; d < onset + horizon; ++d) s.target.push_back(p.ts_at(c, d, deaths));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline double number_from(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw ParseError("panel: expected number, found " + std::string(j.type_name()));
  return j.get<double>();
}

inline nlohmann::json stats_to_json(const std::vector<FeatureStats>& s, const std::vector<std::string>& names) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < s.size(); ++i)
    out[names[i]] = {{"mean", s[i].mean}, {"std", s[i].std}, {"zero_variance", s[i].zero_variance}};
  return out;
}

inline std::vector<FeatureStats> stats_from_json(const nlohmann::json& j, const std::vector<std::string>& names) {
  std::vector<FeatureStats> out;
  for (const auto& n : names) {
    if (!j.contains(n)) throw ParseError("standardization stats lack feature '" + n + "'");
    const auto& e = j.at(n);
    out.push_back({e.at("mean").get<double>(), e.at("std").get<double>(), e.at("zero_variance").get<bool>()});
  }
  return out;
}

}  // namespace detail

inline nlohmann::json stats_to_json(const StandardizationStats& s, const std::vector<std::string>& ts_names,
                                    const std::vector<std::string>& cat_names) {
  return {{"train_dates", s.train_dates},
          {"ts", detail::stats_to_json(s.ts, ts_names)},
          {"cat", detail::stats_to_json(s.cat, cat_names)}};
}

inline StandardizationStats stats_from_json(const nlohmann::json& j, const std::vector<std::string>& ts_names,
                                            const std::vector<std::string>& cat_names) {
  StandardizationStats s;
  s.train_dates = j.at("train_dates").get<std::size_t>();
  s.ts = detail::stats_from_json(j.at("ts"), ts_names);
  s.cat = detail::stats_from_json(j.at("cat"), cat_names);
  return s;
}

inline nlohmann::json panel_to_json(const CountyPanel& p) {
  p.validate();
  nlohmann::json j;
  j["version"] = kPanelFormatVersion;
  j["county_ids"] = p.county_ids;
  j["state_of"] = p.state_of;
  std::vector<std::string> dates;
  for (auto d : p.dates) dates.push_back(format_date(d));
  j["dates"] = dates;
  j["ts_feature_names"] = p.ts_feature_names;
  j["cat_feature_names"] = p.cat_feature_names;
  nlohmann::json ts = nlohmann::json::array();
  for (std::size_t c = 0; c < p.n_counties(); ++c) {
    nlohmann::json county = nlohmann::json::array();
    for (std::size_t d = 0; d < p.n_dates(); ++d) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t f = 0; f < p.n_ts(); ++f) row.push_back(detail::number_or_null(p.ts_at(c, d, f)));
      county.push_back(std::move(row));
    }
    ts.push_back(std::move(county));
  }
  j["ts"] = std::move(ts);
  nlohmann::json cat = nlohmann::json::array();
  for (std::size_t c = 0; c < p.n_counties(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t f = 0; f < p.n_cat(); ++f) row.push_back(detail::number_or_null(p.cat_at(c, f)));
    cat.push_back(std::move(row));
  }
  j["cat"] = std::move(cat);
  j["standardization_stats"] = p.stats ? stats_to_json(*p.stats, p.ts_feature_names, p.cat_feature_names)
                                       : nlohmann::json(nullptr);
  return j;
}

inline CountyPanel panel_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kPanelFormatVersion)
      throw DataError("panel: unsupported version " + j.at("version").dump());
    CountyPanel p;
    p.county_ids = j.at("county_ids").get<std::vector<std::string>>();
    p.state_of = j.at("state_of").get<std::map<std::string, std::string>>();
    for (const auto& d : j.at("dates")) p.dates.push_back(parse_date(d.get<std::string>()));
    p.ts_feature_names = j.at("ts_feature_names").get<std::vector<std::string>>();
    p.cat_feature_names = j.at("cat_feature_names").get<std::vector<std::string>>();
    const auto& ts = j.at("ts");
    if (ts.size() != p.n_counties()) throw DimensionError("panel: ts has " + std::to_string(ts.size()) + " counties");
    p.ts.reserve(p.n_counties() * p.n_dates() * p.n_ts());
    for (const auto& county : ts) {
      if (county.size() != p.n_dates()) throw DimensionError("panel: ts county row has wrong date count");
      for (const auto& row : county) {
        if (row.size() != p.n_ts()) throw DimensionError("panel: ts row has wrong feature count");
        for (const auto& v : row) p.ts.push_back(detail::number_from(v));
      }
    }
    const auto& cat = j.at("cat");
    if (cat.size() != p.n_counties()) throw DimensionError("panel: cat has " + std::to_string(cat.size()) + " counties");
    for (const auto& row : cat) {
      if (row.size() != p.n_cat()) throw DimensionError("panel: cat row has wrong feature count");
      for (const auto& v : row) p.cat.push_back(detail::number_from(v));
    }
    if (j.contains("standardization_stats") && !j.at("standardization_stats").is_null())
      p.stats = stats_from_json(j.at("standardization_stats"), p.ts_feature_names, p.cat_feature_names);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("panel: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed for " + path);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) { write_text_file(path, j.dump() + "\n"); }

inline CountyPanel load_panel(const std::string& path) { return panel_from_json(read_json_file(path)); }
inline void save_panel(const std::string& path, const CountyPanel& p) { write_json_file(path, panel_to_json(p)); }

}  // namespace condlstmq
