// SPDX-License-Identifier: Apache-2.0
//
// Multiplicative weekly seasonality by ratio to a centered moving average.
// A 2x52 moving average (span 53, half-weight endpoints) estimates the trend
// at each week; value / trend is averaged per week-of-year across years and
// rescaled so the 52 indices have mean 1.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "condlstmq/csv.hpp"
#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"

namespace condlstmq {

inline constexpr std::size_t kWeeksPerCycle = 52;

using WeeklyIndex = std::array<double, kWeeksPerCycle>;

/// One weekly observation of a state-wide rate. `week` is 1-based (1..53).
struct WeeklyObservation {
  std::string state;
  int year = 0;
  int week = 0;
  double value = 0.0;
};

struct SeasonalityIndex {
  std::map<std::string, WeeklyIndex> by_state;
  WeeklyIndex national{};
  std::vector<std::string> warnings;

  [[nodiscard]] const WeeklyIndex& for_state(const std::string& state) const {
    auto it = by_state.find(state);
    return it == by_state.end() ? national : it->second;
  }

  /// Daily expansion: the week-of-year index holds for every day of that week.
  [[nodiscard]] double daily(const std::string& state, Date d) const { return for_state(state)[week_of_year(d)]; }
};

/// Ratio-to-moving-average index of one chronologically ordered weekly
/// series; nullopt when some week-of-year never receives a ratio.
inline std::optional<WeeklyIndex> ratio_to_moving_average(const std::vector<double>& values,
                                                          const std::vector<int>& week_of_cycle) {
  const std::size_t n = values.size();
  constexpr std::size_t half = kWeeksPerCycle / 2;
  std::array<double, kWeeksPerCycle> sums{};
  std::array<std::size_t, kWeeksPerCycle> counts{};
  for (std::size_t t = half; t + half < n; ++t) {
    double s = 0.5 * (values[t - half] + values[t + half]);
    for (std::size_t j = t - half + 1; j < t + half; ++j) s += values[j];
    const double trend = s / static_cast<double>(kWeeksPerCycle);
    const auto w = static_cast<std::size_t>(week_of_cycle[t]);
    sums[w] += values[t] / trend;
    counts[w] += 1;
  }
  WeeklyIndex idx{};
  for (std::size_t w = 0; w < kWeeksPerCycle; ++w) {
    if (counts[w] == 0) return std::nullopt;
    idx[w] = sums[w] / static_cast<double>(counts[w]);
  }
  const double mean = std::accumulate(idx.begin(), idx.end(), 0.0) / static_cast<double>(kWeeksPerCycle);
  for (auto& v : idx) v /= mean;
  return idx;
}

/// Per-state indices; states with fewer than two full cycles (or gaps in
/// week coverage) fall back to the national index with a warning.
inline SeasonalityIndex extract_seasonality(const std::vector<WeeklyObservation>& rows) {
  if (rows.empty()) throw DataError("extract_seasonality: no observations");
  for (const auto& r : rows)
    if (!(r.value > 0.0))
      throw DataError("extract_seasonality: non-positive rate for state " + r.state + " " + std::to_string(r.year) +
                      "-W" + std::to_string(r.week));

  auto fold = [](int week) { return std::clamp(week, 1, static_cast<int>(kWeeksPerCycle)) - 1; };
  std::map<std::string, std::map<std::pair<int, int>, double>> series;
  std::map<std::pair<int, int>, std::pair<double, std::size_t>> national_acc;
  for (const auto& r : rows) {
    series[r.state][{r.year, r.week}] = r.value;
    auto& acc = national_acc[{r.year, r.week}];
    acc.first += r.value;
    acc.second += 1;
  }

  auto index_of = [&](const std::map<std::pair<int, int>, double>& s) {
    std::vector<double> values;
    std::vector<int> weeks;
    for (const auto& [key, v] : s) {
      values.push_back(v);
      weeks.push_back(fold(key.second));
    }
    if (values.size() < 2 * kWeeksPerCycle) return std::optional<WeeklyIndex>{};
    return ratio_to_moving_average(values, weeks);
  };

  SeasonalityIndex out;
  std::map<std::pair<int, int>, double> national_series;
  for (const auto& [key, acc] : national_acc) national_series[key] = acc.first / static_cast<double>(acc.second);
  auto national = index_of(national_series);
  if (!national) throw DataError("extract_seasonality: fewer than two complete yearly cycles even nationally");
  out.national = *national;

  for (const auto& [state, s] : series) {
    if (auto idx = index_of(s)) {
      out.by_state[state] = *idx;
    } else {
      out.warnings.push_back("state " + state + ": insufficient history for seasonality, using national index");
    }
  }
  return out;
}

/// Reads the weekly pneumonia-and-influenza file: columns state_fips, year, week, rate.
inline std::vector<WeeklyObservation> load_weekly_rates(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto cs = t.column("state_fips"), cy = t.column("year"), cw = t.column("week"), cr = t.column("rate");
  std::vector<WeeklyObservation> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = path + ":" + std::to_string(t.line_numbers[i]);
    WeeklyObservation o;
    o.state = csv::normalize_fips(r[cs], 2);
    if (o.state.empty()) throw ParseError(where + ": bad state FIPS '" + r[cs] + "'");
    const auto y = csv::parse_number(r[cy], where);
    const auto w = csv::parse_number(r[cw], where);
    const auto v = csv::parse_number(r[cr], where);
    if (!y || !w) throw ParseError(where + ": missing year or week");
    if (!v) continue;
    o.year = static_cast<int>(*y);
    o.week = static_cast<int>(*w);
    if (o.week < 1 || o.week > 53) throw ParseError(where + ": week out of range");
    o.value = *v;
    rows.push_back(o);
  }
  if (rows.empty()) throw DataError(path + ": no data rows");
  return rows;
}

}  // namespace condlstmq
