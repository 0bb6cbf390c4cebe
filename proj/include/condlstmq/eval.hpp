// SPDX-License-Identifier: Apache-2.0
//
// Forecast generation and the evaluation analyses: pinball scoring, state
// and national aggregation, RMSE against a zero control, paired model
// comparison, permutation importance and categorical sensitivity.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "condlstmq/csv.hpp"
#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/model.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/quantile_loss.hpp"
#include "condlstmq/stats_tests.hpp"
#include "condlstmq/train.hpp"

namespace condlstmq {

/// Per-county forecast on the death-count scale.
struct QuantileForecast {
  std::string county_id;
  Date onset_date;
  ad::Array values;  // [horizon x 9], quantile axis q = 0.1 .. 0.9
};

/// county -> daily series.
using SeriesMap = std::map<std::string, std::vector<double>>;

struct PredictOptions {
  bool clamp_zero = false;      // clip negative counts at 0 (reporting only)
  bool sort_quantiles = false;  // ascending sort per day (reporting only)
};

inline FeatureStats deaths_stats(const Checkpoint& ck) {
  if (!ck.stats) return FeatureStats{0.0, 1.0, false};
  for (std::size_t f = 0; f < ck.ts_feature_names.size(); ++f)
    if (ck.ts_feature_names[f] == kDeathsFeature) return ck.stats->ts.at(f);
  throw DataError("checkpoint has no '" + kDeathsFeature + "' feature");
}

/// Puts a panel on the checkpoint's standardized scale, checking features match.
inline CountyPanel align_panel(const CountyPanel& panel, const Checkpoint& ck) {
  if (panel.ts_feature_names != ck.ts_feature_names || panel.cat_feature_names != ck.cat_feature_names)
    throw DataError("panel features do not match the checkpoint's feature lists");
  if (!ck.stats) {
    if (panel.stats) throw DataError("checkpoint has no standardization stats but the panel is standardized");
    return panel;
  }
  return rescale_to(panel, *ck.stats);
}

/// Model outputs for the samples, destandardized to death counts.
inline std::vector<QuantileForecast> forecasts_from_samples(std::span<const WindowSample> samples, const CountyPanel& panel,
                                                            const Checkpoint& ck, const PredictOptions& opts = {}) {
  const auto preds = predict_samples(samples, ck.params, ck.config);
  const FeatureStats ds = deaths_stats(ck);
  std::vector<QuantileForecast> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    QuantileForecast f;
    f.county_id = samples[i].county_id;
    f.onset_date = add_days(panel.dates.front(), static_cast<long>(samples[i].onset));
    f.values = preds[i];
    for (auto& v : f.values.data) v = detail::invert(ds, v);
    if (opts.sort_quantiles) sort_quantiles_per_day(f.values);
    if (opts.clamp_zero)
      for (auto& v : f.values.data) v = std::max(0.0, v);
    out.push_back(std::move(f));
  }
  return out;
}

/// Onset index for a date; the day after the last panel date is allowed.
inline std::size_t onset_index(const CountyPanel& p, Date onset) {
  const long off = days_between(p.dates.front(), onset);
  if (off < 0 || static_cast<std::size_t>(off) > p.n_dates())
    throw DataError("onset " + format_date(onset) + " lies outside the panel dates " + format_date(p.dates.front()) +
                    " .. " + format_date(p.dates.back()));
  return static_cast<std::size_t>(off);
}

/// One forecast per county in inference mode.
inline std::vector<QuantileForecast> predict(const Checkpoint& ck, const CountyPanel& panel, Date onset,
                                             const PredictOptions& opts = {}) {
  const CountyPanel p = align_panel(panel, ck);
  const auto samples = samples_at_onset(p, onset_index(p, onset), ck.config.history_len, ck.config.horizon);
  return forecasts_from_samples(samples, p, ck, opts);
}

/// Observed deaths (raw counts) for the forecast window of each county.
inline SeriesMap truth_at(const CountyPanel& panel, std::size_t onset, std::size_t horizon) {
  if (onset + horizon > panel.n_dates())
    throw DataError("truth: panel ends " + format_date(panel.dates.back()) + ", before the end of the " +
                    std::to_string(horizon) + "-day window");
  const CountyPanel raw = destandardize(panel);
  const std::size_t f = raw.deaths_feature();
  SeriesMap out;
  for (std::size_t c = 0; c < raw.n_counties(); ++c) {
    auto& v = out[raw.county_ids[c]];
    for (std::size_t d = onset; d < onset + horizon; ++d) v.push_back(raw.ts_at(c, d, f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forecast CSV

inline void write_forecast_csv(std::ostream& os, const std::vector<QuantileForecast>& forecasts) {
  os << "fips,onset_date,day_index";
  for (std::size_t k = 1; k <= kNumQuantiles; ++k) os << ",q" << k * 10;
  os << "\n";
  char buf[64];
  for (const auto& f : forecasts) {
    const std::size_t horizon = f.values.shape.at(0);
    for (std::size_t d = 0; d < horizon; ++d) {
      os << f.county_id << ',' << format_date(f.onset_date) << ',' << d;
      for (std::size_t k = 0; k < kNumQuantiles; ++k) {
        std::snprintf(buf, sizeof buf, ",%.17g", f.values.data[d * kNumQuantiles + k]);
        os << buf;
      }
      os << "\n";
    }
  }
}

inline void write_forecast_csv(const std::string& path, const std::vector<QuantileForecast>& forecasts) {
  std::ostringstream ss;
  write_forecast_csv(ss, forecasts);
  write_text_file(path, ss.str());
}

inline std::vector<QuantileForecast> read_forecast_csv(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto cf = t.column("fips"), co = t.column("onset_date"), cd = t.column("day_index");
  std::array<std::size_t, kNumQuantiles> cq{};
  for (std::size_t k = 0; k < kNumQuantiles; ++k) cq[k] = t.column("q" + std::to_string((k + 1) * 10));
  std::vector<QuantileForecast> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<std::vector<std::array<double, kNumQuantiles>>> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = path + ":" + std::to_string(t.line_numbers[i]);
    const auto day = csv::parse_number(r[cd], where);
    if (!day || *day < 0) throw ParseError(where + ": bad day_index");
    auto key = std::make_pair(r[cf], r[co]);
    auto it = index.find(key);
    if (it == index.end()) {
      QuantileForecast f;
      f.county_id = r[cf];
      try {
        f.onset_date = parse_date(r[co]);
      } catch (const ParseError& e) {
        throw ParseError(where + ": " + e.what());
      }
      it = index.emplace(key, out.size()).first;
      out.push_back(std::move(f));
      rows.emplace_back();
    }
    auto& series = rows[it->second];
    const auto d = static_cast<std::size_t>(*day);
    if (d != series.size()) throw ParseError(where + ": day_index out of sequence");
    std::array<double, kNumQuantiles> q{};
    for (std::size_t k = 0; k < kNumQuantiles; ++k) {
      const auto v = csv::parse_number(r[cq[k]], where);
      if (!v) throw ParseError(where + ": missing quantile value");
      q[k] = *v;
    }
    series.push_back(q);
  }
  if (out.empty()) throw DataError(path + ": no data rows");
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].values = ad::Array::zeros({rows[i].size(), kNumQuantiles});
    for (std::size_t d = 0; d < rows[i].size(); ++d)
      std::copy(rows[i][d].begin(), rows[i][d].end(), out[i].values.data.begin() + static_cast<std::ptrdiff_t>(d * kNumQuantiles));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct PinballEval {
  std::map<std::string, double> per_county;
  double mean = 0.0;
};

/// Per-county average quantile loss on the standardized scale given by `deaths`.
inline PinballEval eval_pinball(const std::vector<QuantileForecast>& forecasts, const SeriesMap& truth,
                                const FeatureStats& deaths) {
  if (forecasts.empty()) throw ContractError("eval_pinball: no forecasts");
  if (deaths.zero_variance) throw DataError("eval_pinball: deaths feature has zero variance");
  PinballEval r;
  for (const auto& f : forecasts) {
    auto it = truth.find(f.county_id);
    const std::size_t horizon = f.values.shape.at(0);
    if (it == truth.end() || it->second.size() < horizon)
      throw DataError("eval_pinball: missing truth days for county " + f.county_id);
    std::vector<double> y(horizon), p(f.values.data.size());
    for (std::size_t d = 0; d < horizon; ++d) y[d] = detail::apply(deaths, it->second[d]);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = detail::apply(deaths, f.values.data[i]);
    r.per_county[f.county_id] = avg_quantile_loss(y, p);
  }
  // Summation in county-id order, so the mean does not depend on input order.
  for (const auto& [c, v] : r.per_county) r.mean += v;
  r.mean /= static_cast<double>(r.per_county.size());
  return r;
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw DimensionError("rmse: length " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
  if (pred.empty()) throw ContractError("rmse: empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double zero_control(std::span<const double> truth) {
  const std::vector<double> zeros(truth.size(), 0.0);
  return rmse(zeros, truth);
}

/// Mean over the 9 quantile columns per day.
inline std::vector<double> quantile_mean(const QuantileForecast& f) {
  const std::size_t horizon = f.values.shape.at(0);
  std::vector<double> out(horizon, 0.0);
  for (std::size_t d = 0; d < horizon; ++d) {
    for (std::size_t k = 0; k < kNumQuantiles; ++k) out[d] += f.values.data[d * kNumQuantiles + k];
    out[d] /= static_cast<double>(kNumQuantiles);
  }
  return out;
}

/// Sums county series into their states (first two FIPS digits).
inline SeriesMap aggregate_state(const SeriesMap& county_series) {
  SeriesMap out;
  for (const auto& [county, v] : county_series) {
    auto& acc = out[state_of_fips(county)];
    if (acc.empty()) acc.assign(v.size(), 0.0);
    if (acc.size() != v.size()) throw DimensionError("aggregate_state: series lengths differ within state " + state_of_fips(county));
    for (std::size_t d = 0; d < v.size(); ++d) acc[d] += v[d];
  }
  return out;
}

/// Forecast variant: quantile columns averaged per county-day, then summed.
inline SeriesMap aggregate_state(const std::vector<QuantileForecast>& forecasts) {
  SeriesMap county;
  for (const auto& f : forecasts) county[f.county_id] = quantile_mean(f);
  return aggregate_state(county);
}

inline std::vector<double> national_series(const SeriesMap& state_series) {
  std::vector<double> out;
  for (const auto& [s, v] : state_series) {
    if (out.empty()) out.assign(v.size(), 0.0);
    if (out.size() != v.size()) throw DimensionError("national_series: series lengths differ");
    for (std::size_t d = 0; d < v.size(); ++d) out[d] += v[d];
  }
  return out;
}

/// Fraction of (county, day) pairs with truth <= predicted quantile, per quantile.
inline std::array<double, kNumQuantiles> empirical_coverage(const std::vector<QuantileForecast>& forecasts,
                                                            const SeriesMap& truth, bool sort = true) {
  std::array<double, kNumQuantiles> hits{};
  std::size_t n = 0;
  for (const auto& f : forecasts) {
    ad::Array v = f.values;
    if (sort) sort_quantiles_per_day(v);
    const auto& y = truth.at(f.county_id);
    const std::size_t horizon = v.shape.at(0);
    for (std::size_t d = 0; d < horizon; ++d, ++n)
      for (std::size_t k = 0; k < kNumQuantiles; ++k) hits[k] += y.at(d) <= v.data[d * kNumQuantiles + k] ? 1.0 : 0.0;
  }
  if (n == 0) throw ContractError("empirical_coverage: no forecast days");
  for (auto& h : hits) h /= static_cast<double>(n);
  return hits;
}

// ---------------------------------------------------------------------------
// Evaluation report

/// FNV-1a digest of a document, as 16 hex digits.
inline std::string content_id(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct EvalReport {
  std::string checkpoint_id;
  std::string onset_date;
  PinballEval pinball;
  std::map<std::string, double> state_rmse;
  std::map<std::string, double> state_control_rmse;
  double state_wise_rmse = 0.0;  // over all state-days
  double state_wise_control_rmse = 0.0;
  double national_rmse = 0.0;
  double national_control_rmse = 0.0;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"checkpoint_id", checkpoint_id},
            {"onset_date", onset_date},
            {"per_county_pinball", pinball.per_county},
            {"mean_pinball", pinball.mean},
            {"state_rmse", state_rmse},
            {"state_control_rmse", state_control_rmse},
            {"state_wise_rmse", state_wise_rmse},
            {"state_wise_control_rmse", state_wise_control_rmse},
            {"national_rmse", national_rmse},
            {"national_control_rmse", national_control_rmse}};
  }
};

/// Scores unclamped forecasts against observed deaths.
inline EvalReport evaluate(const std::vector<QuantileForecast>& forecasts, const SeriesMap& truth,
                           const FeatureStats& deaths, const std::string& checkpoint_id) {
  EvalReport r;
  r.checkpoint_id = checkpoint_id;
  r.onset_date = forecasts.empty() ? "" : format_date(forecasts.front().onset_date);
  r.pinball = eval_pinball(forecasts, truth, deaths);
  SeriesMap used_truth;
  for (const auto& f : forecasts) used_truth[f.county_id] = truth.at(f.county_id);
  const SeriesMap pred_state = aggregate_state(forecasts);
  const SeriesMap truth_state = aggregate_state(used_truth);
  std::vector<double> all_pred, all_truth;
  for (const auto& [s, p] : pred_state) {
    const auto& t = truth_state.at(s);
    std::vector<double> tt(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(p.size()));
    r.state_rmse[s] = rmse(p, tt);
    r.state_control_rmse[s] = zero_control(tt);
    all_pred.insert(all_pred.end(), p.begin(), p.end());
    all_truth.insert(all_truth.end(), tt.begin(), tt.end());
  }
  r.state_wise_rmse = rmse(all_pred, all_truth);
  r.state_wise_control_rmse = zero_control(all_truth);
  const auto np = national_series(pred_state);
  auto nt = national_series(truth_state);
  nt.resize(np.size());
  r.national_rmse = rmse(np, nt);
  r.national_control_rmse = zero_control(nt);
  return r;
}

// ---------------------------------------------------------------------------
// Model comparison

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

inline Histogram histogram(std::span<const double> values, std::size_t bins = 10) {
  if (values.empty() || bins == 0) throw ContractError("histogram: need values and at least one bin");
  Histogram h;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

struct CompareResult {
  std::vector<std::string> counties;  // qualifying, in id order
  std::vector<double> deltas;         // loss_a - loss_b
  Histogram delta_histogram;
  WilcoxonResult wilcoxon;
  double mean_a = 0.0;
  double mean_b = 0.0;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"counties", counties},
            {"deltas", deltas},
            {"histogram", {{"edges", delta_histogram.edges}, {"counts", delta_histogram.counts}}},
            {"wilcoxon",
             {{"n", wilcoxon.n},
              {"dropped_zeros", wilcoxon.dropped_zeros},
              {"w_plus", wilcoxon.w_plus},
              {"p_value", wilcoxon.p_value},
              {"method", to_string(wilcoxon.method)}}},
            {"mean_loss_a", mean_a},
            {"mean_loss_b", mean_b}};
  }
};

/// Paired comparison over counties whose total deaths exceed `min_deaths`;
/// the one-sided test asks whether model a has lower loss than model b.
inline CompareResult compare_models(const std::map<std::string, double>& losses_a,
                                    const std::map<std::string, double>& losses_b,
                                    const std::map<std::string, double>& total_deaths, double min_deaths = 50.0) {
  if (losses_a.size() != losses_b.size()) throw ContractError("compare_models: loss maps cover different counties");
  CompareResult r;
  for (const auto& [county, la] : losses_a) {
    auto ib = losses_b.find(county);
    if (ib == losses_b.end()) throw ContractError("compare_models: county " + county + " missing from model b");
    auto id = total_deaths.find(county);
    if (id == total_deaths.end()) throw ContractError("compare_models: no death total for county " + county);
    if (!(id->second > min_deaths)) continue;
    r.counties.push_back(county);
    r.deltas.push_back(la - ib->second);
    r.mean_a += la;
    r.mean_b += ib->second;
  }
  if (r.counties.empty())
    throw DataError("compare_models: no county has more than " + std::to_string(min_deaths) + " deaths");
  r.mean_a /= static_cast<double>(r.counties.size());
  r.mean_b /= static_cast<double>(r.counties.size());
  r.delta_histogram = histogram(r.deltas);
  r.wilcoxon = wilcoxon_signed_rank_lower(r.deltas);
  return r;
}

/// Total raw deaths per county over the whole panel.
inline std::map<std::string, double> total_deaths(const CountyPanel& panel) {
  const CountyPanel raw = destandardize(panel);
  const std::size_t f = raw.deaths_feature();
  std::map<std::string, double> out;
  for (std::size_t c = 0; c < raw.n_counties(); ++c) {
    double s = 0.0;
    for (std::size_t d = 0; d < raw.n_dates(); ++d) s += raw.ts_at(c, d, f);
    out[raw.county_ids[c]] = s;
  }
  return out;
}

/// Per-county mean standardized loss of samples, keyed by county id.
inline std::map<std::string, double> per_county_loss(std::span<const WindowSample> samples, const ModelParams& params,
                                                     const ModelConfig& c) {
  const auto preds = predict_samples(samples, params, c);
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& a = acc[samples[i].county_id];
    a.first += avg_quantile_loss(samples[i].target, preds[i].data);
    a.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
  return out;
}

// ---------------------------------------------------------------------------
// Permutation importance

enum class FeatureKind { categorical, timeseries };

inline std::string to_string(FeatureKind k) { return k == FeatureKind::categorical ? "categorical" : "timeseries"; }

struct ImportanceRow {
  std::string feature;
  FeatureKind kind = FeatureKind::categorical;
  double baseline_loss = 0.0;
  std::vector<double> shuffled_losses;
  double mean_delta = 0.0;
  double delta_standard_error = 0.0;
  SignTestResult sign;
};

struct ImportanceReport {
  std::string window;
  std::vector<ImportanceRow> rows;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows)
      a.push_back({{"feature", r.feature},
                   {"kind", to_string(r.kind)},
                   {"baseline_loss", r.baseline_loss},
                   {"shuffled_losses", r.shuffled_losses},
                   {"mean_delta", r.mean_delta},
                   {"delta_standard_error", r.delta_standard_error},
                   {"sign_test_p", r.sign.p_value},
                   {"sign_test_warning", r.sign.warning}});
    return {{"window", window}, {"features", a}};
  }

  /// Rows of `kind` sorted by decreasing mean delta (stable on ties).
  [[nodiscard]] std::vector<ImportanceRow> ranked(FeatureKind kind) const {
    std::vector<ImportanceRow> out;
    for (const auto& r : rows)
      if (r.kind == kind) out.push_back(r);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.mean_delta > b.mean_delta; });
    return out;
  }
};

namespace detail {

inline std::uint32_t name_hash(const std::string& s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 16777619u;
  }
  return h;
}

inline std::string joined(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace detail

/// Importance of one feature: mean shuffled validation loss minus baseline
/// over `repeats` independently seeded permutations.
inline ImportanceRow permutation_importance(const Checkpoint& ck, std::span<const WindowSample> val,
                                            const std::string& feature, FeatureKind kind, std::size_t repeats,
                                            std::uint64_t seed, std::optional<double> baseline = std::nullopt) {
  if (val.empty()) throw ContractError("permutation_importance: validation set is empty");
  if (repeats == 0) throw ContractError("permutation_importance: repeats must be positive");
  const auto& names = kind == FeatureKind::categorical ? ck.cat_feature_names : ck.ts_feature_names;
  auto pos = std::find(names.begin(), names.end(), feature);
  if (pos == names.end())
    throw DataError("unknown " + to_string(kind) + " feature '" + feature + "'; available: " + detail::joined(names));
  const auto f = static_cast<std::size_t>(pos - names.begin());
  const std::size_t n_ts = ck.config.n_ts_features, hist = ck.config.history_len;

  ImportanceRow row;
  row.feature = feature;
  row.kind = kind;
  row.baseline_loss = baseline ? *baseline : mean_loss(val, ck.params, ck.config);

  // County order of first appearance; categorical values are permuted across counties.
  std::vector<std::string> counties;
  std::map<std::string, std::size_t> county_pos;
  for (const auto& s : val)
    if (county_pos.emplace(s.county_id, counties.size()).second) counties.push_back(s.county_id);
  std::vector<double> county_value(counties.size());
  for (const auto& s : val) county_value[county_pos.at(s.county_id)] = s.categorical[f];

  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      detail::name_hash(feature), static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(rep)};
    std::mt19937_64 rng(seq);
    std::vector<WindowSample> shuffled(val.begin(), val.end());
    if (kind == FeatureKind::categorical) {
      std::vector<std::size_t> perm(counties.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      for (auto& s : shuffled) s.categorical[f] = county_value[perm[county_pos.at(s.county_id)]];
    } else {
      std::vector<std::size_t> perm(val.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::size_t> steps(hist);
      for (std::size_t i = 0; i < shuffled.size(); ++i) {
        // Whole series from another county, then its days in random order.
        std::iota(steps.begin(), steps.end(), std::size_t{0});
        std::shuffle(steps.begin(), steps.end(), rng);
        for (std::size_t t = 0; t < hist; ++t) shuffled[i].history[t * n_ts + f] = val[perm[i]].history[steps[t] * n_ts + f];
      }
    }
    row.shuffled_losses.push_back(mean_loss(shuffled, ck.params, ck.config));
  }
  std::vector<double> deltas;
  for (double l : row.shuffled_losses) deltas.push_back(l - row.baseline_loss);
  row.mean_delta = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(deltas.size());
  if (deltas.size() > 1) {
    double var = 0.0;
    for (double d : deltas) var += (d - row.mean_delta) * (d - row.mean_delta);
    var /= static_cast<double>(deltas.size() - 1);
    row.delta_standard_error = std::sqrt(var / static_cast<double>(deltas.size()));
  }
  row.sign = sign_test(deltas);
  return row;
}

/// Importance of every categorical and time-series feature, in checkpoint order.
inline ImportanceReport importance_all(const Checkpoint& ck, std::span<const WindowSample> val, std::size_t repeats,
                                       std::uint64_t seed, const std::string& window) {
  ImportanceReport rep;
  rep.window = window;
  const double baseline = mean_loss(val, ck.params, ck.config);
  for (const auto& f : ck.cat_feature_names)
    rep.rows.push_back(permutation_importance(ck, val, f, FeatureKind::categorical, repeats, seed, baseline));
  for (const auto& f : ck.ts_feature_names)
    rep.rows.push_back(permutation_importance(ck, val, f, FeatureKind::timeseries, repeats, seed, baseline));
  return rep;
}

// ---------------------------------------------------------------------------
// Sensitivity

struct SensitivityResult {
  std::string feature;
  double shift = 3.0;
  std::string onset_date;
  std::vector<double> baseline;  // national daily predicted deaths
  std::vector<double> plus;      // feature + shift (standardized units)
  std::vector<double> minus;     // feature - shift

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"feature", feature}, {"shift", shift},  {"onset_date", onset_date},
            {"baseline", baseline}, {"plus", plus}, {"minus", minus}};
  }
};

/// National predicted series after adding `delta` to one standardized
/// categorical column for every county.
inline std::vector<double> perturbed_national(const Checkpoint& ck, const CountyPanel& aligned, std::size_t onset,
                                              std::size_t feature, double delta) {
  auto samples = samples_at_onset(aligned, onset, ck.config.history_len, ck.config.horizon);
  for (auto& s : samples) s.categorical[feature] += delta;
  return national_series(aggregate_state(forecasts_from_samples(samples, aligned, ck)));
}

inline SensitivityResult sensitivity(const Checkpoint& ck, const CountyPanel& panel, Date onset,
                                     const std::string& feature, double shift = 3.0) {
  auto pos = std::find(ck.cat_feature_names.begin(), ck.cat_feature_names.end(), feature);
  if (pos == ck.cat_feature_names.end()) {
    if (std::find(ck.ts_feature_names.begin(), ck.ts_feature_names.end(), feature) != ck.ts_feature_names.end())
      throw DataError("sensitivity: '" + feature + "' is a time-series feature; only categorical features are perturbed");
    throw DataError("sensitivity: unknown categorical feature '" + feature +
                    "'; available: " + detail::joined(ck.cat_feature_names));
  }
  const auto f = static_cast<std::size_t>(pos - ck.cat_feature_names.begin());
  const CountyPanel p = align_panel(panel, ck);
  const std::size_t onset_i = onset_index(p, onset);
  SensitivityResult r;
  r.feature = feature;
  r.shift = shift;
  r.onset_date = format_date(onset);
  r.baseline = perturbed_national(ck, p, onset_i, f, 0.0);
  r.plus = perturbed_national(ck, p, onset_i, f, shift);
  r.minus = perturbed_national(ck, p, onset_i, f, -shift);
  return r;
}

}  // namespace condlstmq
