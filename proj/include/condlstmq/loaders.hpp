// SPDX-License-Identifier: Apache-2.0
//
// Loaders for the public county-level feeds and the preprocessing pipeline
// that assembles them into a hole-free, standardized CountyPanel.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "condlstmq/csv.hpp"
#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/interpolate.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/seasonality.hpp"

namespace condlstmq {

// ---------------------------------------------------------------------------
// NYT us-counties.csv: date,county,state,fips,cases,deaths (cumulative)

struct DailyCounts {
  double cases = 0.0;
  double deaths = 0.0;
};

struct NytData {
  std::map<std::string, std::map<Date, DailyCounts>> daily;  // fips -> date -> new counts
  std::size_t dropped_rows = 0;                               // rows without a usable FIPS
};

/// First difference of a cumulative series; the first day keeps its value.
/// Negative increments (bulk adjustments) are preserved.
inline std::vector<double> cumulative_to_daily(const std::vector<double>& cumulative) {
  std::vector<double> out(cumulative.size());
  for (std::size_t i = 0; i < cumulative.size(); ++i) out[i] = i == 0 ? cumulative[0] : cumulative[i] - cumulative[i - 1];
  return out;
}

inline NytData load_nyt(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto cd = t.column("date"), cf = t.column("fips"), cc = t.column("cases"), cde = t.column("deaths");
  if (t.rows.empty()) throw DataError(path + ": no data rows");
  std::map<std::string, std::map<Date, DailyCounts>> cumulative;
  NytData out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = path + ":" + std::to_string(t.line_numbers[i]);
    const Date date = [&] {
      try {
        return parse_date(r[cd]);
      } catch (const ParseError& e) {
        throw ParseError(where + ": " + e.what());
      }
    }();
    const std::string fips = csv::normalize_fips(r[cf]);
    const auto cases = csv::parse_number(r[cc], where);
    const auto deaths = csv::parse_number(r[cde], where);
    if (fips.empty()) {
      ++out.dropped_rows;
      continue;
    }
    auto& slot = cumulative[fips][date];
    slot.cases = cases.value_or(std::numeric_limits<double>::quiet_NaN());
    slot.deaths = deaths.value_or(std::numeric_limits<double>::quiet_NaN());
  }
  for (auto& [fips, series] : cumulative) {
    double prev_cases = 0.0, prev_deaths = 0.0;
    bool first = true;
    for (auto& [date, c] : series) {
      // A blank cumulative cell carries the previous total.
      const double cases = std::isnan(c.cases) ? prev_cases : c.cases;
      const double deaths = std::isnan(c.deaths) ? prev_deaths : c.deaths;
      out.daily[fips][date] = first ? DailyCounts{cases, deaths} : DailyCounts{cases - prev_cases, deaths - prev_deaths};
      prev_cases = cases;
      prev_deaths = deaths;
      first = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Descartes Labs DL-us-mobility-daterow.csv:
// date,country_code,admin_level,admin1,admin2,fips,samples,m50,m50_index

struct MobilityPoint {
  std::optional<double> m50;
  std::optional<double> m50_index;
};

struct MobilityData {
  std::map<std::string, std::map<Date, MobilityPoint>> county;  // 5-digit FIPS
  std::map<std::string, std::map<Date, MobilityPoint>> state;   // 2-digit FIPS
};

inline MobilityData load_mobility(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto cd = t.column("date"), cl = t.column("admin_level"), cf = t.column("fips"), cm = t.column("m50"),
             ci = t.column("m50_index");
  if (t.rows.empty()) throw DataError(path + ": no data rows");
  MobilityData out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = path + ":" + std::to_string(t.line_numbers[i]);
    Date date;
    try {
      date = parse_date(r[cd]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    const auto level = csv::parse_number(r[cl], where);
    if (!level) throw ParseError(where + ": missing admin_level");
    MobilityPoint pt{csv::parse_number(r[cm], where), csv::parse_number(r[ci], where)};
    if (*level == 1) {
      const auto f = csv::normalize_fips(r[cf], 2);
      if (f.empty()) throw ParseError(where + ": bad state FIPS '" + r[cf] + "'");
      out.state[f][date] = pt;
    } else if (*level == 2) {
      const auto f = csv::normalize_fips(r[cf]);
      if (f.empty()) throw ParseError(where + ": bad county FIPS '" + r[cf] + "'");
      out.county[f][date] = pt;
    }
  }
  return out;
}

struct MobilityAssembly {
  std::map<std::string, std::vector<double>> m50, m50_index;  // per county, hole-free, panel dates
  std::vector<std::string> state_filled;                      // counties absent from the feed
  std::size_t holes = 0;
  PanelFillReport fill;
};

/// Aligns mobility to the panel dates, substitutes state-level series for
/// counties missing entirely, and fills remaining holes.
inline MobilityAssembly assemble_mobility(const MobilityData& data, const std::vector<std::string>& counties,
                                          const std::vector<Date>& dates, std::size_t spline_run_threshold = 14) {
  MobilityAssembly out;
  std::vector<std::string> uncovered;
  auto extract = [&](const std::map<Date, MobilityPoint>& series, bool index) {
    HoleySeries s(dates.size());
    for (std::size_t d = 0; d < dates.size(); ++d) {
      auto it = series.find(dates[d]);
      if (it != series.end()) s[d] = index ? it->second.m50_index : it->second.m50;
    }
    return s;
  };
  auto fill = [&](const HoleySeries& s) {
    out.holes += count_holes(s);
    auto r = fill_holes(s, spline_run_threshold);
    if (r.method == FillMethod::spline) out.fill.spline_filled += r.filled;
    if (r.method == FillMethod::same_day) out.fill.same_day_filled += r.filled;
    if (r.filled) out.fill.series_filled += 1;
    return r.values;
  };
  for (const auto& c : counties) {
    const std::map<Date, MobilityPoint>* series = nullptr;
    if (auto it = data.county.find(c); it != data.county.end()) {
      series = &it->second;
    } else if (auto st = data.state.find(state_of_fips(c)); st != data.state.end()) {
      series = &st->second;
      out.state_filled.push_back(c);
    } else {
      uncovered.push_back(c);
      continue;
    }
    HoleySeries a = extract(*series, false), b = extract(*series, true);
    if (count_holes(a) == a.size() || count_holes(b) == b.size()) {
      // County present only outside the panel dates: fall back to its state.
      auto st = data.state.find(state_of_fips(c));
      if (st == data.state.end()) {
        uncovered.push_back(c);
        continue;
      }
      a = extract(st->second, false);
      b = extract(st->second, true);
      out.state_filled.push_back(c);
    }
    try {
      out.m50[c] = fill(a);
      out.m50_index[c] = fill(b);
    } catch (const DataError&) {
      uncovered.push_back(c);
    }
  }
  if (!uncovered.empty()) {
    std::string list;
    for (const auto& c : uncovered) list += (list.empty() ? "" : ", ") + c;
    throw DataError("mobility: no county or state data for counties " + list);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Static (categorical) features

/// A CSV keyed by county FIPS. Empty `features` selects every column that
/// parses as numeric in all non-missing cells.
struct KeyedTableSpec {
  std::string path;
  std::string key_column;
  std::vector<std::string> features;
  std::string prefix;         // prepended to output feature names
  bool required_rows = false; // every panel county must appear
};

/// HHS policy orders: state_id,county,fips_code,policy_level,date,policy_type,start_stop,...
struct PolicySpec {
  std::string path;
  std::vector<std::string> policy_types = {"Emergency Declaration", "Shelter in Place", "Non-Essential Businesses"};
};

struct CategoricalData {
  std::vector<std::string> feature_names;
  std::vector<double> values;  // [county][feature], panel county order
  std::vector<std::string> imputed;  // "fips:feature" cells filled by median imputation
};

/// Two-letter USPS code to state FIPS.
inline std::string state_fips_from_abbrev(const std::string& abbrev) {
  static const std::map<std::string, std::string> table = {
      {"AL", "01"}, {"AK", "02"}, {"AZ", "04"}, {"AR", "05"}, {"CA", "06"}, {"CO", "08"}, {"CT", "09"},
      {"DE", "10"}, {"DC", "11"}, {"FL", "12"}, {"GA", "13"}, {"HI", "15"}, {"ID", "16"}, {"IL", "17"},
      {"IN", "18"}, {"IA", "19"}, {"KS", "20"}, {"KY", "21"}, {"LA", "22"}, {"ME", "23"}, {"MD", "24"},
      {"MA", "25"}, {"MI", "26"}, {"MN", "27"}, {"MS", "28"}, {"MO", "29"}, {"MT", "30"}, {"NE", "31"},
      {"NV", "32"}, {"NH", "33"}, {"NJ", "34"}, {"NM", "35"}, {"NY", "36"}, {"NC", "37"}, {"ND", "38"},
      {"OH", "39"}, {"OK", "40"}, {"OR", "41"}, {"PA", "42"}, {"RI", "44"}, {"SC", "45"}, {"SD", "46"},
      {"TN", "47"}, {"TX", "48"}, {"UT", "49"}, {"VT", "50"}, {"VA", "51"}, {"WA", "53"}, {"WV", "54"},
      {"WI", "55"}, {"WY", "56"}, {"AS", "60"}, {"GU", "66"}, {"MP", "69"}, {"PR", "72"}, {"VI", "78"}};
  std::string up;
  for (char ch : abbrev) up += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  auto it = table.find(up);
  return it == table.end() ? std::string{} : it->second;
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Reads one keyed table into name -> (fips -> value or NaN).
inline std::pair<std::vector<std::string>, std::map<std::string, std::vector<double>>> read_keyed_table(
    const KeyedTableSpec& spec) {
  const auto t = csv::read_file(spec.path);
  const auto key = t.column(spec.key_column);
  std::vector<std::size_t> cols;
  if (spec.features.empty()) {
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (c == key) continue;
      bool numeric = true, any = false;
      for (std::size_t i = 0; i < t.rows.size() && numeric; ++i) {
        try {
          any = csv::parse_number(t.rows[i][c], "").has_value() || any;
        } catch (const ParseError&) {
          numeric = false;
        }
      }
      if (numeric && any) cols.push_back(c);
    }
  } else {
    for (const auto& f : spec.features) cols.push_back(t.column(f));
  }
  std::vector<std::string> names;
  for (auto c : cols) names.push_back(spec.prefix + t.header[c]);
  std::map<std::string, std::vector<double>> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string fips = csv::normalize_fips(r[key]);
    if (fips.empty()) continue;
    const std::string where = spec.path + ":" + std::to_string(t.line_numbers[i]);
    std::vector<double> v;
    for (auto c : cols) v.push_back(csv::parse_number(r[c], where).value_or(std::numeric_limits<double>::quiet_NaN()));
    rows[fips] = std::move(v);
  }
  return {names, rows};
}

}  // namespace detail

/// Earliest start date of each selected policy per county (state-level
/// orders apply to every county of the state), encoded as days since
/// `panel_start`; 0 when never enacted.
inline std::pair<std::vector<std::string>, std::vector<double>> load_policy(const PolicySpec& spec,
                                                                           const std::vector<std::string>& counties,
                                                                           Date panel_start) {
  const auto t = csv::read_file(spec.path);
  const auto cs = t.column("state_id"), cf = t.column("fips_code"), cl = t.column("policy_level"),
             cd = t.column("date"), ct = t.column("policy_type"), cst = t.column("start_stop");
  std::map<std::string, std::map<std::string, Date>> state_start, county_start;  // type -> key -> date
  auto earliest = [](std::map<std::string, Date>& m, const std::string& k, Date d) {
    auto it = m.find(k);
    if (it == m.end() || d < it->second) m[k] = d;
  };
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (std::find(spec.policy_types.begin(), spec.policy_types.end(), r[ct]) == spec.policy_types.end()) continue;
    if (r[cst] != "start") continue;
    const std::string where = spec.path + ":" + std::to_string(t.line_numbers[i]);
    Date d;
    try {
      d = parse_date(r[cd]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (r[cl] == "state") {
      std::string st = state_fips_from_abbrev(r[cs]);
      if (st.empty()) st = csv::normalize_fips(r[cs], 2);
      if (st.empty()) throw ParseError(where + ": unknown state '" + r[cs] + "'");
      earliest(state_start[r[ct]], st, d);
    } else {
      const std::string fips = csv::normalize_fips(r[cf]);
      if (fips.empty()) throw ParseError(where + ": bad county FIPS '" + r[cf] + "'");
      earliest(county_start[r[ct]], fips, d);
    }
  }
  std::vector<std::string> names;
  for (const auto& type : spec.policy_types) {
    std::string n = "policy_";
    for (char ch : type) n += ch == ' ' || ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    names.push_back(n);
  }
  std::vector<double> values;
  for (const auto& c : counties) {
    for (const auto& type : spec.policy_types) {
      std::optional<Date> start;
      if (auto it = county_start[type].find(c); it != county_start[type].end()) start = it->second;
      if (auto it = state_start[type].find(state_of_fips(c)); it != state_start[type].end())
        if (!start || it->second < *start) start = it->second;
      values.push_back(start ? static_cast<double>(days_between(panel_start, *start)) : 0.0);
    }
  }
  return {names, values};
}

/// Merges static tables (and optional policy orders) into one county x
/// feature matrix. Missing cells take the state median of that feature,
/// then the national median.
inline CategoricalData load_categorical(const std::vector<KeyedTableSpec>& tables, const std::optional<PolicySpec>& policy,
                                        const std::vector<std::string>& counties, Date panel_start) {
  CategoricalData out;
  std::vector<std::vector<double>> columns;  // per feature, per county
  for (const auto& spec : tables) {
    auto [names, rows] = detail::read_keyed_table(spec);
    if (spec.required_rows) {
      std::string missing;
      for (const auto& c : counties)
        if (rows.find(c) == rows.end()) missing += (missing.empty() ? "" : ", ") + c;
      if (!missing.empty()) throw DataError(spec.path + ": counties absent from table: " + missing);
    }
    for (std::size_t f = 0; f < names.size(); ++f) {
      std::vector<double> col;
      for (const auto& c : counties) {
        auto it = rows.find(c);
        col.push_back(it == rows.end() ? std::numeric_limits<double>::quiet_NaN() : it->second[f]);
      }
      out.feature_names.push_back(names[f]);
      columns.push_back(std::move(col));
    }
  }
  if (policy) {
    auto [names, values] = load_policy(*policy, counties, panel_start);
    for (std::size_t f = 0; f < names.size(); ++f) {
      std::vector<double> col;
      for (std::size_t c = 0; c < counties.size(); ++c) col.push_back(values[c * names.size() + f]);
      out.feature_names.push_back(names[f]);
      columns.push_back(std::move(col));
    }
  }
  for (std::size_t f = 0; f < columns.size(); ++f) {
    auto& col = columns[f];
    std::map<std::string, std::vector<double>> by_state;
    std::vector<double> all;
    for (std::size_t c = 0; c < counties.size(); ++c)
      if (!std::isnan(col[c])) {
        by_state[state_of_fips(counties[c])].push_back(col[c]);
        all.push_back(col[c]);
      }
    if (all.empty()) throw DataError("categorical feature '" + out.feature_names[f] + "' has no observed values");
    const double national = detail::median(all);
    for (std::size_t c = 0; c < counties.size(); ++c) {
      if (!std::isnan(col[c])) continue;
      auto it = by_state.find(state_of_fips(counties[c]));
      col[c] = it != by_state.end() ? detail::median(it->second) : national;
      out.imputed.push_back(counties[c] + ":" + out.feature_names[f]);
    }
  }
  out.values.resize(counties.size() * columns.size());
  for (std::size_t c = 0; c < counties.size(); ++c)
    for (std::size_t f = 0; f < columns.size(); ++f) out.values[c * columns.size() + f] = columns[f][c];
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PreprocessInputs {
  std::string nyt;
  std::string mobility;
  std::vector<KeyedTableSpec> tables;  // demographics first (required rows), then GDP, census, ...
  std::optional<PolicySpec> policy;
  std::string weekly_rates;            // optional pneumonia/influenza file for seasonality
  std::optional<Date> start;           // default: first NYT date, not before 2020-03-01
  std::optional<Date> end;             // default: last NYT date
  std::size_t holdout_days = 21;
  std::size_t spline_run_threshold = 14;
};

struct PreprocessReport {
  std::size_t n_counties = 0;
  std::size_t n_dates = 0;
  std::size_t nyt_rows_dropped = 0;
  std::vector<std::string> state_filled_counties;
  std::size_t mobility_holes = 0;
  std::size_t same_day_filled = 0;
  std::size_t spline_filled = 0;
  std::vector<std::string> categorical_imputed;
  std::vector<std::string> zero_variance_features;
  std::vector<std::string> warnings;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"n_counties", n_counties},
            {"n_dates", n_dates},
            {"nyt_rows_dropped", nyt_rows_dropped},
            {"state_filled_counties", state_filled_counties.size()},
            {"state_filled_county_ids", state_filled_counties},
            {"mobility_holes", mobility_holes},
            {"same_day_filled", same_day_filled},
            {"spline_filled", spline_filled},
            {"categorical_imputed", categorical_imputed.size()},
            {"categorical_imputed_cells", categorical_imputed},
            {"zero_variance_features", zero_variance_features},
            {"warnings", warnings}};
  }
};

inline std::vector<std::string> zero_variance_names(const CountyPanel& p) {
  std::vector<std::string> out;
  if (!p.stats) return out;
  for (std::size_t f = 0; f < p.n_ts(); ++f)
    if (p.stats->ts[f].zero_variance) out.push_back(p.ts_feature_names[f]);
  for (std::size_t f = 0; f < p.n_cat(); ++f)
    if (p.stats->cat[f].zero_variance) out.push_back(p.cat_feature_names[f]);
  return out;
}

/// Loads every feed, aligns to contiguous daily dates, fills holes, and
/// standardizes on all but the last `holdout_days` dates.
inline CountyPanel preprocess(const PreprocessInputs& in, PreprocessReport& report) {
  const NytData nyt = load_nyt(in.nyt);
  report.nyt_rows_dropped = nyt.dropped_rows;
  if (nyt.daily.empty()) throw DataError(in.nyt + ": no rows with county FIPS");

  Date first = Date::max(), last = Date::min();
  for (const auto& [fips, series] : nyt.daily) {
    first = std::min(first, series.begin()->first);
    last = std::max(last, series.rbegin()->first);
  }
  const Date earliest_allowed = parse_date("2020-03-01");
  Date start = in.start.value_or(std::max(first, earliest_allowed));
  if (start < earliest_allowed) start = earliest_allowed;
  const Date end = in.end.value_or(last);
  if (end < start) throw DataError("preprocess: end date precedes start date");

  CountyPanel p;
  for (Date d = start; d <= end; d = add_days(d, 1)) p.dates.push_back(d);
  for (const auto& [fips, series] : nyt.daily) {
    p.county_ids.push_back(fips);
    p.state_of[fips] = state_of_fips(fips);
  }

  const MobilityAssembly mob = assemble_mobility(load_mobility(in.mobility), p.county_ids, p.dates, in.spline_run_threshold);
  report.state_filled_counties = mob.state_filled;
  report.mobility_holes = mob.holes;
  report.same_day_filled = mob.fill.same_day_filled;
  report.spline_filled = mob.fill.spline_filled;

  std::optional<SeasonalityIndex> season;
  if (!in.weekly_rates.empty()) {
    season = extract_seasonality(load_weekly_rates(in.weekly_rates));
    for (const auto& w : season->warnings) report.warnings.push_back(w);
  } else {
    report.warnings.push_back("no weekly rate file given; seasonality feature omitted");
  }

  p.ts_feature_names = {"new_cases", kDeathsFeature, "mobility_m50", "mobility_m50_index"};
  if (season) p.ts_feature_names.push_back("seasonality");
  p.ts.assign(p.n_counties() * p.n_dates() * p.n_ts(), 0.0);
  for (std::size_t c = 0; c < p.n_counties(); ++c) {
    const auto& fips = p.county_ids[c];
    const auto& counts = nyt.daily.at(fips);
    for (std::size_t d = 0; d < p.n_dates(); ++d) {
      auto it = counts.find(p.dates[d]);
      if (it != counts.end()) {
        p.ts_at(c, d, 0) = it->second.cases;
        p.ts_at(c, d, 1) = it->second.deaths;
      }
      p.ts_at(c, d, 2) = mob.m50.at(fips)[d];
      p.ts_at(c, d, 3) = mob.m50_index.at(fips)[d];
      if (season) p.ts_at(c, d, 4) = season->daily(p.state_of.at(fips), p.dates[d]);
    }
    // Counts before a county's first report are zero; the first report's
    // cumulative value lands on its own date.
  }

  const CategoricalData cat = load_categorical(in.tables, in.policy, p.county_ids, start);
  p.cat_feature_names = cat.feature_names;
  p.cat = cat.values;
  report.categorical_imputed = cat.imputed;

  if (p.n_dates() <= in.holdout_days) throw DataError("preprocess: panel shorter than the holdout span");
  CountyPanel out = standardize(p, p.n_dates() - in.holdout_days);
  report.zero_variance_features = zero_variance_names(out);
  report.n_counties = out.n_counties();
  report.n_dates = out.n_dates();
  return out;
}

}  // namespace condlstmq
