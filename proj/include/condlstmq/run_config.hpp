// SPDX-License-Identifier: Apache-2.0
//
// RunConfig: one JSON document of model hyperparameters, file paths and
// subcommand options. Every accepted key is declared in run_config_keys();
// anything else is rejected.

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <algorithm>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "condlstmq/errors.hpp"
#include "condlstmq/model.hpp"
#include "condlstmq/synth.hpp"

namespace condlstmq {

/// Configuration mistakes the operator can fix; mapped to the usage exit code.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class KeyType { boolean, integer, number, string, int_list, string_list };

struct KeySpec {
  std::string name;
  KeyType type;
  nlohmann::json default_value;  // null: no default
  std::string help;
};

inline const std::vector<KeySpec>& run_config_keys() {
  using J = nlohmann::json;
  static const std::vector<KeySpec> keys = {
      // model and training
      {"model", KeyType::string, "condlstm-q", "model kind: condlstm-q or pseudo-categorical"},
      {"hidden_units", KeyType::integer, 128, "LSTM hidden units"},
      {"learning_rate", KeyType::number, 0.001, "Adam learning rate"},
      {"dropout_rate", KeyType::number, 0.2, "dropout on the conditional layer"},
      {"epochs", KeyType::integer, 20, "training epochs"},
      {"history_len", KeyType::integer, 7, "history window (days)"},
      {"horizon", KeyType::integer, 14, "forecast horizon (days)"},
      {"n_quantiles", KeyType::integer, 9, "number of quantile heads (fixed at 9)"},
      {"n_ts_features", KeyType::integer, J(), "checked against the panel when given"},
      {"n_cat_features", KeyType::integer, J(), "checked against the panel when given"},
      {"batch_size", KeyType::integer, 256, "minibatch size"},
      {"condition_cell_state", KeyType::boolean, false, "also condition the initial cell state"},
      {"sort_quantiles", KeyType::boolean, false, "sort quantiles per day in reported forecasts"},
      {"clip_norm", KeyType::number, 0.0, "global gradient-norm clip (0 disables)"},
      {"seed", KeyType::integer, 0, "seed for every random stream"},
      {"holdout_days", KeyType::integer, 21, "final days held out for validation"},
      {"report_timing", KeyType::boolean, false, "record wall time per epoch in the train report"},
      // synth
      {"n_counties", KeyType::integer, 50, "synthetic counties"},
      {"n_dates", KeyType::integer, 150, "synthetic days"},
      {"n_cat", KeyType::integer, 10, "synthetic categorical features"},
      {"causal_indices", KeyType::int_list, J::array({0, 1, 2}), "causal categorical feature indices"},
      {"causal_betas", KeyType::string, "", "comma-separated log-severity coefficients (default 0.6,0.45,0.3)"},
      {"hole_rate", KeyType::number, 0.1, "fraction of mobility entries removed"},
      {"counties_per_state", KeyType::integer, 10, "synthetic counties per state"},
      {"dummy_feature", KeyType::boolean, false, "append a pure-noise categorical feature named dummy"},
      {"metadata_out", KeyType::string, "", "ground-truth metadata output (default <out>.meta.json)"},
      // preprocess
      {"nyt", KeyType::string, "", "NYT us-counties.csv"},
      {"mobility", KeyType::string, "", "Descartes Labs DL-us-mobility-daterow.csv"},
      {"demographics", KeyType::string, "", "county demographics CSV"},
      {"demographics_key", KeyType::string, "countyFIPS", "FIPS column of the demographics CSV"},
      {"demographics_features", KeyType::string_list, J::array(), "demographics columns (empty: all numeric)"},
      {"gdp", KeyType::string, "", "BEA county GDP CSV"},
      {"gdp_key", KeyType::string, "GeoFips", "FIPS column of the GDP CSV"},
      {"gdp_features", KeyType::string_list, J::array(), "GDP columns (empty: all numeric)"},
      {"census", KeyType::string, "", "Census density CSV"},
      {"census_key", KeyType::string, "fips", "FIPS column of the census CSV"},
      {"census_features", KeyType::string_list, J::array(), "census columns (empty: all numeric)"},
      {"policy", KeyType::string, "", "HHS state and county policy orders CSV"},
      {"policy_types", KeyType::string_list,
       J::array({"Emergency Declaration", "Shelter in Place", "Non-Essential Businesses"}), "policy types encoded"},
      {"weekly_rates", KeyType::string, "", "weekly pneumonia and influenza rates for seasonality"},
      {"start_date", KeyType::string, "", "first panel date (synth default 2020-03-01)"},
      {"end_date", KeyType::string, "", "last panel date"},
      {"spline_run_threshold", KeyType::integer, 14, "hole runs at least this long use spline filling"},
      {"report_out", KeyType::string, "", "report JSON output"},
      // files shared by later stages
      {"panel", KeyType::string, "", "panel JSON input"},
      {"out", KeyType::string, "", "primary output file"},
      {"checkpoint", KeyType::string, "", "model checkpoint"},
      {"baseline_checkpoint", KeyType::string, "", "second checkpoint for compare"},
      // predict / evaluate / explain
      {"onset", KeyType::string, "", "forecast onset date YYYY-MM-DD"},
      {"clamp_zero", KeyType::boolean, true, "clip reported forecasts at zero"},
      {"forecast_out", KeyType::string, "", "forecast CSV output"},
      {"chart_county", KeyType::string, "", "county FIPS for a fan chart"},
      {"chart_out", KeyType::string, "", "fan chart SVG output"},
      {"repeats", KeyType::integer, 10, "permutation repeats per feature"},
      {"feature", KeyType::string, "", "feature name (sensitivity: empty means every categorical feature)"},
      {"shift", KeyType::number, 3.0, "sensitivity shift in standard deviations"},
      {"min_deaths", KeyType::number, 50.0, "compare: counties need more total deaths than this"},
  };
  return keys;
}

inline const KeySpec* find_key(const std::string& name) {
  for (const auto& k : run_config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

/// Converts a command-line string to the key's JSON type.
inline nlohmann::json parse_key_value(const KeySpec& k, const std::string& raw) {
  auto bad = [&]() { return UsageError("--" + k.name + ": cannot parse '" + raw + "'"); };
  auto split = [&]() {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : raw) {
      if (ch == ',') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!raw.empty()) parts.push_back(cur);
    return parts;
  };
  switch (k.type) {
    case KeyType::boolean:
      if (raw == "true" || raw == "1" || raw == "on" || raw == "yes") return true;
      if (raw == "false" || raw == "0" || raw == "off" || raw == "no") return false;
      throw bad();
    case KeyType::integer: {
      long long v = 0;
      auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) throw bad();
      return v;
    }
    case KeyType::number: {
      double v = 0;
      auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) throw bad();
      return v;
    }
    case KeyType::string: return raw;
    case KeyType::int_list: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& s : split()) {
        long long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw bad();
        a.push_back(v);
      }
      return a;
    }
    case KeyType::string_list: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& s : split()) a.push_back(s);
      return a;
    }
  }
  throw bad();
}

inline bool type_matches(const KeySpec& k, const nlohmann::json& v) {
  switch (k.type) {
    case KeyType::boolean: return v.is_boolean();
    case KeyType::integer: return v.is_number_integer();
    case KeyType::number: return v.is_number();
    case KeyType::string: return v.is_string();
    case KeyType::int_list:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_number_integer(); });
    case KeyType::string_list:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_string(); });
  }
  return false;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : run_config_keys()) values_[k.name] = k.default_value;
  }

  /// Merges a JSON object; unknown keys and type mismatches are usage errors.
  void merge(const nlohmann::json& j, const std::string& origin) {
    if (!j.is_object()) throw UsageError(origin + ": config must be a JSON object");
    for (const auto& [name, v] : j.items()) {
      const KeySpec* k = find_key(name);
      if (!k) throw UsageError(origin + ": unknown config key '" + name + "'");
      if (!type_matches(*k, v)) throw UsageError(origin + ": key '" + name + "' has the wrong type");
      values_[name] = v;
      explicit_.insert(name);
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(path + ": " + e.what());
    }
    merge(j, path);
  }

  void set_raw(const std::string& name, const std::string& raw) {
    const KeySpec* k = find_key(name);
    if (!k) throw UsageError("unknown option --" + name);
    values_[name] = parse_key_value(*k, raw);
    explicit_.insert(name);
  }

  /// CONDLSTMQ_SEED replaces the seed from the config file.
  void apply_environment() {
    if (const char* s = std::getenv("CONDLSTMQ_SEED"); s && *s) {
      try {
        set_raw("seed", s);
      } catch (const UsageError&) {
        throw UsageError(std::string("CONDLSTMQ_SEED: cannot parse '") + s + "'");
      }
    }
  }

  [[nodiscard]] bool has(const std::string& name) const {
    auto it = values_.find(name);
    return it != values_.end() && !it->is_null() && !(it->is_string() && it->get<std::string>().empty());
  }
  [[nodiscard]] bool is_explicit(const std::string& name) const { return explicit_.count(name) != 0; }

  [[nodiscard]] std::string str(const std::string& name) const { return at(name).get<std::string>(); }
  [[nodiscard]] std::string required(const std::string& name) const {
    if (!has(name)) throw UsageError("missing required option --" + name);
    return str(name);
  }
  [[nodiscard]] bool flag(const std::string& name) const { return at(name).get<bool>(); }
  [[nodiscard]] double number(const std::string& name) const { return at(name).get<double>(); }
  [[nodiscard]] std::size_t count(const std::string& name) const {
    const auto v = at(name).get<long long>();
    if (v < 0) throw UsageError("--" + name + " must be non-negative");
    return static_cast<std::size_t>(v);
  }
  [[nodiscard]] std::uint64_t seed() const {
    const auto& v = at("seed");
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    const auto s = v.get<long long>();
    if (s < 0) throw UsageError("--seed must be non-negative");
    return static_cast<std::uint64_t>(s);
  }
  [[nodiscard]] std::vector<std::string> strings(const std::string& name) const {
    return at(name).get<std::vector<std::string>>();
  }
  [[nodiscard]] const nlohmann::json& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ContractError("RunConfig: undeclared key " + name);
    return *it;
  }
  [[nodiscard]] const nlohmann::json& values() const { return values_; }

  /// Model hyperparameters; feature counts come from the panel.
  [[nodiscard]] ModelConfig model_config(std::size_t n_ts, std::size_t n_cat) const {
    ModelConfig c;
    c.hidden_units = count("hidden_units");
    c.learning_rate = number("learning_rate");
    c.dropout_rate = number("dropout_rate");
    c.epochs = count("epochs");
    c.history_len = count("history_len");
    c.horizon = count("horizon");
    c.n_quantiles = count("n_quantiles");
    c.batch_size = count("batch_size");
    c.condition_cell_state = flag("condition_cell_state");
    c.sort_quantiles = flag("sort_quantiles");
    c.clip_norm = number("clip_norm");
    c.seed = seed();
    c.n_ts_features = n_ts;
    c.n_cat_features = n_cat;
    if (has("n_ts_features") && count("n_ts_features") != n_ts)
      throw UsageError("n_ts_features = " + std::to_string(count("n_ts_features")) + " but the panel has " +
                       std::to_string(n_ts));
    if (has("n_cat_features") && count("n_cat_features") != n_cat)
      throw UsageError("n_cat_features = " + std::to_string(count("n_cat_features")) + " but the panel has " +
                       std::to_string(n_cat));
    if (c.batch_size == 0) throw UsageError("batch_size must be positive");
    try {
      c.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  [[nodiscard]] SynthConfig synth_config() const {
    SynthConfig s;
    s.n_counties = count("n_counties");
    s.n_dates = count("n_dates");
    s.n_cat = count("n_cat");
    s.causal_indices.clear();
    for (const auto& v : at("causal_indices")) {
      if (v.get<long long>() < 0) throw UsageError("causal_indices must be non-negative");
      s.causal_indices.push_back(v.get<std::size_t>());
    }
    if (has("causal_betas")) {
      s.causal_betas.clear();
      const KeySpec num{"causal_betas", KeyType::number, nullptr, ""};
      std::stringstream ss(str("causal_betas"));
      for (std::string part; std::getline(ss, part, ',');) s.causal_betas.push_back(parse_key_value(num, part).get<double>());
    } else {
      const std::vector<double> defaults = {0.6, 0.45, 0.3};
      s.causal_betas.clear();
      for (std::size_t i = 0; i < s.causal_indices.size(); ++i) s.causal_betas.push_back(i < 3 ? defaults[i] : 0.3);
    }
    s.seed = seed();
    s.hole_rate = number("hole_rate");
    s.counties_per_state = count("counties_per_state");
    s.dummy_feature = flag("dummy_feature");
    if (has("start_date")) s.start_date = str("start_date");
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return s;
  }

 private:
  nlohmann::json values_ = nlohmann::json::object();
  std::set<std::string> explicit_;
};

}  // namespace condlstmq
