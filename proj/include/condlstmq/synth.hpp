// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic county panels with known ground truth.
//
// Each county draws standardized latent scores z; its categorical features
// are affine images of z. A designated causal subset sets the severity
//   S = exp(log_base + sum_j beta_j z_causal_j)
// and the first causal feature also shifts the epidemic peak. Daily deaths
// are Poisson(S * bump(t) * weekly(t)); cases lead deaths by a week; the
// mobility median falls as the epidemic rises.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/quantile_loss.hpp"

namespace condlstmq {

struct SynthConfig {
  std::size_t n_counties = 50;
  std::size_t n_dates = 150;
  std::size_t n_cat = 10;
  std::vector<std::size_t> causal_indices = {0, 1, 2};
  std::vector<double> causal_betas = {0.6, 0.45, 0.3};
  std::uint64_t seed = 7;
  double hole_rate = 0.1;
  double log_base_severity = std::log(50.0);
  std::size_t counties_per_state = 10;
  std::string start_date = "2020-03-01";
  bool dummy_feature = false;  // append a pure-noise categorical column named "dummy"

  void validate() const {
    if (n_counties == 0) throw ContractError("synth: n_counties must be positive");
    if (n_dates < 21) throw ContractError("synth: n_dates must be at least 21 (one 7 + 14 window)");
    if (n_cat == 0) throw ContractError("synth: n_cat must be positive");
    if (causal_indices.empty()) throw ContractError("synth: at least one causal feature is required");
    if (causal_betas.size() != causal_indices.size())
      throw ContractError("synth: causal_betas must have one entry per causal index");
    for (auto i : causal_indices)
      if (i >= n_cat) throw ContractError("synth: causal index " + std::to_string(i) + " out of range");
    if (!(hole_rate >= 0.0 && hole_rate < 1.0)) throw ContractError("synth: hole_rate must lie in [0, 1)");
    if (counties_per_state == 0) throw ContractError("synth: counties_per_state must be positive");
    if (n_counties / counties_per_state + 1 > 99) throw ContractError("synth: too many states for 2-digit FIPS");
  }
};

/// Generator state that does not depend on the observation noise.
struct SynthStructure {
  SynthConfig config;
  std::vector<std::string> county_ids;
  std::vector<double> latent;    // [county][cat], standardized scores
  std::vector<double> cat;       // [county][cat], raw feature values
  std::vector<double> severity;  // per county
  std::vector<double> peak;      // per county, day index
  std::vector<double> lambda;    // [county][date], Poisson mean of deaths
  std::vector<double> seasonality;  // [county][date]
  std::vector<double> mobility_mean;  // [county][date]
  std::vector<std::string> cat_names;

  [[nodiscard]] std::size_t n_dates() const { return config.n_dates; }
  [[nodiscard]] double lambda_at(std::size_t c, std::size_t d) const { return lambda[c * config.n_dates + d]; }
};

/// Epidemic curve sech^2((t - peak) / width): exponential growth and decay
/// with a constant log-rate in both tails.
inline double synth_bump(double t, double peak, double width) {
  const double c = std::cosh((t - peak) / width);
  return 1.0 / (c * c);
}

inline double synth_weekly(std::size_t t) { return 1.0 + 0.3 * std::cos(2.0 * std::acos(-1.0) * static_cast<double>(t) / 7.0); }

/// Recomputes lambda (and mobility means) from severity and peak. Tests may
/// edit severity or peak and call this before sampling.
inline void synth_refresh_lambda(SynthStructure& s) {
  const std::size_t n = s.config.n_dates;
  const double width = 0.2 * static_cast<double>(n);
  s.lambda.assign(s.county_ids.size() * n, 0.0);
  s.mobility_mean.assign(s.county_ids.size() * n, 0.0);
  for (std::size_t c = 0; c < s.county_ids.size(); ++c)
    for (std::size_t d = 0; d < n; ++d) {
      const double b = synth_bump(static_cast<double>(d), s.peak[c], width);
      s.lambda[c * n + d] = s.severity[c] * b * synth_weekly(d);
      s.mobility_mean[c * n + d] = 10.0 * (1.0 - 0.5 * b);
    }
}

inline SynthStructure synth_structure(const SynthConfig& cfg) {
  cfg.validate();
  SynthStructure s;
  s.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 52.0);

  const std::size_t n_cat_total = cfg.n_cat + (cfg.dummy_feature ? 1 : 0);
  for (std::size_t f = 0; f < cfg.n_cat; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "cat_%02zu", f);
    s.cat_names.emplace_back(name);
  }
  if (cfg.dummy_feature) s.cat_names.emplace_back("dummy");

  for (std::size_t c = 0; c < cfg.n_counties; ++c) {
    const std::size_t state = c / cfg.counties_per_state + 1;
    const std::size_t county = (c % cfg.counties_per_state) * 2 + 1;
    char fips[8];
    std::snprintf(fips, sizeof fips, "%02zu%03zu", state, county);
    s.county_ids.emplace_back(fips);
  }

  s.latent.resize(cfg.n_counties * n_cat_total);
  for (auto& z : s.latent) z = normal(rng);
  s.cat.resize(s.latent.size());
  for (std::size_t c = 0; c < cfg.n_counties; ++c)
    for (std::size_t f = 0; f < n_cat_total; ++f) {
      const double offset = 100.0 * static_cast<double>(f + 1);
      const double scale = 10.0 * static_cast<double>(f + 1);
      s.cat[c * n_cat_total + f] = offset + scale * s.latent[c * n_cat_total + f];
    }

  const double n = static_cast<double>(cfg.n_dates);
  for (std::size_t c = 0; c < cfg.n_counties; ++c) {
    double log_s = cfg.log_base_severity;
    for (std::size_t j = 0; j < cfg.causal_indices.size(); ++j)
      log_s += cfg.causal_betas[j] * s.latent[c * n_cat_total + cfg.causal_indices[j]];
    s.severity.push_back(std::exp(log_s));
    const double z0 = std::clamp(s.latent[c * n_cat_total + cfg.causal_indices[0]], -2.5, 2.5);
    s.peak.push_back(0.6 * n - 0.08 * n * z0);
  }
  synth_refresh_lambda(s);

  // Seasonality: one smooth weekly cycle per state with a random phase.
  const std::size_t n_states = (cfg.n_counties + cfg.counties_per_state - 1) / cfg.counties_per_state;
  std::vector<double> state_phase(n_states);
  for (auto& p : state_phase) p = phase(rng);
  const Date start = parse_date(cfg.start_date);
  s.seasonality.resize(cfg.n_counties * cfg.n_dates);
  for (std::size_t c = 0; c < cfg.n_counties; ++c)
    for (std::size_t d = 0; d < cfg.n_dates; ++d) {
      const double week = static_cast<double>(week_of_year(add_days(start, static_cast<long>(d))));
      s.seasonality[c * cfg.n_dates + d] =
          1.0 + 0.15 * std::cos(2.0 * std::acos(-1.0) * (week - state_phase[c / cfg.counties_per_state]) / 52.0);
    }
  return s;
}

/// Draws one raw (unstandardized) panel from the structure. Mobility holes
/// are NaN.
inline CountyPanel synth_sample(const SynthStructure& s, std::uint64_t noise_seed) {
  const auto& cfg = s.config;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  CountyPanel p;
  p.county_ids = s.county_ids;
  for (const auto& c : p.county_ids) p.state_of[c] = state_of_fips(c);
  const Date start = parse_date(cfg.start_date);
  for (std::size_t d = 0; d < cfg.n_dates; ++d) p.dates.push_back(add_days(start, static_cast<long>(d)));
  p.ts_feature_names = {"new_cases", kDeathsFeature, "mobility_m50", "mobility_m50_index", "seasonality"};
  p.cat_feature_names = s.cat_names;
  p.cat = s.cat;
  p.ts.assign(p.n_counties() * p.n_dates() * p.n_ts(), 0.0);

  const std::size_t n = cfg.n_dates;
  for (std::size_t c = 0; c < p.n_counties(); ++c)
    for (std::size_t d = 0; d < n; ++d) {
      const double lam = s.lambda_at(c, d);
      const double lead = d + 7 < n ? s.lambda_at(c, d + 7) : s.lambda_at(c, n - 1);
      // Separate distributions per draw keep the stream layout independent
      // of lambda values.
      p.ts_at(c, d, 0) = lead > 0.0 ? static_cast<double>(std::poisson_distribution<long>(20.0 * lead)(rng)) : 0.0;
      p.ts_at(c, d, 1) = lam > 0.0 ? static_cast<double>(std::poisson_distribution<long>(lam)(rng)) : 0.0;
      const double m = s.mobility_mean[c * n + d] + noise(rng);
      const bool hole = unit(rng) < cfg.hole_rate;
      p.ts_at(c, d, 2) = hole ? nan : m;
      p.ts_at(c, d, 3) = hole ? nan : 10.0 * m;
      p.ts_at(c, d, 4) = s.seasonality[c * n + d];
    }
  return p;
}

/// Smallest k with P(Poisson(lambda) <= k) >= q.
inline long poisson_quantile(double lambda, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ContractError("poisson_quantile: q must lie in (0, 1)");
  if (lambda <= 0.0) return 0;
  double term = std::exp(-lambda), cdf = term;
  long k = 0;
  while (cdf < q) {
    ++k;
    term *= lambda / static_cast<double>(k);
    cdf += term;
  }
  return k;
}

struct SynthOutput {
  CountyPanel panel;
  SynthStructure structure;
};

inline SynthOutput synth_generate(const SynthConfig& cfg) {
  SynthOutput out{CountyPanel{}, synth_structure(cfg)};
  // The noise stream is derived from the seed but distinct from the structure stream.
  out.panel = synth_sample(out.structure, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return out;
}

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"n_counties", c.n_counties},   {"n_dates", c.n_dates},
          {"n_cat", c.n_cat},             {"causal_indices", c.causal_indices},
          {"causal_betas", c.causal_betas}, {"seed", c.seed},
          {"hole_rate", c.hole_rate},     {"log_base_severity", c.log_base_severity},
          {"counties_per_state", c.counties_per_state}, {"start_date", c.start_date},
          {"dummy_feature", c.dummy_feature}};
}

/// Ground truth for oracle tests: causal features, severities, Poisson means
/// and the Poisson quantiles at the nine grid levels.
inline nlohmann::json synth_metadata(const SynthStructure& s) {
  nlohmann::json causal = nlohmann::json::array();
  for (auto i : s.config.causal_indices) causal.push_back(s.cat_names[i]);
  nlohmann::json lambda = nlohmann::json::array(), quantiles = nlohmann::json::array();
  const auto grid = quantile_grid();
  for (std::size_t c = 0; c < s.county_ids.size(); ++c) {
    nlohmann::json lrow = nlohmann::json::array(), qrow = nlohmann::json::array();
    for (std::size_t d = 0; d < s.n_dates(); ++d) {
      lrow.push_back(s.lambda_at(c, d));
      nlohmann::json qs = nlohmann::json::array();
      for (double q : grid) qs.push_back(poisson_quantile(s.lambda_at(c, d), q));
      qrow.push_back(std::move(qs));
    }
    lambda.push_back(std::move(lrow));
    quantiles.push_back(std::move(qrow));
  }
  return {{"config", synth_config_to_json(s.config)},
          {"county_ids", s.county_ids},
          {"causal_features", causal},
          {"severity", s.severity},
          {"peak", s.peak},
          {"lambda", lambda},
          {"poisson_quantiles", quantiles}};
}

}  // namespace condlstmq
