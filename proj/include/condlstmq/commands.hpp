// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the condlstmq tool. run_cli() parses
//   condlstmq <subcommand> [--config <path>] [--key value ...]
// and returns the process exit code: 0 success, 1 runtime or data error,
// 2 usage error.

#pragma once

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "condlstmq/errors.hpp"
#include "condlstmq/eval.hpp"
#include "condlstmq/fan_chart.hpp"
#include "condlstmq/loaders.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/run_config.hpp"
#include "condlstmq/synth.hpp"
#include "condlstmq/train.hpp"

namespace condlstmq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Loads a panel that has been hole-filled and standardized.
inline CountyPanel load_ready_panel(const std::string& path) {
  CountyPanel p = load_panel(path);
  if (p.missing_count() != 0)
    throw DataError(path + ": panel has " + std::to_string(p.missing_count()) + " missing values; run preprocess first");
  if (!p.stats) throw DataError(path + ": panel is not standardized; run preprocess first");
  return p;
}

inline Date onset_or(const RunConfig& rc, Date fallback) {
  return rc.has("onset") ? parse_date(rc.str("onset")) : fallback;
}

/// First onset whose window lies inside the holdout span.
inline Date validation_onset(const CountyPanel& p, const RunConfig& rc, const ModelConfig& mc) {
  const std::size_t holdout = rc.count("holdout_days");
  if (p.n_dates() < holdout) throw DataError("panel shorter than holdout_days");
  return add_days(p.dates.front(), static_cast<long>(p.n_dates() - holdout + mc.history_len));
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& rc, std::ostream& out) {
  const std::string path = rc.required("out");
  const SynthConfig sc = rc.synth_config();
  const SynthOutput s = synth_generate(sc);
  save_panel(path, s.panel);
  const std::string meta = rc.has("metadata_out") ? rc.str("metadata_out") : path + ".meta.json";
  write_json_file(meta, synth_metadata(s.structure));
  std::size_t holes = 0;
  for (double v : s.panel.ts) holes += std::isnan(v) ? 1 : 0;
  out << "synth: " << s.panel.n_counties() << " counties x " << s.panel.n_dates() << " days, " << s.panel.n_cat()
      << " categorical features, " << holes << " mobility holes\n"
      << "wrote " << path << " and " << meta << "\n";
  return kExitOk;
}

inline int cmd_preprocess(const RunConfig& rc, std::ostream& out) {
  const std::string path = rc.required("out");
  const std::string report_path = rc.has("report_out") ? rc.str("report_out") : path + ".report.json";
  const std::size_t holdout = rc.count("holdout_days");
  const std::size_t threshold = rc.count("spline_run_threshold");
  CountyPanel result;
  PreprocessReport report;
  if (rc.has("panel")) {
    CountyPanel raw = load_panel(rc.str("panel"));
    if (raw.stats) throw DataError(rc.str("panel") + ": panel is already standardized");
    for (double v : raw.ts) report.mobility_holes += std::isnan(v) ? 1 : 0;
    const PanelFillReport fill = fill_panel_holes(raw, threshold);
    report.same_day_filled = fill.same_day_filled;
    report.spline_filled = fill.spline_filled;
    if (raw.n_dates() <= holdout) throw DataError("preprocess: panel shorter than the holdout span");
    result = standardize(raw, raw.n_dates() - holdout);
    report.zero_variance_features = zero_variance_names(result);
    report.n_counties = result.n_counties();
    report.n_dates = result.n_dates();
  } else {
    PreprocessInputs in;
    in.nyt = rc.required("nyt");
    in.mobility = rc.required("mobility");
    in.tables.push_back({rc.required("demographics"), rc.str("demographics_key"), rc.strings("demographics_features"),
                         "", true});
    if (rc.has("gdp")) in.tables.push_back({rc.str("gdp"), rc.str("gdp_key"), rc.strings("gdp_features"), "gdp_", false});
    if (rc.has("census"))
      in.tables.push_back({rc.str("census"), rc.str("census_key"), rc.strings("census_features"), "census_", false});
    if (rc.has("policy")) in.policy = PolicySpec{rc.str("policy"), rc.strings("policy_types")};
    in.weekly_rates = rc.str("weekly_rates");
    if (rc.has("start_date")) in.start = parse_date(rc.str("start_date"));
    if (rc.has("end_date")) in.end = parse_date(rc.str("end_date"));
    in.holdout_days = holdout;
    in.spline_run_threshold = threshold;
    result = preprocess(in, report);
  }
  save_panel(path, result);
  write_json_file(report_path, report.to_json());
  out << "preprocess: " << report.n_counties << " counties x " << report.n_dates << " days; "
      << report.state_filled_counties.size() << " counties state-filled; " << report.same_day_filled
      << " same-day and " << report.spline_filled << " spline fills; " << report.zero_variance_features.size()
      << " zero-variance features\n"
      << "wrote " << path << " and " << report_path << "\n";
  return kExitOk;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  const std::string ck_path = rc.required("checkpoint");
  const CountyPanel p = detail::load_ready_panel(rc.required("panel"));
  ModelKind kind;
  try {
    kind = model_kind_from_string(rc.str("model"));
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const ModelConfig mc = rc.model_config(p.n_ts(), p.n_cat());
  const SampleSplit split = split_train_val(p, rc.count("holdout_days"), mc.history_len, mc.horizon);
  TrainOptions opts;
  opts.report_timing = rc.flag("report_timing");
  opts.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " train " << detail::fmt("%.6f", e.train_loss) << " val "
        << detail::fmt("%.6f", e.val_loss) << "\n";
  };
  out << "train: " << to_string(kind) << ", " << split.train.size() << " training and " << split.val.size()
      << " validation samples\n";
  const TrainResult r = train(split.train, split.val, mc, kind, mc.seed, opts);
  save_checkpoint(ck_path, make_checkpoint(p, split, mc, r.params));
  const std::string report_path = rc.has("report_out") ? rc.str("report_out") : ck_path + ".train.json";
  write_json_file(report_path, train_report_to_json(r.report));
  out << "wrote " << ck_path << " and " << report_path << "\n";
  return kExitOk;
}

inline int cmd_predict(const RunConfig& rc, std::ostream& out) {
  const std::string csv_path = rc.required("forecast_out");
  const Checkpoint ck = load_checkpoint(rc.required("checkpoint"));
  const CountyPanel p = detail::load_ready_panel(rc.required("panel"));
  const Date onset = detail::onset_or(rc, add_days(p.dates.back(), 1));
  PredictOptions opts;
  opts.clamp_zero = rc.flag("clamp_zero");
  opts.sort_quantiles = rc.flag("sort_quantiles") || ck.config.sort_quantiles;
  const auto forecasts = predict(ck, p, onset, opts);
  write_forecast_csv(csv_path, forecasts);
  out << "predict: " << forecasts.size() << " counties from " << format_date(onset) << "\nwrote " << csv_path << "\n";
  if (rc.has("chart_county")) {
    const std::string svg = rc.required("chart_out");
    FanChartOptions fo;
    const std::size_t onset_i = onset_index(p, onset);
    if (onset_i + ck.config.horizon <= p.n_dates()) {
      const auto truth = truth_at(p, onset_i, ck.config.horizon);
      if (auto it = truth.find(rc.str("chart_county")); it != truth.end()) fo.truth = it->second;
    }
    emit_fan_chart(csv_path, rc.str("chart_county"), svg, fo);
    out << "wrote " << svg << "\n";
  }
  return kExitOk;
}

inline int cmd_evaluate(const RunConfig& rc, std::ostream& out) {
  const std::string report_path = rc.required("out");
  const std::string ck_path = rc.required("checkpoint");
  const Checkpoint ck = load_checkpoint(ck_path);
  const CountyPanel p = detail::load_ready_panel(rc.required("panel"));
  const Date onset = detail::onset_or(rc, detail::validation_onset(p, rc, ck.config));
  const auto forecasts = predict(ck, p, onset);
  const auto truth = truth_at(p, onset_index(p, onset), ck.config.horizon);
  const EvalReport r = evaluate(forecasts, truth, deaths_stats(ck), content_id(read_json_file(ck_path).dump()));
  write_json_file(report_path, r.to_json());
  if (rc.has("forecast_out")) write_forecast_csv(rc.str("forecast_out"), forecasts);
  out << "evaluate: onset " << r.onset_date << ", mean pinball " << detail::fmt("%.6f", r.pinball.mean) << "\n"
      << "state-wise RMSE " << detail::fmt("%.4f", r.state_wise_rmse) << " (zero control "
      << detail::fmt("%.4f", r.state_wise_control_rmse) << "), national RMSE " << detail::fmt("%.4f", r.national_rmse)
      << " (zero control " << detail::fmt("%.4f", r.national_control_rmse) << ")\n"
      << "wrote " << report_path << "\n";
  return kExitOk;
}

inline int cmd_importance(const RunConfig& rc, std::ostream& out) {
  const std::string report_path = rc.required("out");
  const Checkpoint ck = load_checkpoint(rc.required("checkpoint"));
  const CountyPanel p = align_panel(detail::load_ready_panel(rc.required("panel")), ck);
  const SampleSplit split = split_train_val(p, rc.count("holdout_days"), ck.config.history_len, ck.config.horizon);
  const std::string window = "validation onset " + format_date(p.dates[split.val.front().onset]);
  ImportanceReport rep;
  if (rc.has("feature")) {
    rep.window = window;
    const std::string f = rc.str("feature");
    const bool is_cat = std::find(ck.cat_feature_names.begin(), ck.cat_feature_names.end(), f) != ck.cat_feature_names.end();
    rep.rows.push_back(permutation_importance(ck, split.val, f, is_cat ? FeatureKind::categorical : FeatureKind::timeseries,
                                              rc.count("repeats"), rc.seed()));
  } else {
    rep = importance_all(ck, split.val, rc.count("repeats"), rc.seed(), window);
  }
  write_json_file(report_path, rep.to_json());
  out << "importance: " << window << "\n";
  for (auto kind : {FeatureKind::categorical, FeatureKind::timeseries})
    for (const auto& r : rep.ranked(kind))
      out << "  " << to_string(kind) << " " << r.feature << " delta " << detail::fmt("%+.6f", r.mean_delta) << " p "
          << detail::fmt("%.4g", r.sign.p_value) << "\n";
  out << "wrote " << report_path << "\n";
  return kExitOk;
}

inline int cmd_sensitivity(const RunConfig& rc, std::ostream& out) {
  const std::string report_path = rc.required("out");
  const Checkpoint ck = load_checkpoint(rc.required("checkpoint"));
  const CountyPanel p = detail::load_ready_panel(rc.required("panel"));
  const Date onset = detail::onset_or(rc, add_days(p.dates.back(), 1));
  std::vector<std::string> features = rc.has("feature") ? std::vector<std::string>{rc.str("feature")} : ck.cat_feature_names;
  nlohmann::json a = nlohmann::json::array();
  for (const auto& f : features) {
    const SensitivityResult r = sensitivity(ck, p, onset, f, rc.number("shift"));
    double plus = 0.0, minus = 0.0, base = 0.0;
    for (std::size_t d = 0; d < r.baseline.size(); ++d) {
      base += r.baseline[d];
      plus += r.plus[d];
      minus += r.minus[d];
    }
    out << "  " << f << ": 14-day national total " << detail::fmt("%.2f", base) << ", +shift "
        << detail::fmt("%.2f", plus) << ", -shift " << detail::fmt("%.2f", minus) << "\n";
    a.push_back(r.to_json());
  }
  write_json_file(report_path, a);
  out << "wrote " << report_path << "\n";
  return kExitOk;
}

inline int cmd_compare(const RunConfig& rc, std::ostream& out) {
  const std::string report_path = rc.required("out");
  const Checkpoint a = load_checkpoint(rc.required("checkpoint"));
  const Checkpoint b = load_checkpoint(rc.required("baseline_checkpoint"));
  const CountyPanel raw = detail::load_ready_panel(rc.required("panel"));
  auto val_losses = [&](const Checkpoint& ck) {
    const CountyPanel p = align_panel(raw, ck);
    const SampleSplit split = split_train_val(p, rc.count("holdout_days"), ck.config.history_len, ck.config.horizon);
    return per_county_loss(split.val, ck.params, ck.config);
  };
  const CompareResult r = compare_models(val_losses(a), val_losses(b), total_deaths(raw), rc.number("min_deaths"));
  nlohmann::json j = r.to_json();
  j["model_a"] = to_string(a.params.kind);
  j["model_b"] = to_string(b.params.kind);
  write_json_file(report_path, j);
  out << "compare: " << to_string(a.params.kind) << " vs " << to_string(b.params.kind) << " over " << r.counties.size()
      << " counties, mean loss " << detail::fmt("%.6f", r.mean_a) << " vs " << detail::fmt("%.6f", r.mean_b)
      << ", one-sided Wilcoxon p " << detail::fmt("%.4g", r.wilcoxon.p_value) << " (" << to_string(r.wilcoxon.method)
      << ")\nwrote " << report_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

using Command = std::function<int(const RunConfig&, std::ostream&)>;

inline const std::map<std::string, std::pair<Command, std::string>>& commands() {
  static const std::map<std::string, std::pair<Command, std::string>> table = {
      {"synth", {cmd_synth, "generate a synthetic county panel with ground truth"}},
      {"preprocess", {cmd_preprocess, "load, fill and standardize a panel"}},
      {"train", {cmd_train, "train a condlstm-q or pseudo-categorical model"}},
      {"predict", {cmd_predict, "write 14-day quantile forecasts for every county"}},
      {"evaluate", {cmd_evaluate, "score forecasts: pinball loss, state and national RMSE, zero control"}},
      {"importance", {cmd_importance, "permutation feature importance on the validation set"}},
      {"sensitivity", {cmd_sensitivity, "national forecast under +/- shifts of a categorical feature"}},
      {"compare", {cmd_compare, "paired per-county comparison of two checkpoints"}},
  };
  return table;
}

/// Parses arguments and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"condlstmq: conditional LSTM quantile forecasts of county deaths", "condlstmq"};
  app.require_subcommand(1);
  struct Bound {
    std::string config;
    std::map<std::string, std::string> values;
  };
  std::map<std::string, std::unique_ptr<Bound>> bound;
  const std::map<std::string, std::string> aliases = {{"counties", "n_counties"}, {"days", "n_dates"}};
  for (const auto& [name, cmd] : commands()) {
    CLI::App* sub = app.add_subcommand(name, cmd.second);
    auto b = std::make_unique<Bound>();
    sub->add_option("--config", b->config, "JSON run configuration");
    for (const auto& k : run_config_keys()) sub->add_option("--" + k.name, b->values[k.name], k.help);
    for (const auto& [alias, target] : aliases)
      sub->add_option("--" + alias, b->values["@" + alias], "alias of --" + target);
    bound.emplace(name, std::move(b));
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "condlstmq: usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  const Bound& b = *bound.at(name);
  RunConfig rc;
  try {
    if (!b.config.empty()) rc.merge_file(b.config);
    rc.apply_environment();
    for (const auto& [key, raw] : b.values) {
      const std::string flag = key[0] == '@' ? key.substr(1) : key;
      if (chosen->count("--" + flag) == 0) continue;
      rc.set_raw(key[0] == '@' ? aliases.at(flag) : key, raw);
    }
  } catch (const UsageError& e) {
    err << "condlstmq " << name << ": usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    return commands().at(name).first(rc, out);
  } catch (const UsageError& e) {
    err << "condlstmq " << name << ": usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "condlstmq " << name << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace condlstmq::cli
