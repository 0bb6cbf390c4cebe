// SPDX-License-Identifier: Apache-2.0
//
// Train/validation split, the minibatch Adam training loop, and checkpoint
// persistence.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "condlstmq/adam.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/model.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/quantile_loss.hpp"

namespace condlstmq {

// ---------------------------------------------------------------------------
// Split

struct SampleSplit {
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::size_t train_last_date = 0;  // last date index usable by training windows
};

/// Validation windows lie entirely inside the final `holdout_days` dates;
/// training windows lie entirely before them. Target days never overlap.
inline SampleSplit split_train_val(const CountyPanel& p, std::size_t holdout_days = 21, std::size_t history = 7,
                                   std::size_t horizon = 14) {
  const std::size_t span = history + horizon;
  if (holdout_days < span)
    throw DataError("split_train_val: holdout of " + std::to_string(holdout_days) +
                    " days cannot hold one window of " + std::to_string(span) + " days");
  if (p.n_dates() < holdout_days + span)
    throw DataError("split_train_val: panel has " + std::to_string(p.n_dates()) + " dates, needs at least " +
                    std::to_string(holdout_days + span) + " for one training and one validation window");
  SampleSplit s;
  const std::size_t first_val = p.n_dates() - holdout_days;
  s.train_last_date = first_val - 1;
  s.train = make_windows_in(p, history, horizon, 0, first_val - 1);
  s.val = make_windows_in(p, history, horizon, first_val, p.n_dates() - 1);
  return s;
}

// ---------------------------------------------------------------------------
// Config serialization

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"hidden_units", c.hidden_units},     {"learning_rate", c.learning_rate},
          {"dropout_rate", c.dropout_rate},     {"epochs", c.epochs},
          {"history_len", c.history_len},       {"horizon", c.horizon},
          {"n_quantiles", c.n_quantiles},       {"n_ts_features", c.n_ts_features},
          {"n_cat_features", c.n_cat_features}, {"seed", c.seed},
          {"batch_size", c.batch_size},         {"condition_cell_state", c.condition_cell_state},
          {"sort_quantiles", c.sort_quantiles}, {"clip_norm", c.clip_norm}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.hidden_units = j.at("hidden_units").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.history_len = j.at("history_len").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.n_quantiles = j.at("n_quantiles").get<std::size_t>();
    c.n_ts_features = j.at("n_ts_features").get<std::size_t>();
    c.n_cat_features = j.at("n_cat_features").get<std::size_t>();
    c.seed = j.at("seed").get<decltype(c.seed)>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.condition_cell_state = j.at("condition_cell_state").get<bool>();
    c.sort_quantiles = j.at("sort_quantiles").get<bool>();
    c.clip_norm = j.at("clip_norm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  ModelKind kind = ModelKind::condlstm_q;
  ModelConfig config;
  std::uint64_t seed = 0;
  double initial_train_loss = 0.0;  // untrained model, inference mode
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;

  /// Array of {epoch, train_loss, val_loss, seconds}.
  [[nodiscard]] nlohmann::json epochs_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : epochs)
      a.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"seconds", e.seconds}});
    return a;
  }
};

struct TrainOptions {
  bool report_timing = false;  // record wall time per epoch; off keeps reports byte-reproducible
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

namespace detail {

/// Deterministic per-(seed, epoch, batch) stream for dropout masks.
inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(batch), 0x7a11u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

/// Trains fresh parameters of `kind` for `config.epochs` epochs.
inline TrainResult train(const std::vector<WindowSample>& train_samples, const std::vector<WindowSample>& val_samples,
                         const ModelConfig& config, ModelKind kind, std::uint64_t seed,
                         const TrainOptions& options = {}) {
  config.validate();
  if (train_samples.empty()) throw ContractError("train: no training samples");
  if (val_samples.empty()) throw ContractError("train: no validation samples");

  TrainResult r;
  r.params = init_params(config, kind, seed);
  r.report.kind = kind;
  r.report.config = config;
  r.report.seed = seed;
  r.report.initial_train_loss = mean_loss(train_samples, r.params, config);
  r.report.initial_val_loss = mean_loss(val_samples, r.params, config);

  AdamOptions ao;
  ao.learning_rate = config.learning_rate;
  ao.clip_norm = config.clip_norm;
  AdamState state(r.params.arrays, ao);

  std::mt19937_64 shuffle_rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const WindowSample*> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_samples[order[i]]);

      ad::Graph g(detail::batch_seed(seed, epoch, batch_index));
      const BatchInputs in = make_batch(g, batch, config);
      const ParamVars p(g, r.params, true);
      const auto heads = forward_batch(g, in, p, kind, config, Mode::train);
      const ad::Var loss = avg_quantile_loss(in.target, heads);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      g.backward(loss);
      try {
        adam_step(r.params.arrays, p.grads(), state);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      loss_sum += value * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = mean_loss(val_samples, r.params, config);
    if (options.report_timing)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::optional<StandardizationStats> stats;
  std::vector<std::string> ts_feature_names;
  std::vector<std::string> cat_feature_names;
  std::string train_first_date;  // inclusive training-data date range
  std::string train_last_date;
};

/// Checkpoint of `params` trained on the split of standardized panel `p`.
inline Checkpoint make_checkpoint(const CountyPanel& p, const SampleSplit& split, const ModelConfig& config,
                                  ModelParams params) {
  Checkpoint ck;
  ck.config = config;
  ck.params = std::move(params);
  ck.stats = p.stats;
  ck.ts_feature_names = p.ts_feature_names;
  ck.cat_feature_names = p.cat_feature_names;
  ck.train_first_date = format_date(p.dates.front());
  ck.train_last_date = format_date(p.dates[split.train_last_date]);
  return ck;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, a] : ck.params.arrays) params[name] = {{"shape", a.shape}, {"data", a.data}};
  nlohmann::json j = {{"version", kCheckpointVersion},
                      {"kind", to_string(ck.params.kind)},
                      {"config", model_config_to_json(ck.config)},
                      {"ts_feature_names", ck.ts_feature_names},
                      {"cat_feature_names", ck.cat_feature_names},
                      {"train_range", {{"first", ck.train_first_date}, {"last", ck.train_last_date}}},
                      {"params", params}};
  j["stats"] = ck.stats ? stats_to_json(*ck.stats, ck.ts_feature_names, ck.cat_feature_names) : nlohmann::json();
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw ParseError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
    ck.params.kind = model_kind_from_string(j.at("kind").get<std::string>());
    ck.config = model_config_from_json(j.at("config"));
    ck.ts_feature_names = j.at("ts_feature_names").get<std::vector<std::string>>();
    ck.cat_feature_names = j.at("cat_feature_names").get<std::vector<std::string>>();
    ck.train_first_date = j.at("train_range").at("first").get<std::string>();
    ck.train_last_date = j.at("train_range").at("last").get<std::string>();
    for (const auto& [name, v] : j.at("params").items()) {
      ad::Shape shape = v.at("shape").get<ad::Shape>();
      std::vector<double> data = v.at("data").get<std::vector<double>>();
      if (data.size() != ad::numel(shape))
        throw ParseError("checkpoint: parameter " + name + " has " + std::to_string(data.size()) +
                         " values for shape " + ad::shape_str(shape));
      ck.params.arrays.emplace(name, ad::Array(std::move(shape), std::move(data)));
    }
    if (!j.at("stats").is_null()) ck.stats = stats_from_json(j.at("stats"), ck.ts_feature_names, ck.cat_feature_names);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (ck.ts_feature_names.size() != ck.config.n_ts_features || ck.cat_feature_names.size() != ck.config.n_cat_features)
    throw DimensionError("checkpoint: feature name lists do not match the embedded config");
  try {
    validate_params(ck.params, ck.config);
  } catch (const std::exception& e) {
    throw DimensionError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_json_file(path, checkpoint_to_json(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  try {
    return checkpoint_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(path + ": " + e.what());
  }
}

inline nlohmann::json train_report_to_json(const TrainReport& r) {
  return {{"kind", to_string(r.kind)},
          {"seed", r.seed},
          {"config", model_config_to_json(r.config)},
          {"initial_train_loss", r.initial_train_loss},
          {"initial_val_loss", r.initial_val_loss},
          {"epochs", r.epochs_json()}};
}

}  // namespace condlstmq
