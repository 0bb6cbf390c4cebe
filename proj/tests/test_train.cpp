// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "condlstmq/train.hpp"
#include "fixtures.hpp"

using namespace condlstmq;

namespace {

ModelConfig tiny_model(const CountyPanel& p, std::size_t epochs = 1) {
  ModelConfig c;
  c.hidden_units = 6;
  c.epochs = epochs;
  c.batch_size = 64;
  c.n_ts_features = p.n_ts();
  c.n_cat_features = p.n_cat();
  return c;
}

}  // namespace

TEST(Split, OneValidationWindowPerCountyAtEnd) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(4, 157, 7));
  const auto s = split_train_val(rp.panel);
  ASSERT_EQ(s.val.size(), 4u);
  for (const auto& v : s.val) EXPECT_EQ(v.onset, 143u);  // day 144 counted from 1
  EXPECT_EQ(s.train.size(), 4u * (136 - 21 + 1));
  EXPECT_EQ(s.train_last_date, 135u);
  std::size_t last_train_target = 0;
  for (const auto& t : s.train) last_train_target = std::max(last_train_target, t.onset + 13);
  EXPECT_LT(last_train_target, 143u);
}

TEST(Split, RejectsTooShortHoldoutOrPanel) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(2, 41, 7));
  EXPECT_THROW(split_train_val(rp.panel, 20), DataError);
  EXPECT_THROW(split_train_val(rp.panel, 21), DataError);
  const auto ok = fixtures::ready_synth(fixtures::small_synth(2, 42, 7));
  EXPECT_EQ(split_train_val(ok.panel, 21).train.size(), 2u);
}

TEST(Train, SeededRunsAreBitIdentical) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(6, 60, 3));
  const auto s = split_train_val(rp.panel);
  const auto c = tiny_model(rp.panel, 2);
  const auto a = train(s.train, s.val, c, ModelKind::condlstm_q, 11);
  const auto b = train(s.train, s.val, c, ModelKind::condlstm_q, 11);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.epochs, b.report.epochs);
  EXPECT_EQ(train_report_to_json(a.report).dump(), train_report_to_json(b.report).dump());
  const auto other = train(s.train, s.val, c, ModelKind::condlstm_q, 12);
  EXPECT_NE(a.params, other.params);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(4, 50, 3));
  const auto s = split_train_val(rp.panel);
  auto c = tiny_model(rp.panel, 3);
  c.learning_rate = 0.0;
  for (auto kind : {ModelKind::condlstm_q, ModelKind::pseudo_categorical}) {
    const auto r = train(s.train, s.val, c, kind, 5);
    EXPECT_EQ(r.params, init_params(c, kind, 5));
    for (const auto& e : r.report.epochs) EXPECT_EQ(e.seconds, 0.0);
  }
}

TEST(Train, LearnsOnSyntheticPanel) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(50, 120, 7));
  const auto s = split_train_val(rp.panel);
  auto c = tiny_model(rp.panel, 2);
  c.hidden_units = 8;
  c.batch_size = 32;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = train(s.train, s.val, c, ModelKind::condlstm_q, seed);
    EXPECT_LT(r.report.epochs.back().val_loss, r.report.initial_val_loss) << "seed " << seed;
  }
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(2, 50, 3));
  auto s = split_train_val(rp.panel);
  for (auto& t : s.train) t.target[0] = NAN;
  try {
    train(s.train, s.val, tiny_model(rp.panel), ModelKind::condlstm_q, 1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, ReportsTimingOnlyWhenAsked) {
  const auto rp = fixtures::ready_synth(fixtures::small_synth(2, 50, 3));
  const auto s = split_train_val(rp.panel);
  TrainOptions o;
  o.report_timing = true;
  std::size_t calls = 0;
  o.on_epoch = [&](const EpochRecord&) { ++calls; };
  const auto r = train(s.train, s.val, tiny_model(rp.panel, 2), ModelKind::pseudo_categorical, 1, o);
  EXPECT_EQ(calls, 2u);
  EXPECT_GT(r.report.epochs[0].seconds, 0.0);
}

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    rp_ = fixtures::ready_synth(fixtures::small_synth(3, 50, 9));
    split_ = split_train_val(rp_.panel);
    config_ = tiny_model(rp_.panel);
    ck_ = make_checkpoint(rp_.panel, split_, config_, train(split_.train, split_.val, config_, ModelKind::condlstm_q, 4).params);
  }

  fixtures::ReadyPanel rp_;
  SampleSplit split_;
  ModelConfig config_;
  Checkpoint ck_;
  fixtures::TempDir dir_{"ckpt"};
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const auto path = dir_.file("m.json");
  save_checkpoint(path, ck_);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.params, ck_.params);
  EXPECT_EQ(back.stats, ck_.stats);
  EXPECT_EQ(back.ts_feature_names, ck_.ts_feature_names);
  EXPECT_EQ(back.train_last_date, format_date(rp_.panel.dates[28]));
  EXPECT_EQ(model_config_to_json(back.config), model_config_to_json(ck_.config));
  const auto before = predict_samples(split_.val, ck_.params, ck_.config);
  const auto after = predict_samples(split_.val, back.params, back.config);
  EXPECT_EQ(before, after);
}

TEST_F(CheckpointTest, TruncatedFileIsParseError) {
  const auto path = dir_.file("m.json");
  save_checkpoint(path, ck_);
  const auto text = fixtures::slurp(path);
  const auto cut = dir_.write("cut.json", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(cut), ParseError);
}

TEST_F(CheckpointTest, VersionMismatchIsExplicit) {
  auto j = checkpoint_to_json(ck_);
  j["version"] = 99;
  try {
    checkpoint_from_json(j);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }
}

TEST_F(CheckpointTest, ShapeMismatchAgainstConfig) {
  auto j = checkpoint_to_json(ck_);
  j["config"]["hidden_units"] = 7;
  EXPECT_THROW(checkpoint_from_json(j), DimensionError);
  auto k = checkpoint_to_json(ck_);
  k["params"]["lstm_b"]["data"].erase(0);
  EXPECT_THROW(checkpoint_from_json(k), ParseError);
}
