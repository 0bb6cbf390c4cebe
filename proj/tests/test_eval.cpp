// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <random>
#include <sstream>

#include "condlstmq/eval.hpp"
#include "condlstmq/fan_chart.hpp"
#include "condlstmq/stats_tests.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace condlstmq;

namespace {

QuantileForecast flat_forecast(const std::string& county, std::size_t horizon, double base) {
  QuantileForecast f;
  f.county_id = county;
  f.onset_date = parse_date("2020-06-12");
  f.values = ad::Array::zeros({horizon, kNumQuantiles});
  for (std::size_t d = 0; d < horizon; ++d)
    for (std::size_t k = 0; k < kNumQuantiles; ++k)
      f.values.data[d * kNumQuantiles + k] = base + static_cast<double>(d) + 0.5 * static_cast<double>(k);
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Statistical tests

TEST(Wilcoxon, AllNegativeFiveGivesOneOverThirtyTwo) {
  const std::vector<double> d{-0.5, -1.0, -0.2, -3.0, -0.7};
  const auto r = wilcoxon_signed_rank_lower(d);
  EXPECT_EQ(r.method, WilcoxonMethod::exact);
  EXPECT_EQ(r.w_plus, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 32.0);
}

TEST(Wilcoxon, SymmetricDeltasNearHalf) {
  const std::vector<double> d{-1, 1, -2, 2, -3, 3, -4, 4};
  const auto r = wilcoxon_signed_rank_lower(d);
  EXPECT_NEAR(r.p_value, 0.5, 0.07);
  EXPECT_DOUBLE_EQ(r.p_value, oracle::wilcoxon_lower_bruteforce(d));
}

TEST(Wilcoxon, ZerosDroppedTiesMidranked) {
  const std::vector<double> d{0.0, -1.0, 1.0, -1.0, 2.0, 0.0, -3.0};
  const auto r = wilcoxon_signed_rank_lower(d);
  EXPECT_EQ(r.dropped_zeros, 2u);
  EXPECT_EQ(r.n, 5u);
  EXPECT_DOUBLE_EQ(r.w_plus, 2.0 + 4.0);  // |1| ties share rank 2; |2| has rank 4
  EXPECT_DOUBLE_EQ(r.p_value, oracle::wilcoxon_lower_bruteforce(d));
  EXPECT_THROW(wilcoxon_signed_rank_lower(std::vector<double>{0.0, 0.0}), ContractError);
}

TEST(Wilcoxon, ExactMatchesBruteForceEnumeration) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(-0.3, 1.0);
  std::uniform_int_distribution<int> len(3, 14);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> d(static_cast<std::size_t>(len(rng)));
    for (auto& v : d) v = std::round(n(rng) * 4.0) / 4.0;  // coarse grid creates ties and zeros
    bool any = false;
    for (double v : d) any = any || v != 0.0;
    if (!any) continue;
    const auto r = wilcoxon_signed_rank_lower(d, WilcoxonMethod::exact);
    EXPECT_NEAR(r.p_value, oracle::wilcoxon_lower_bruteforce(d), 1e-12) << "trial " << trial;
  }
}

TEST(Wilcoxon, NormalApproximationCloseToExactAtTwenty) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.2, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(20);
    for (auto& v : d) v = n(rng);
    const double exact = wilcoxon_signed_rank_lower(d, WilcoxonMethod::exact).p_value;
    const double approx = wilcoxon_signed_rank_lower(d, WilcoxonMethod::normal).p_value;
    EXPECT_NEAR(approx, exact, 0.02) << "trial " << trial;
  }
  std::vector<double> d(25, -1.0);
  EXPECT_EQ(wilcoxon_signed_rank_lower(d).method, WilcoxonMethod::normal);
}

TEST(SignTest, HandValues) {
  EXPECT_NEAR(sign_test(std::vector<double>(10, 1.0)).p_value, std::ldexp(1.0, -10), 1e-15);
  std::vector<double> half{1, 1, 1, 1, 1, -1, -1, -1, -1, -1};
  EXPECT_NEAR(sign_test(half).p_value, 0.623046875, 1e-12);
  EXPECT_DOUBLE_EQ(sign_test(std::vector<double>{0.3}).p_value, 0.5);
  const auto zero = sign_test(std::vector<double>{0.0, 0.0});
  EXPECT_EQ(zero.p_value, 1.0);
  EXPECT_FALSE(zero.warning.empty());
}

TEST(SignTest, MatchesExactBinomialAndIsMonotone) {
  for (unsigned n = 1; n <= 30; ++n) {
    double prev = 2.0;
    for (unsigned k = 0; k <= n; ++k) {
      const double p = binomial_half_upper_tail(n, k);
      EXPECT_NEAR(p, oracle::binomial_upper_exact(n, k), 1e-12);
      EXPECT_LT(p, prev);
      prev = p;
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics and aggregation

TEST(Rmse, HandValuesAndSymmetry) {
  const std::vector<double> zero{0, 0}, t{3, 4};
  EXPECT_NEAR(rmse(zero, t), 3.5355339059327378, 1e-12);
  EXPECT_NEAR(zero_control(t), 3.5355339059327378, 1e-12);
  EXPECT_EQ(rmse(t, t), 0.0);
  const std::vector<double> a{1, 5, -2}, b{0, 2, 2};
  EXPECT_DOUBLE_EQ(rmse(a, b), rmse(b, a));
  EXPECT_THROW(rmse(a, t), DimensionError);
}

TEST(Aggregate, StatesPartitionNational) {
  SeriesMap county{{"06037", {1, 2}}, {"06075", {3, 4}}, {"36061", {10, 20}}};
  const auto states = aggregate_state(county);
  ASSERT_EQ(states.size(), 2u);
  EXPECT_EQ(states.at("06"), (std::vector<double>{4, 6}));
  EXPECT_EQ(states.at("36"), county.at("36061"));
  EXPECT_EQ(national_series(states), (std::vector<double>{14, 26}));
  SeriesMap bad{{"6037", {1}}};
  EXPECT_THROW(aggregate_state(bad), DataError);
}

TEST(Aggregate, ForecastsUseQuantileMean) {
  const auto f = flat_forecast("06037", 3, 1.0);
  const auto m = quantile_mean(f);
  EXPECT_NEAR(m[0], 1.0 + 2.0, 1e-12);  // mean of 0.5*k over k = 0..8 is 2
  const auto s = aggregate_state(std::vector<QuantileForecast>{f, flat_forecast("06075", 3, 0.0)});
  EXPECT_NEAR(s.at("06")[2], (3.0 + 2.0) + (2.0 + 2.0), 1e-12);
}

TEST(EvalPinball, IdentitiesAndOrderInvariance) {
  const FeatureStats deaths{2.0, 4.0, false};
  auto f = flat_forecast("01001", 1, 0.0);
  for (auto& v : f.values.data) v = 5.0;
  SeriesMap truth{{"01001", {5.0}}, {"01003", {9.0}}};
  EXPECT_EQ(eval_pinball({f}, truth, deaths).mean, 0.0);
  // Truth 0 and predictions 1 on the standardized scale reduce to the hand example 0.5.
  auto g = f;
  g.county_id = "01003";
  for (auto& v : g.values.data) v = detail::invert(deaths, 1.0);
  truth["01003"] = {detail::invert(deaths, 0.0)};
  EXPECT_NEAR(eval_pinball({g}, truth, deaths).mean, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(eval_pinball({f, g}, truth, deaths).mean, eval_pinball({g, f}, truth, deaths).mean);
  SeriesMap short_truth{{"01001", {}}};
  EXPECT_THROW(eval_pinball({f}, short_truth, deaths), DataError);
}

TEST(Coverage, CountsTruthAtOrBelowSortedQuantiles) {
  auto f = flat_forecast("01001", 2, 0.0);  // day 0: 0, 0.5, ..., 4; day 1: 1, 1.5, ..., 5
  std::reverse(f.values.data.begin(), f.values.data.begin() + kNumQuantiles);  // unsorted day 0
  const SeriesMap truth{{"01001", {1.0, 1.0}}};
  const auto cov = empirical_coverage({f}, truth);
  EXPECT_DOUBLE_EQ(cov[0], 0.5);  // q10 is 0 on day 0 (truth above) and 1 on day 1 (truth equal)
  EXPECT_DOUBLE_EQ(cov[2], 1.0);
  EXPECT_DOUBLE_EQ(empirical_coverage({f}, truth, false)[0], 1.0);  // unsorted day 0 has 4 in the q10 slot
}

TEST(Compare, FiltersByDeathsAndTestsDirection) {
  std::map<std::string, double> a, b, deaths;
  for (int i = 0; i < 8; ++i) {
    const std::string id = "01" + std::to_string(100 + i);
    a[id] = 0.1;
    b[id] = 0.2 + 0.01 * i;
    deaths[id] = i < 6 ? 80.0 : 50.0;  // exactly 50 does not qualify
  }
  const auto r = compare_models(a, b, deaths);
  EXPECT_EQ(r.counties.size(), 6u);
  for (double d : r.deltas) EXPECT_LT(d, 0.0);
  EXPECT_DOUBLE_EQ(r.wilcoxon.p_value, 1.0 / 64.0);
  std::size_t binned = 0;
  for (auto c : r.delta_histogram.counts) binned += c;
  EXPECT_EQ(binned, 6u);
  EXPECT_THROW(compare_models(a, b, deaths, 1000.0), DataError);
}

// ---------------------------------------------------------------------------
// Checkpoint-driven evaluation

class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto cfg = fixtures::small_synth(12, 60, 5);
    cfg.dummy_feature = true;
    rp_ = new fixtures::ReadyPanel(fixtures::ready_synth(cfg));
    split_ = new SampleSplit(split_train_val(rp_->panel));
    ModelConfig c;
    c.hidden_units = 6;
    c.epochs = 2;
    c.batch_size = 32;
    c.n_ts_features = rp_->panel.n_ts();
    c.n_cat_features = rp_->panel.n_cat();
    ck_ = new Checkpoint(make_checkpoint(rp_->panel, *split_, c, train(split_->train, split_->val, c, ModelKind::condlstm_q, 3).params));
  }
  static void TearDownTestSuite() {
    delete ck_;
    delete split_;
    delete rp_;
  }

  static fixtures::ReadyPanel* rp_;
  static SampleSplit* split_;
  static Checkpoint* ck_;
};

fixtures::ReadyPanel* TrainedModel::rp_ = nullptr;
SampleSplit* TrainedModel::split_ = nullptr;
Checkpoint* TrainedModel::ck_ = nullptr;

TEST_F(TrainedModel, PredictShapeAndDeterminism) {
  const Date onset = add_days(rp_->panel.dates.back(), 1);
  const auto a = predict(*ck_, rp_->panel, onset);
  ASSERT_EQ(a.size(), 12u);
  for (const auto& f : a) EXPECT_EQ(f.values.shape, (ad::Shape{14, kNumQuantiles}));
  const auto b = predict(*ck_, rp_->panel, onset);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values, b[i].values);
  // Raw and standardized copies of the same panel give the same forecast.
  const auto raw = predict(*ck_, destandardize(rp_->panel), onset);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].values.data.size(); ++k)
      EXPECT_NEAR(raw[i].values.data[k], a[i].values.data[k], 1e-9);
  EXPECT_THROW(predict(*ck_, rp_->panel, rp_->panel.dates[3]), DataError);
  EXPECT_THROW(predict(*ck_, rp_->panel, add_days(onset, 1)), DataError);
}

TEST_F(TrainedModel, ClampAndSortOnlyAffectReporting) {
  const Date onset = rp_->panel.dates[45];
  PredictOptions opt;
  opt.clamp_zero = true;
  opt.sort_quantiles = true;
  const auto f = predict(*ck_, rp_->panel, onset, opt);
  for (const auto& x : f) {
    for (double v : x.values.data) EXPECT_GE(v, 0.0);
    for (std::size_t d = 0; d < 14; ++d)
      EXPECT_TRUE(std::is_sorted(x.values.data.begin() + static_cast<std::ptrdiff_t>(d * kNumQuantiles),
                                 x.values.data.begin() + static_cast<std::ptrdiff_t>((d + 1) * kNumQuantiles)));
  }
}

TEST_F(TrainedModel, ForecastCsvRoundTrip) {
  const auto f = predict(*ck_, rp_->panel, rp_->panel.dates[40]);
  fixtures::TempDir dir("csv");
  write_forecast_csv(dir.file("f.csv"), f);
  const auto back = read_forecast_csv(dir.file("f.csv"));
  ASSERT_EQ(back.size(), f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(back[i].county_id, f[i].county_id);
    EXPECT_EQ(back[i].onset_date, f[i].onset_date);
    EXPECT_EQ(back[i].values, f[i].values);
  }
  const auto text = fixtures::slurp(dir.file("f.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "fips,onset_date,day_index,q10,q20,q30,q40,q50,q60,q70,q80,q90");
}

TEST_F(TrainedModel, EvaluateReportsModelAndControl) {
  const std::size_t onset = 39;
  const auto f = predict(*ck_, rp_->panel, rp_->panel.dates[onset]);
  const auto truth = truth_at(rp_->panel, onset, 14);
  const auto r = evaluate(f, truth, deaths_stats(*ck_), "abc");
  EXPECT_EQ(r.state_rmse.size(), 2u);  // 12 counties at 10 per state
  EXPECT_GT(r.state_wise_control_rmse, 0.0);
  EXPECT_GT(r.national_control_rmse, 0.0);
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("national_rmse"));
  EXPECT_TRUE(j.contains("state_wise_control_rmse"));
}

TEST_F(TrainedModel, ConstantFeatureHasZeroImportance) {
  auto val = split_->val;
  for (auto& s : val) s.categorical[1] = 0.25;
  const auto row = permutation_importance(*ck_, val, ck_->cat_feature_names[1], FeatureKind::categorical, 10, 1);
  EXPECT_EQ(row.shuffled_losses.size(), 10u);
  EXPECT_EQ(row.mean_delta, 0.0);
  EXPECT_EQ(row.sign.p_value, 1.0);
}

TEST_F(TrainedModel, IgnoredDummyFeatureHasZeroImportance) {
  Checkpoint ck = *ck_;
  const auto dummy = *rp_->panel.find_cat("dummy");
  auto& w = ck.params.at("cond_W");
  for (std::size_t j = 0; j < ck.config.hidden_units; ++j) w.data[dummy * ck.config.hidden_units + j] = 0.0;
  const auto row = permutation_importance(ck, split_->val, "dummy", FeatureKind::categorical, 10, 4);
  EXPECT_LE(std::abs(row.mean_delta), 3.0 * row.delta_standard_error);
}

TEST_F(TrainedModel, ImportanceIsSeededAndNamesUnknownFeatures) {
  const auto a = permutation_importance(*ck_, split_->val, kDeathsFeature, FeatureKind::timeseries, 4, 9);
  const auto b = permutation_importance(*ck_, split_->val, kDeathsFeature, FeatureKind::timeseries, 4, 9);
  EXPECT_EQ(a.shuffled_losses, b.shuffled_losses);
  try {
    permutation_importance(*ck_, split_->val, "nope", FeatureKind::categorical, 1, 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cat_00"), std::string::npos);
  }
  const auto rep = importance_all(*ck_, split_->val, 2, 1, "val");
  EXPECT_EQ(rep.rows.size(), ck_->cat_feature_names.size() + ck_->ts_feature_names.size());
  const auto ranked = rep.ranked(FeatureKind::categorical);
  for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_GE(ranked[i - 1].mean_delta, ranked[i].mean_delta);
}

TEST_F(TrainedModel, SensitivityCurvesAndErrors) {
  const Date onset = rp_->panel.dates[45];
  const auto r = sensitivity(*ck_, rp_->panel, onset, "cat_00");
  EXPECT_EQ(r.baseline.size(), 14u);
  EXPECT_EQ(r.plus.size(), 14u);
  EXPECT_EQ(r.minus.size(), 14u);
  const auto zero = sensitivity(*ck_, rp_->panel, onset, "cat_00", 0.0);
  EXPECT_EQ(zero.plus, zero.baseline);
  EXPECT_EQ(zero.minus, zero.baseline);
  EXPECT_THROW(sensitivity(*ck_, rp_->panel, onset, kDeathsFeature), DataError);
  EXPECT_THROW(sensitivity(*ck_, rp_->panel, onset, "missing"), DataError);
}

TEST_F(TrainedModel, PerCountyLossCoversEveryCounty) {
  const auto losses = per_county_loss(split_->val, ck_->params, ck_->config);
  EXPECT_EQ(losses.size(), 12u);
  double mean = 0.0;
  for (const auto& [c, l] : losses) mean += l;
  EXPECT_NEAR(mean / 12.0, mean_loss(split_->val, ck_->params, ck_->config), 1e-12);
}

// ---------------------------------------------------------------------------
// Fan chart

TEST(FanChart, WellFormedDeterministicAndOrdered) {
  auto f = flat_forecast("06037", 14, 2.0);
  FanChartOptions opt;
  opt.truth = std::vector<double>(14, 3.0);
  const auto svg = fan_chart_svg(f, opt);
  EXPECT_EQ(svg, fan_chart_svg(f, opt));
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  EXPECT_NO_THROW(boost::property_tree::read_xml(in, tree));
  std::size_t polylines = 0;
  for (const auto& [tag, node] : tree.get_child("svg"))
    if (tag == "polyline") ++polylines;
  EXPECT_EQ(polylines, kNumQuantiles + 1);
  // Larger values are drawn higher, i.e. at smaller y: q90 stays above q10.
  auto first_y = [&](const std::string& cls) {
    const auto at = svg.find("class=\"" + cls + "\"");
    const auto pts = svg.find("points=\"", at) + 8;
    const auto comma = svg.find(',', pts);
    return std::stod(svg.substr(comma + 1));
  };
  EXPECT_LE(first_y("q90"), first_y("q10"));
}

TEST(FanChart, UnknownCountyListsCandidates) {
  fixtures::TempDir dir("chart");
  write_forecast_csv(dir.file("f.csv"), {flat_forecast("06037", 3, 0.0), flat_forecast("06075", 3, 0.0)});
  emit_fan_chart(dir.file("f.csv"), "06075", dir.file("c.svg"));
  EXPECT_NE(fixtures::slurp(dir.file("c.svg")).find("<svg"), std::string::npos);
  try {
    emit_fan_chart(dir.file("f.csv"), "99999", dir.file("d.svg"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("06037, 06075"), std::string::npos);
  }
}
