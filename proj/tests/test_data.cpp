// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "condlstmq/interpolate.hpp"
#include "condlstmq/loaders.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/seasonality.hpp"
#include "condlstmq/synth.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace condlstmq;

namespace {

using fixtures::TempDir;

HoleySeries with_holes(const std::vector<double>& v, const std::vector<std::size_t>& holes) {
  HoleySeries s(v.begin(), v.end());
  for (auto i : holes) s[i].reset();
  return s;
}

CountyPanel tiny_panel(std::size_t n_counties, std::size_t n_dates) {
  CountyPanel p;
  for (std::size_t c = 0; c < n_counties; ++c) {
    char id[8];
    std::snprintf(id, sizeof id, "01%03zu", 2 * c + 1);
    p.county_ids.push_back(id);
    p.state_of[id] = "01";
  }
  for (std::size_t d = 0; d < n_dates; ++d) p.dates.push_back(add_days(parse_date("2020-03-01"), static_cast<long>(d)));
  p.ts_feature_names = {"new_cases", kDeathsFeature};
  p.cat_feature_names = {"population"};
  for (std::size_t c = 0; c < n_counties; ++c)
    for (std::size_t d = 0; d < n_dates; ++d) {
      p.ts.push_back(static_cast<double>(c + d));
      p.ts.push_back(static_cast<double>(c * 100 + d));
    }
  for (std::size_t c = 0; c < n_counties; ++c) p.cat.push_back(1000.0 + static_cast<double>(c));
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// NYT counts

TEST(Nyt, CumulativeToDaily) {
  EXPECT_EQ(cumulative_to_daily({0, 0, 2, 5}), (std::vector<double>{0, 0, 2, 3}));
  EXPECT_EQ(cumulative_to_daily({5, 3}), (std::vector<double>{5, -2}));
}

TEST(Nyt, LoadsDailyCountsAndDropsUnknownFips) {
  TempDir dir("data");
  const auto path = dir.write("nyt.csv",
                              "date,county,state,fips,cases,deaths\n"
                              "2020-03-01,Autauga,Alabama,01001,1,0\n"
                              "2020-03-02,Autauga,Alabama,01001,4,1\n"
                              "2020-03-03,Autauga,Alabama,01001,4,3\n"
                              "2020-03-02,Unknown,Alabama,,7,2\n"
                              "2020-03-02,Baldwin,Alabama,1003,2,0\n");
  const auto nyt = load_nyt(path);
  EXPECT_EQ(nyt.dropped_rows, 1u);
  ASSERT_EQ(nyt.daily.count("01001"), 1u);
  ASSERT_EQ(nyt.daily.count("01003"), 1u);
  const auto& a = nyt.daily.at("01001");
  EXPECT_EQ(a.at(parse_date("2020-03-01")).deaths, 0.0);
  EXPECT_EQ(a.at(parse_date("2020-03-02")).deaths, 1.0);
  EXPECT_EQ(a.at(parse_date("2020-03-03")).deaths, 2.0);
  EXPECT_EQ(a.at(parse_date("2020-03-02")).cases, 3.0);
}

TEST(Nyt, EmptyFileIsAnError) {
  TempDir dir("data");
  const auto path = dir.write("nyt.csv", "date,county,state,fips,cases,deaths\n");
  try {
    load_nyt(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
  }
}

TEST(Nyt, MalformedRowReportsLine) {
  TempDir dir("data");
  const auto path = dir.write("nyt.csv",
                              "date,county,state,fips,cases,deaths\n"
                              "2020-03-01,Autauga,Alabama,01001,1,0\n"
                              "2020-13-45,Autauga,Alabama,01001,1,0\n");
  try {
    load_nyt(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// Mobility

TEST(Mobility, StateFillInAndHoleCount) {
  TempDir dir("data");
  std::string text = "date,country_code,admin_level,admin1,admin2,fips,samples,m50,m50_index\n";
  const std::vector<std::string> days = {"2020-03-01", "2020-03-02", "2020-03-03", "2020-03-04"};
  for (std::size_t d = 0; d < days.size(); ++d) {
    text += days[d] + ",US,1,Alabama,,01,100," + std::to_string(5 + d) + "," + std::to_string(50 + d) + "\n";
    if (d != 2) text += days[d] + ",US,2,Alabama,Autauga,01001,10," + std::to_string(1 + d) + "," + std::to_string(10 + d) + "\n";
  }
  const auto data = load_mobility(dir.write("mob.csv", text));
  std::vector<Date> dates;
  for (const auto& d : days) dates.push_back(parse_date(d));
  const auto m = assemble_mobility(data, {"01001", "01003"}, dates);
  EXPECT_EQ(m.state_filled, (std::vector<std::string>{"01003"}));
  EXPECT_EQ(m.holes, 2u);  // one missing day in each of the two county series
  EXPECT_EQ(m.m50.at("01003"), (std::vector<double>{5, 6, 7, 8}));
  EXPECT_EQ(m.m50.at("01001")[0], 1.0);
  EXPECT_EQ(m.m50.at("01001")[3], 4.0);
}

TEST(Mobility, UncoveredCountiesAreListed) {
  TempDir dir("data");
  const auto data = load_mobility(dir.write("mob.csv",
                                            "date,country_code,admin_level,admin1,admin2,fips,samples,m50,m50_index\n"
                                            "2020-03-01,US,1,Alabama,,01,100,5,50\n"));
  try {
    assemble_mobility(data, {"01001", "02013", "04001"}, {parse_date("2020-03-01")});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("02013"), std::string::npos);
    EXPECT_NE(msg.find("04001"), std::string::npos);
    EXPECT_EQ(msg.find("01001"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Static features

TEST(Categorical, PolicyEncodedAsDaysSincePanelStart) {
  TempDir dir("data");
  PolicySpec spec;
  spec.path = dir.write("policy.csv",
                        "state_id,county,fips_code,policy_level,date,policy_type,start_stop\n"
                        "AL,,,state,2020-03-15,Shelter in Place,start\n"
                        "AL,Autauga,01001,county,2020-03-10,Shelter in Place,start\n"
                        "AL,Autauga,01001,county,2020-03-05,Shelter in Place,stop\n");
  spec.policy_types = {"Shelter in Place", "Emergency Declaration"};
  const auto [names, values] = load_policy(spec, {"01001", "01003"}, parse_date("2020-03-01"));
  EXPECT_EQ(names, (std::vector<std::string>{"policy_shelter_in_place", "policy_emergency_declaration"}));
  EXPECT_EQ(values, (std::vector<double>{9, 0, 14, 0}));
}

TEST(Categorical, MissingCellTakesStateMedianAndIsFlagged) {
  TempDir dir("data");
  KeyedTableSpec demo{dir.write("demo.csv", "fips,population\n01001,10\n01003,20\n01005,40\n02013,1000\n"), "fips",
                      {}, "", true};
  KeyedTableSpec gdp{dir.write("gdp.csv", "fips,gdp\n01001,1\n01003,3\n02013,100\n"), "fips", {}, "", false};
  const std::vector<std::string> counties{"01001", "01003", "01005", "02013"};
  const auto cat = load_categorical({demo, gdp}, std::nullopt, counties, parse_date("2020-03-01"));
  ASSERT_EQ(cat.feature_names.size(), 2u);
  EXPECT_EQ(cat.values.size(), counties.size() * 2);
  EXPECT_EQ(cat.values[2 * 2 + 1], 2.0);  // median of the two observed Alabama values
  EXPECT_EQ(cat.imputed, (std::vector<std::string>{"01005:" + cat.feature_names[1]}));
}

TEST(Categorical, CountyMissingFromDemographicsIsAnError) {
  TempDir dir("data");
  KeyedTableSpec demo{dir.write("demo.csv", "fips,population\n01001,10\n"), "fips", {}, "", true};
  try {
    load_categorical({demo}, std::nullopt, {"01001", "01003"}, parse_date("2020-03-01"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("01003"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Interpolation

TEST(SameDay, TieGoesToThePast) {
  std::vector<double> v(20, 0.0);
  v[2] = 5.0;
  v[16] = 9.0;
  auto s = with_holes(v, {9});
  const auto out = same_day_interpolate(s);
  EXPECT_EQ(out[9], 5.0);
}

TEST(SameDay, LeadingHoleRepeatsFirstObservation) {
  HoleySeries s(5);
  s[3] = 7.0;
  s[4] = 8.0;
  const auto out = same_day_interpolate(s);
  EXPECT_EQ(out[0], 7.0);
  EXPECT_EQ(out[1], 7.0);
}

TEST(SameDay, EmptySeriesIsAnError) {
  EXPECT_THROW(same_day_interpolate(HoleySeries(10)), DataError);
}

TEST(SameDay, ReconstructsWeeklyPeriodicSeries) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, 7> pattern{};
    for (auto& x : pattern) x = u(rng);
    const std::size_t n = 30 + static_cast<std::size_t>(trial);
    const auto mask = oracle::weekday_covering_mask(n, 0.6, rng);
    HoleySeries s(n);
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) s[i] = pattern[i % 7];
    const auto out = same_day_interpolate(s);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(out[i], pattern[i % 7]) << "trial " << trial << " day " << i;
  }
}

TEST(Spline, MidpointMatchesDenseOracle) {
  const NaturalCubicSpline spline({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
  const double want = oracle::natural_spline_at({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0}, 0.5);
  EXPECT_NEAR(want, 0.6875, 1e-12);
  EXPECT_NEAR(spline(0.5), want, 1e-9);
  // Same geometry on the integer day grid: observations at days 0, 2, 4.
  HoleySeries s(5);
  s[0] = 0.0;
  s[2] = 1.0;
  s[4] = 0.0;
  EXPECT_NEAR(spline_interpolate(s)[1], 0.6875, 1e-9);
}

TEST(Spline, RandomKnotsMatchDenseOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> gap(0.5, 2.0), val(-3.0, 3.0);
  std::vector<double> x{0.0}, y{val(rng)};
  for (int i = 0; i < 7; ++i) {
    x.push_back(x.back() + gap(rng));
    y.push_back(val(rng));
  }
  const NaturalCubicSpline spline(x, y);
  for (double t = 0.0; t <= x.back(); t += 0.37) EXPECT_NEAR(spline(t), oracle::natural_spline_at(x, y, t), 1e-9);
}

TEST(Spline, CollinearPointsGiveLinearFill) {
  HoleySeries s(10);
  for (std::size_t i : {0u, 3u, 4u, 9u}) s[i] = 2.0 + 0.5 * static_cast<double>(i);
  const auto out = spline_interpolate(s);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(out[i], 2.0 + 0.5 * static_cast<double>(i), 1e-12);
}

TEST(Spline, EdgesRepeatAndTooFewPointsThrow) {
  HoleySeries s(6);
  s[2] = 1.0;
  s[3] = 4.0;
  const auto out = spline_interpolate(s);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[5], 4.0);
  HoleySeries one(4);
  one[1] = 1.0;
  EXPECT_THROW(spline_interpolate(one), DataError);
}

TEST(FillHoles, ChoosesMethodByLongestRun) {
  std::vector<double> v(40, 1.0);
  std::vector<std::size_t> short_run{3, 4}, long_run;
  for (std::size_t i = 10; i < 25; ++i) long_run.push_back(i);
  EXPECT_EQ(fill_holes(with_holes(v, short_run), 14).method, FillMethod::same_day);
  const auto r = fill_holes(with_holes(v, long_run), 14);
  EXPECT_EQ(r.method, FillMethod::spline);
  EXPECT_EQ(r.filled, 15u);
  EXPECT_EQ(fill_holes(with_holes(v, {}), 14).method, FillMethod::none);
}

// ---------------------------------------------------------------------------
// Seasonality

namespace {

std::vector<WeeklyObservation> weekly_rows(const std::string& state, int years, double (*curve)(int)) {
  std::vector<WeeklyObservation> rows;
  for (int y = 0; y < years; ++y)
    for (int w = 1; w <= 52; ++w) rows.push_back({state, 2015 + y, w, curve(w)});
  return rows;
}

double constant_curve(int) { return 3.0; }
double cosine_curve(int w) { return 1.0 + 0.5 * std::cos(2.0 * std::acos(-1.0) * w / 52.0); }

}  // namespace

TEST(Seasonality, ConstantSeriesGivesUnitIndex) {
  const auto idx = extract_seasonality(weekly_rows("01", 4, constant_curve));
  for (double v : idx.for_state("01")) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Seasonality, RecoversGeneratingCurve) {
  const auto idx = extract_seasonality(weekly_rows("01", 5, cosine_curve));
  const auto& s = idx.for_state("01");
  double mean = 0.0;
  for (int w = 1; w <= 52; ++w) {
    EXPECT_NEAR(s[static_cast<std::size_t>(w - 1)], cosine_curve(w), 0.02);
    mean += s[static_cast<std::size_t>(w - 1)];
  }
  EXPECT_NEAR(mean / 52.0, 1.0, 1e-9);
}

TEST(Seasonality, ShortStateFallsBackToNational) {
  auto rows = weekly_rows("01", 4, cosine_curve);
  const auto short_rows = weekly_rows("02", 1, constant_curve);
  rows.insert(rows.end(), short_rows.begin(), short_rows.end());
  const auto idx = extract_seasonality(rows);
  EXPECT_EQ(idx.by_state.count("02"), 0u);
  ASSERT_EQ(idx.warnings.size(), 1u);
  EXPECT_EQ(idx.for_state("02"), idx.national);
}

// ---------------------------------------------------------------------------
// Standardization and windows

TEST(Standardize, PopulationStdHandValues) {
  CountyPanel p = tiny_panel(3, 1);
  p.cat = {1.0, 2.0, 3.0};
  const auto s = standardize(p, 1);
  EXPECT_NEAR(s.cat[0], -1.224744871391589, 1e-12);
  EXPECT_NEAR(s.cat[1], 0.0, 1e-12);
  EXPECT_NEAR(s.cat[2], 1.224744871391589, 1e-12);
}

TEST(Standardize, ConstantFeatureIsZeroAndFlagged) {
  CountyPanel p = tiny_panel(3, 4);
  p.cat = {5.0, 5.0, 5.0};
  const auto s = standardize(p, 4);
  EXPECT_TRUE(s.stats->cat[0].zero_variance);
  for (double v : s.cat) EXPECT_EQ(v, 0.0);
}

TEST(Standardize, RoundTripAndTrainOnlyStatistics) {
  const CountyPanel p = tiny_panel(3, 10);
  const auto s = standardize(p, 6);
  EXPECT_EQ(s.stats->train_dates, 6u);
  // Deaths mean over the first 6 dates of counties 0, 1, 2.
  EXPECT_NEAR(s.stats->ts[1].mean, 102.5, 1e-12);
  const auto back = destandardize(s);
  for (std::size_t i = 0; i < p.ts.size(); ++i) EXPECT_NEAR(back.ts[i], p.ts[i], 1e-12);
  for (std::size_t i = 0; i < p.cat.size(); ++i) EXPECT_NEAR(back.cat[i], p.cat[i], 1e-12);
  EXPECT_THROW(standardize(s, 6), ContractError);
}

TEST(Windows, CountsPerCounty) {
  EXPECT_EQ(make_windows(tiny_panel(2, 21)).size(), 2u);
  EXPECT_EQ(make_windows(tiny_panel(1, 157)).size(), 137u);
  EXPECT_EQ(window_count(157, 7, 14), 137u);
  EXPECT_THROW(make_windows(tiny_panel(1, 20)), DataError);
}

TEST(Windows, ContentsAlignWithPanel) {
  const CountyPanel p = tiny_panel(2, 25);
  const auto w = make_windows(p);
  ASSERT_EQ(w.size(), 2u * 5);
  const auto& s = w[5 + 4];  // county 1, last onset 11
  EXPECT_EQ(s.county_id, p.county_ids[1]);
  EXPECT_EQ(s.onset, 11u);
  ASSERT_EQ(s.history.size(), 7u * 2);
  EXPECT_EQ(s.history[0], p.ts_at(1, 4, 0));
  EXPECT_EQ(s.history[13], p.ts_at(1, 10, 1));
  ASSERT_EQ(s.target.size(), 14u);
  EXPECT_EQ(s.target.front(), p.ts_at(1, 11, 1));
  EXPECT_EQ(s.target.back(), p.ts_at(1, 25 - 1, 1));
  EXPECT_EQ(s.categorical, (std::vector<double>{1001.0}));
}

TEST(Panel, JsonRoundTrip) {
  auto p = standardize(tiny_panel(2, 22), 10);
  const auto q = panel_from_json(panel_to_json(p));
  EXPECT_EQ(q.county_ids, p.county_ids);
  EXPECT_EQ(q.ts, p.ts);
  EXPECT_EQ(q.cat, p.cat);
  ASSERT_TRUE(q.stats);
  EXPECT_EQ(*q.stats, *p.stats);
}

// ---------------------------------------------------------------------------
// Synthetic generator

TEST(Synth, SameSeedSamePanel) {
  SynthConfig c;
  c.n_counties = 6;
  c.n_dates = 40;
  const auto a = synth_generate(c), b = synth_generate(c);
  EXPECT_EQ(panel_to_json(a.panel).dump(), panel_to_json(b.panel).dump());
  c.seed = 8;
  EXPECT_NE(panel_to_json(synth_generate(c).panel).dump(), panel_to_json(a.panel).dump());
}

TEST(Synth, ZeroSeverityCountyHasNoDeaths) {
  SynthConfig c;
  c.n_counties = 4;
  c.n_dates = 60;
  auto s = synth_structure(c);
  s.severity[2] = 0.0;
  synth_refresh_lambda(s);
  const auto p = synth_sample(s, 5);
  for (std::size_t d = 0; d < p.n_dates(); ++d) EXPECT_EQ(p.ts_at(2, d, p.deaths_feature()), 0.0);
}

TEST(Synth, HoleRateIsRespected) {
  SynthConfig c;
  c.n_counties = 20;
  c.n_dates = 150;
  c.hole_rate = 0.3;
  const auto p = synth_generate(c).panel;
  std::size_t holes = 0, total = 0;
  const auto m = *p.find_ts("mobility_m50");
  for (std::size_t i = 0; i < p.n_counties(); ++i)
    for (std::size_t d = 0; d < p.n_dates(); ++d, ++total) holes += std::isnan(p.ts_at(i, d, m)) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(holes) / static_cast<double>(total), 0.3, 0.05);
}

TEST(Synth, DeathQuantilesMatchPoissonOverRedraws) {
  SynthConfig c;
  c.n_counties = 2;
  c.n_dates = 40;
  c.hole_rate = 0.0;
  const auto s = synth_structure(c);
  const std::size_t county = 1, day = 25;
  const double lambda = s.lambda_at(county, day);
  ASSERT_GT(lambda, 1.0);
  const int draws = 10000;
  std::vector<long> values;
  values.reserve(draws);
  for (int r = 0; r < draws; ++r) {
    const auto p = synth_sample(s, 1000 + static_cast<std::uint64_t>(r));
    values.push_back(static_cast<long>(p.ts_at(county, day, p.deaths_feature())));
  }
  std::sort(values.begin(), values.end());
  for (double q : quantile_grid()) {
    // Smallest k whose empirical CDF reaches q.
    const auto idx = static_cast<std::size_t>(std::ceil(q * draws)) - 1;
    EXPECT_EQ(values[idx], poisson_quantile(lambda, q)) << "q=" << q << " lambda=" << lambda;
  }
}

TEST(Synth, PoissonQuantileHandValues) {
  // Poisson(1): CDF(0) = 0.3679, CDF(1) = 0.7358, CDF(2) = 0.9197.
  EXPECT_EQ(poisson_quantile(1.0, 0.3), 0);
  EXPECT_EQ(poisson_quantile(1.0, 0.5), 1);
  EXPECT_EQ(poisson_quantile(1.0, 0.9), 2);
  EXPECT_EQ(poisson_quantile(0.0, 0.9), 0);
}

TEST(Synth, CausalFeaturesDriveSeverity) {
  SynthConfig c;
  c.n_counties = 30;
  const auto s = synth_structure(c);
  for (std::size_t i = 0; i < c.n_counties; ++i) {
    double log_s = c.log_base_severity;
    for (std::size_t k = 0; k < c.causal_indices.size(); ++k)
      log_s += c.causal_betas[k] * s.latent[i * c.n_cat + c.causal_indices[k]];
    EXPECT_NEAR(std::log(s.severity[i]), log_s, 1e-12);
  }
}
