#include "cemco/engine.hpp"
#include "cemco/inference.hpp"
#include "cemco/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace cemco;

namespace {

// Regularized upper incomplete gamma Q(a, x) through the power series of P(a, x).
double chi_square_sf_series(double x, double df) {
  const double a = 0.5 * df, h = 0.5 * x;
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 1000; ++n) {
    term *= h / (a + n);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return 1.0 - std::exp(-h + a * std::log(h) - std::lgamma(a)) * sum;
}

DataSet blob(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  DataSet d;
  d.items.resize(n, 2);
  d.covariates.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    d.items.row(i) << nd(rng), nd(rng);
    d.covariates(i, 0) = nd(rng);
  }
  return d;
}

}  // namespace

TEST(ParamCount, PublishedFormula) {
  EXPECT_EQ(param_count(2, 5, 4), 122);
  EXPECT_EQ(param_count(2, 5, 0), 82);
  EXPECT_EQ(param_count(4, 2, 1, SplineSpec{1, 3}), 76);
}

TEST(ParamCount, ExactModeCountsScales) {
  // Published counts 2KM for the scales regardless; exact counts KM(1 + Pcov) or nothing.
  EXPECT_EQ(param_count(2, 5, 4, std::nullopt, 1, CountMode::exact), 122);
  EXPECT_EQ(param_count(2, 5, 4, std::nullopt, 0, CountMode::exact), 122 - 20);
  EXPECT_EQ(param_count(2, 5, 4, std::nullopt, 2, CountMode::exact), 122 + 10);
  ModelConfig c = scenario_config(1, 2);
  EXPECT_EQ(param_count(c, 5), 2 * (1 + 5 * 8 + 25));
}

TEST(Bic, Examples) {
  EXPECT_NEAR(bic(0.0, 3, 1) - std::log(3.0), 0.0, 1e-15);
  FitResult f;
  f.final_loglik = 0.0;
  EXPECT_NEAR(std::log(3.0) * 1 - 2 * 0.0, bic(f, 3, 1), 1e-15);
  EXPECT_NEAR(bic(-800.0, 129, 122), 122 * std::log(129.0) + 1600.0, 1e-9);
  EXPECT_NEAR(bic(-800.0, 129, 122), 2192.897, 1e-3);
  EXPECT_NEAR(bic(-800.0, 129, 244) - bic(-800.0, 129, 122), std::log(129.0) * 122, 1e-9);
  EXPECT_THROW(bic(0.0, 0, 1), Error);
}

TEST(ChiSquare, MatchesSeriesOracle) {
  EXPECT_NEAR(chi_square_sf(18.307, 10), 0.05, 1e-4);
  EXPECT_NEAR(chi_square_sf(18.307, 10), chi_square_sf_series(18.307, 10), 1e-12);
  for (double df : {1.0, 2.0, 5.0, 10.0, 32.0}) {
    for (double x : {0.1, 1.0, 4.0, 10.0, 30.0}) {
      EXPECT_NEAR(chi_square_sf(x, df), chi_square_sf_series(x, df), 1e-10) << df << " " << x;
    }
  }
  EXPECT_EQ(chi_square_sf(0.0, 10), 1.0);
  EXPECT_THROW(chi_square_sf(1.0, 0.0), Error);
}

TEST(TestDf, LinearAndSpline) {
  auto s1 = gen_scenario1(40, 1);
  EXPECT_EQ(test_df(s1.data, scenario_config(1, 2), 0, Target::centroid), 10);
  auto s2 = gen_scenario2(40, 1);
  EXPECT_EQ(test_df(s2.data, scenario_config(2, 4), 0, Target::covariance), 8);
  auto s3 = gen_scenario3(40, 1);
  EXPECT_EQ(test_df(s3.data, scenario_config(3, 4), 0, Target::centroid), 32);
  EXPECT_THROW(test_df(s2.data, scenario_config(3, 4), 0, Target::covariance), Error);
}

TEST(NullConfig, RemovesTestedEffectOnly) {
  auto c = scenario_config(2, 4);
  auto n = null_config(c, 0, Target::covariance);
  EXPECT_TRUE(n.covariance_covariates.empty());
  EXPECT_EQ(n.centroid_covariates, c.centroid_covariates);
  auto m = null_config(scenario_config(1, 2), 2, Target::centroid);
  EXPECT_EQ(m.centroid_covariates, (std::vector<int>{0, 1, 3, 4}));
}

TEST(EmbedNull, PreservesLikelihood) {
  auto s = gen_scenario1(60, 2);
  auto cfg = scenario_config(1, 2);
  cfg.restarts = 2;
  auto null_cfg = null_config(cfg, 0, Target::centroid);
  auto nf = fit(s.data, null_cfg);
  auto embedded = embed_null_params(s.data, cfg, 0, Target::centroid, nf.params);
  EXPECT_NEAR(log_likelihood(s.data, embedded, cfg), log_likelihood(s.data, nf.params, null_cfg), 1e-9);
  EXPECT_EQ(embedded.beta[0].row(0).norm(), 0.0);
}

TEST(Lrt, ZeroCovariateGivesZeroStatistic) {
  auto d = blob(60, 3);
  d.covariates.setZero();
  ModelConfig cfg;
  cfg.k = 1;
  cfg.centroid_covariates = {0};
  cfg.restarts = 2;
  auto r = lrt(d, cfg, 0, Target::centroid);
  EXPECT_NEAR(r.statistic_d, 0.0, 1e-9);
  EXPECT_NEAR(r.p_value, 1.0, 1e-6);
  EXPECT_EQ(r.df, 2);
}

TEST(Lrt, StatisticNonNegativeAndDetectsEffect) {
  auto s = gen_scenario1(120, 4);
  auto cfg = scenario_config(1, 2);
  cfg.restarts = 4;
  auto r = lrt(s.data, cfg, 0, Target::centroid);
  EXPECT_GE(r.statistic_d, 0.0);
  EXPECT_GE(r.alt_fit.final_loglik, r.null_fit.final_loglik);
  EXPECT_EQ(r.df, 10);
  EXPECT_GE(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
  EXPECT_NEAR(r.p_value, chi_square_sf(r.statistic_d, 10), 1e-15);
}

TEST(Lrt, InactiveCovariateThrows) {
  auto s = gen_scenario2(40, 5);
  ModelConfig cfg = scenario_config(2, 2);
  cfg.covariance_covariates.clear();
  EXPECT_THROW(lrt(s.data, cfg, 0, Target::covariance), Error);
}

TEST(Bootstrap, CountingFormulaAndDeterminism) {
  // A very strong effect beats every bootstrap replicate: p = 1 / (n_boot + 1).
  auto s = gen_scenario1(80, 6, std::vector<MatrixXd>{MatrixXd::Constant(5, 5, 2.0), MatrixXd::Constant(5, 5, -2.0)});
  auto cfg = scenario_config(1, 2);
  cfg.restarts = 2;
  auto a = bootstrap_test(s.data, cfg, 0, Target::centroid, 19, 11, 1);
  EXPECT_NEAR(a.p_value, 1.0 / 20.0, 1e-15);
  ASSERT_TRUE(a.bootstrap_samples.has_value());
  EXPECT_EQ(*a.bootstrap_samples, 19);
  EXPECT_EQ(a.bootstrap_statistics.size(), 19u);
  auto b = bootstrap_test(s.data, cfg, 0, Target::centroid, 19, 11, 1);
  EXPECT_EQ(a.p_value, b.p_value);
  EXPECT_EQ(a.bootstrap_statistics, b.bootstrap_statistics);
  EXPECT_THROW(bootstrap_test(s.data, cfg, 0, Target::centroid, 18, 11, 1), Error);
}

TEST(SimulateFromFit, DeterministicAndShaped) {
  auto s = gen_scenario2(40, 7);
  auto cfg = scenario_config(2, 4);
  auto p = init_random(s.data, cfg, 1);
  std::vector<int> la, lb;
  auto a = simulate_from_fit(s.data, cfg, p, 5, &la);
  auto b = simulate_from_fit(s.data, cfg, p, 5, &lb);
  EXPECT_EQ(a.items, b.items);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a.covariates, s.data.covariates);
  EXPECT_EQ(a.items.rows(), 40);
}

TEST(SelectK, SingleBlobChoosesOne) {
  auto d = blob(150, 8);
  ModelConfig cfg;
  cfg.restarts = 4;
  auto t = select_k(d, cfg, 1, 3);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.chosen_k, 1);
  for (const auto& row : t.rows) {
    if (row.usable) {
      EXPECT_GE(row.bic, t.rows[0].bic);
    }
  }
  EXPECT_THROW(select_k(d, cfg, 3, 2), Error);
  EXPECT_THROW(select_k(d, cfg, 1, 151), Error);
}

TEST(SelectK, ChoosesMinimumBic) {
  auto s = gen_scenario1(120, 9);
  auto cfg = scenario_config(1, 2);
  cfg.restarts = 3;
  auto t = select_k(s.data, cfg, 1, 3);
  double best = INFINITY;
  int arg = 0;
  for (const auto& row : t.rows) {
    EXPECT_EQ(row.param_count, param_count(row.k, 5, 5));
    if (row.usable && row.bic < best) {
      best = row.bic;
      arg = row.k;
    }
  }
  EXPECT_EQ(t.chosen_k, arg);
}
