#include "cemco/baselines.hpp"
#include "cemco/engine.hpp"
#include "cemco/simulation.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cemco;

namespace {

// Two spherical clusters centred `gap` apart on the first axis, plus covariate columns.
LabeledDataSet two_clusters(int n, double gap, std::uint64_t seed, int p = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  LabeledDataSet out;
  out.data.items.resize(n, 2);
  out.data.covariates.resize(n, p);
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    out.truth.labels.push_back(c);
    out.data.items.row(i) << nd(rng) + gap * c, nd(rng);
    for (int l = 0; l < p; ++l) out.data.covariates(i, l) = nd(rng);
  }
  return out;
}

}  // namespace

TEST(CemFit, EqualsEngineWithoutCovariates) {
  auto s = gen_scenario1(100, 1);
  auto cfg = scenario_config(1, 2);
  cfg.restarts = 3;
  cfg.seed = 5;
  auto a = cem_fit(s.data, 2, 3, 5);
  auto b = fit(s.data, cfg.without_covariates());
  EXPECT_EQ(a.assignment.labels, b.assignment.labels);
  EXPECT_EQ(a.final_loglik, b.final_loglik);
}

TEST(CemFit, SeparatedClusters) {
  auto s = two_clusters(200, 10.0, 2);
  EXPECT_EQ(adjusted_rand_index(cem_fit(s.data, 2, 3, 1).assignment, s.truth), 1.0);
  EXPECT_EQ(adjusted_rand_index(cem_dimension_fit(s.data, 2, 3, 1).assignment, s.truth), 1.0);
  EXPECT_EQ(adjusted_rand_index(cem_partial_fit(s.data, 2, 3, 1).assignment, s.truth), 1.0);
}

TEST(CemFit, DriftingCentroidsHurtPlainCem) {
  // Centroids (20,30) and (30,35), identity covariance, strong common age drift.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> age(20.0, 80.0);
  LabeledDataSet s;
  const int n = 200;
  s.data.items.resize(n, 2);
  s.data.covariates.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    const double a = age(rng);
    s.truth.labels.push_back(c);
    s.data.covariates(i, 0) = a;
    const double drift = 0.5 * (a - 50.0);
    s.data.items.row(i) << 20.0 + 10.0 * c + drift + nd(rng), 30.0 + 5.0 * c + drift + nd(rng);
  }
  ModelConfig cfg;
  cfg.k = 2;
  cfg.centroid_covariates = {0};
  cfg.restarts = 5;
  const double ari_cemco = adjusted_rand_index(fit(s.data, cfg).assignment, s.truth);
  const double ari_cem = adjusted_rand_index(cem_fit(s.data, 2, 5, 1).assignment, s.truth);
  EXPECT_GT(ari_cemco, 0.9);
  EXPECT_LT(ari_cem, ari_cemco - 0.3);
}

TEST(CemDimension, ReducesToCemWithoutInformativeCovariates) {
  auto s = two_clusters(120, 3.0, 4);
  auto base = cem_fit(s.data, 2, 3, 7);
  EXPECT_EQ(cem_dimension_fit(s.data, 2, 3, 7).assignment.labels, base.assignment.labels);
  DataSet constant = s.data;
  constant.covariates = MatrixXd::Constant(120, 2, 4.2);
  EXPECT_EQ(cem_dimension_fit(constant, 2, 3, 7).assignment.labels, base.assignment.labels);
}

TEST(CemPartial, NoCovariatesEqualsCem) {
  auto s = two_clusters(120, 3.0, 5);
  auto base = cem_fit(s.data, 2, 3, 7);
  auto part = cem_partial_fit(s.data, 2, 3, 7);
  EXPECT_EQ(part.assignment.labels, base.assignment.labels);
  EXPECT_EQ(part.final_loglik, base.final_loglik);
}

TEST(CemPartial, UncorrelatedCovariateRemovesNothing) {
  auto s = two_clusters(2000, 4.0, 6, 2);
  auto base = cem_fit(s.data, 2, 3, 7);
  auto part = cem_partial_fit(s.data, 2, 3, 7);
  EXPECT_GE(adjusted_rand_index(part.assignment, base.assignment), 0.9);
}

TEST(CemPartial, CommonEffectIsRemoved) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  const int n = 800;
  LabeledDataSet s;
  s.data.items.resize(n, 2);
  s.data.covariates.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    const double z = 3.0 * nd(rng);
    s.truth.labels.push_back(c);
    s.data.covariates(i, 0) = z;
    s.data.items.row(i) << 6.0 * c + 2.0 * z + nd(rng), 1.5 * z + nd(rng);
  }
  auto part = cem_partial_fit(s.data, 2, 5, 1);
  EXPECT_GE(adjusted_rand_index(part.assignment, s.truth), 0.97);
  EXPECT_TRUE(part.warnings.empty());
}

TEST(CemPartial, CollinearColumnsDropped) {
  auto s = two_clusters(100, 4.0, 9, 2);
  s.data.covariates.col(1) = 2.0 * s.data.covariates.col(0);
  int dropped = 0;
  const MatrixXd r = regression_residuals(s.data.items, s.data.covariates, &dropped);
  EXPECT_EQ(dropped, 1);
  EXPECT_LE(r.colwise().sum().cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((s.data.covariates.col(0).transpose() * r).cwiseAbs().maxCoeff(), 1e-8);
  auto part = cem_partial_fit(s.data, 2, 2, 1);
  ASSERT_FALSE(part.warnings.empty());
}

TEST(StandardizeColumns, ConstantColumnsBecomeZero) {
  MatrixXd z(4, 2);
  z << 1, 5, 2, 5, 3, 5, 4, 5;
  const MatrixXd s = standardize_columns(z);
  EXPECT_NEAR(s.col(0).mean(), 0.0, 1e-15);
  EXPECT_NEAR(s.col(0).squaredNorm() / 3.0, 1.0, 1e-12);
  EXPECT_EQ(s.col(1).norm(), 0.0);
}

TEST(Baselines, Deterministic) {
  auto s = gen_scenario2(80, 10);
  for (int rep = 0; rep < 2; ++rep) {
    EXPECT_EQ(cem_dimension_fit(s.data, 4, 3, 2).assignment.labels, cem_dimension_fit(s.data, 4, 3, 2).assignment.labels);
    EXPECT_EQ(cem_partial_fit(s.data, 4, 3, 2).final_loglik, cem_partial_fit(s.data, 4, 3, 2).final_loglik);
  }
}
