#include "cemco/engine.hpp"
#include "cemco/simulation.hpp"
#include "cemco/splines.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cemco;

namespace {

std::vector<double> uniform_values(int n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = ud(rng);
  return v;
}

}  // namespace

TEST(BsplineBasis, LinearHatFunctions) {
  std::vector<double> v{0.0, 0.25, 0.5, 1.0};
  auto b = bspline_basis(v, SplineSpec{0, 1});
  ASSERT_EQ(b.matrix.cols(), 2);
  EXPECT_EQ(b.width(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_NEAR(b.matrix(i, 0), 1.0 - v[i], 1e-15);
    EXPECT_NEAR(b.matrix(i, 1), v[i], 1e-15);
  }
  EXPECT_EQ(b.matrix(0, 0), 1.0);
  EXPECT_EQ(b.matrix(0, 1), 0.0);
}

TEST(BsplineBasis, PartitionOfUnityAndRange) {
  for (int knots : {0, 1, 2, 4}) {
    for (int degree : {1, 2, 3}) {
      auto v = uniform_values(200, 7 + knots * 10 + degree, -3.0, 5.0);
      auto b = bspline_basis(v, SplineSpec{knots, degree});
      EXPECT_EQ(b.width(), knots + degree);
      for (Eigen::Index i = 0; i < b.matrix.rows(); ++i) {
        EXPECT_NEAR(b.matrix.row(i).sum(), 1.0, 1e-12);
        EXPECT_GE(b.matrix.row(i).minCoeff(), 0.0);
        EXPECT_LE(b.matrix.row(i).maxCoeff(), 1.0);
      }
    }
  }
}

TEST(BsplineBasis, ContinuousAtKnots) {
  auto v = uniform_values(101, 3);
  auto b = bspline_basis(v, SplineSpec{1, 3});
  const double knot = b.knot_vector[static_cast<std::size_t>(b.degree + 1)];
  const VectorXd left = b.evaluate(std::nextafter(knot, -1.0));
  const VectorXd right = b.evaluate(std::nextafter(knot, 2.0));
  const VectorXd at = b.evaluate(knot);
  EXPECT_LE((left - right).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((left - at).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BsplineBasis, QuantileKnotPlacement) {
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  auto knots = quantile_knots(v, SplineSpec{1, 3});
  ASSERT_EQ(knots.size(), 4u + 1u + 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(knots[static_cast<std::size_t>(i)], 0.0);
    EXPECT_EQ(knots[knots.size() - 1 - static_cast<std::size_t>(i)], 100.0);
  }
  EXPECT_NEAR(knots[4], 50.0, 1e-12);
}

TEST(BsplineBasis, StoredKnotsReproduceMatrix) {
  auto v = uniform_values(150, 5, 2.0, 9.0);
  auto b = bspline_basis(v, SplineSpec{2, 3});
  EXPECT_EQ(b.evaluate(v), b.matrix);
}

TEST(BsplineBasis, Errors) {
  EXPECT_THROW(bspline_basis(std::vector<double>{1, 2, 3, 4}, SplineSpec{1, 3}), Error);
  EXPECT_THROW(bspline_basis(std::vector<double>(20, 1.0), SplineSpec{1, 3}), Error);
  std::vector<double> two(20, 0.0);
  for (std::size_t i = 10; i < 20; ++i) two[i] = 1.0;
  EXPECT_THROW(bspline_basis(two, SplineSpec{3, 1}), Error);
  EXPECT_THROW(bspline_basis(uniform_values(20, 1), SplineSpec{0, 0}), Error);
}

TEST(BasisFunctions, CoxDeBoorMatchesClosedFormQuadratic) {
  // Uniform clamped quadratic on [0, 1] with a knot at 0.5.
  const std::vector<double> knots{0, 0, 0, 0.5, 1, 1, 1};
  VectorXd out;
  const double x = 0.25;
  const int first = basis_functions(knots, 2, x, out);
  ASSERT_EQ(first, 0);
  ASSERT_EQ(out.size(), 3);
  EXPECT_NEAR(out(0), (1 - 2 * x) * (1 - 2 * x), 1e-15);
  EXPECT_NEAR(out(1), 2 * x * (1 - 2 * x) + 2 * x * (1 - x), 1e-15);
  EXPECT_NEAR(out(2), 2 * x * x, 1e-15);
  EXPECT_NEAR(out.sum(), 1.0, 1e-15);
}

TEST(Expand, Widths) {
  auto s = gen_scenario3(40, 2);
  auto e = expand(s.data, SplineSpec{1, 3});
  EXPECT_EQ(e.p(), 4);
  DataSet two = s.data;
  two.covariates.conservativeResize(Eigen::NoChange, 2);
  two.covariates.col(1) = s.data.covariates.col(0).array().square();
  EXPECT_EQ(expand(two, SplineSpec{2, 3}).p(), 10);
}

TEST(Expand, BinaryPassthrough) {
  auto s = gen_scenario1(40, 3);
  std::vector<int> binary{2, 3, 4};
  auto e = expand(s.data, SplineSpec{1, 3}, binary);
  EXPECT_EQ(e.p(), 2 * 4 + 3);
  EXPECT_EQ(e.covariates.col(8), s.data.covariates.col(2));
  DataSet none = s.data;
  none.covariates.resize(40, 0);
  EXPECT_THROW(expand(none, SplineSpec{1, 3}), Error);
}

TEST(Expand, LinearSplineReproducesLinearFit) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = gen_scenario3(120, 40 + seed);
    ModelConfig lin = scenario_config(3, 4);
    lin.spline.reset();
    lin.restarts = 3;
    ModelConfig spl = lin;
    spl.spline = SplineSpec{0, 1};
    const auto start = init_random(s.data, lin, seed);
    auto a = fit_from(s.data, lin, start);
    auto b = fit_from(s.data, spl, start);
    EXPECT_NEAR(a.final_loglik, b.final_loglik, 1e-6);
    EXPECT_EQ(a.assignment.labels, b.assignment.labels);
  }
}
