#include "cemco/model.hpp"
#include "cemco/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace cemco;

namespace {

// Every set partition of n items as restricted growth strings.
std::vector<std::vector<int>> partitions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int max_label) {
    if (i == n) {
      out.push_back(cur);
      return;
    }
    for (int l = 0; l <= max_label + 1; ++l) {
      cur[static_cast<std::size_t>(i)] = l;
      rec(i + 1, std::max(max_label, l));
    }
  };
  cur[0] = 0;
  rec(1, 0);
  return out;
}

// ARI from raw pair counts: agreements on same/different cluster membership.
double pair_count_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  }
  const double expected = in_a * in_b / pairs;
  const double max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

Assignment labels(std::vector<int> v) { return Assignment{std::move(v)}; }

}  // namespace

TEST(AdjustedRandIndex, Examples) {
  EXPECT_EQ(adjusted_rand_index(labels({0, 1, 2, 1}), labels({0, 1, 2, 1})), 1.0);
  EXPECT_EQ(adjusted_rand_index(labels({0, 0, 1, 1}), labels({1, 1, 0, 0})), 1.0);
  EXPECT_NEAR(adjusted_rand_index(labels({0, 0, 1, 1}), labels({0, 1, 0, 1})), -0.5, 1e-15);
  EXPECT_THROW(adjusted_rand_index(labels({0, 1}), labels({0, 1, 1})), Error);
}

TEST(AdjustedRandIndex, MatchesExhaustivePairCounting) {
  for (int n = 2; n <= 6; ++n) {
    const auto all = partitions(n);
    for (const auto& a : all) {
      for (const auto& b : all) {
        const double got = adjusted_rand_index(labels(a), labels(b));
        const double want = pair_count_ari(a, b);
        if (n <= 5) {
          ASSERT_EQ(got, want) << "n=" << n;
        } else {
          ASSERT_NEAR(got, want, 1e-12) << "n=" << n;
        }
      }
    }
  }
}

TEST(GenScenario1, ZeroEffectMeans) {
  const long n = 2000;
  std::vector<MatrixXd> zero{MatrixXd::Zero(5, 5), MatrixXd::Zero(5, 5)};
  auto s = gen_scenario1(n, 1, zero);
  EXPECT_EQ(s.data.m(), 5);
  EXPECT_EQ(s.data.p(), 5);
  const double band = 3.0 * std::sqrt(0.03 / (n / 2.0));
  for (int c = 0; c < 2; ++c) {
    VectorXd mean = VectorXd::Zero(5);
    int count = 0;
    for (long i = 0; i < n; ++i) {
      if (s.truth.labels[static_cast<std::size_t>(i)] != c) continue;
      mean += s.data.items.row(i).transpose();
      ++count;
    }
    EXPECT_EQ(count, n / 2);
    mean /= count;
    EXPECT_LE((mean.array() - 0.2 * c).abs().maxCoeff(), band);
  }
}

TEST(GenScenario1, CovariateDistributions) {
  auto s = gen_scenario1(4000, 2);
  for (int l = 2; l < 5; ++l) {
    for (long i = 0; i < 4000; ++i) {
      const double v = s.data.covariates(i, l);
      ASSERT_TRUE(v == 0.0 || v == 1.0);
    }
  }
  EXPECT_NEAR(s.data.covariates.col(2).mean(), 0.40, 0.03);
  EXPECT_NEAR(s.data.covariates.col(3).mean(), 0.25, 0.03);
  EXPECT_NEAR(s.data.covariates.col(4).mean(), 0.15, 0.03);
  EXPECT_NEAR(s.data.covariates.col(0).mean(), 0.0, 0.06);
}

TEST(GenScenario1, EmpiricalCovarianceConverges) {
  const long n = 10000;
  std::vector<MatrixXd> zero{MatrixXd::Zero(5, 5), MatrixXd::Zero(5, 5)};
  auto s = gen_scenario1(n, 3, zero);
  for (int c = 0; c < 2; ++c) {
    MatrixXd x(n / 2, 5);
    long row = 0;
    for (long i = 0; i < n; ++i) {
      if (s.truth.labels[static_cast<std::size_t>(i)] == c) x.row(row++) = s.data.items.row(i);
    }
    const MatrixXd centered = x.rowwise() - x.colwise().mean();
    const MatrixXd cov = centered.transpose() * centered / static_cast<double>(n / 2 - 1);
    EXPECT_LT((cov - 0.03 * MatrixXd::Identity(5, 5)).norm(), 0.01);
  }
}

TEST(GenScenario1, DeterministicAndValidated) {
  auto a = gen_scenario1(60, 9);
  auto b = gen_scenario1(60, 9);
  EXPECT_EQ(a.data.items, b.data.items);
  EXPECT_EQ(a.data.covariates, b.data.covariates);
  EXPECT_EQ(a.truth.labels, b.truth.labels);
  EXPECT_THROW(gen_scenario1(61, 9), Error);
  EXPECT_THROW(gen_scenario1(60, 9, std::vector<MatrixXd>{MatrixXd::Zero(4, 5)}), Error);
  for (long n : {120L, 240L, 360L}) EXPECT_EQ(gen_scenario1(n, 1).data.n(), n);
}

TEST(GenScenario2, VarianceRatioAtMatchedCovariate) {
  auto s = gen_scenario2(40, 4);
  const auto& truth = s.generator.truth;
  for (double z : {0.5, 1.0, 2.0}) {
    VectorXd row(1);
    row << z;
    const double ratio = covariance(truth, 3, row)(0, 0) / covariance(truth, 0, row)(0, 0);
    EXPECT_NEAR(ratio, std::pow((1 + 10 * z) / (1 + z), 2), 1e-10);
  }
  EXPECT_TRUE(truth.e[2].isApprox(0.1 * MatrixXd::Identity(2, 2)));
  EXPECT_THROW(gen_scenario2(42, 4), Error);
  for (long n : {200L, 300L, 400L, 800L}) EXPECT_EQ(gen_scenario2(n, 1).data.n(), n);
}

TEST(GenScenario2, ResidualScaleMatchesModel) {
  auto s = gen_scenario2(8000, 5);
  const auto& truth = s.generator.truth;
  const Design design{s.data.covariates, s.data.covariates};
  // Whitened residuals x - mu over L have covariance E = 0.1 I.
  double sum = 0.0;
  long count = 0;
  for (long i = 0; i < s.data.n(); ++i) {
    const int j = s.truth.labels[static_cast<std::size_t>(i)];
    const VectorXd mu = centroid(truth, j, design.centroid.row(i).transpose());
    const VectorXd l = scale_diagonal(truth, j, design.scale.row(i).transpose());
    const VectorXd u = (s.data.items.row(i).transpose() - mu).cwiseQuotient(l);
    sum += u.squaredNorm();
    count += 2;
  }
  EXPECT_NEAR(sum / count, 0.1, 0.005);
}

TEST(GenScenario3, ZeroEffectAndDeterminism) {
  auto s = gen_scenario3(400, 6, MatrixXd::Zero(4, 2));
  EXPECT_TRUE(s.generator.quadratic);
  for (int j = 0; j < 4; ++j) EXPECT_TRUE(s.generator.truth.e[static_cast<std::size_t>(j)].isApprox(0.1 * MatrixXd::Identity(2, 2)));
  auto a = gen_scenario3(80, 7);
  auto b = gen_scenario3(80, 7);
  EXPECT_EQ(a.data.items, b.data.items);
  EXPECT_THROW(gen_scenario3(82, 7), Error);
}

TEST(Regenerate, BitIdentical) {
  for (auto s : {gen_scenario1(40, 11), gen_scenario2(40, 12), gen_scenario3(40, 13)}) {
    auto r = regenerate(s.generator);
    EXPECT_EQ(r.data.items, s.data.items);
    EXPECT_EQ(r.data.covariates, s.data.covariates);
    EXPECT_EQ(r.truth.labels, s.truth.labels);
  }
}

TEST(MeanInterval, StudentT) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto iv = mean_interval(v);
  EXPECT_EQ(iv.count, 5);
  EXPECT_NEAR(iv.mean, 3.0, 1e-15);
  // t_{0.95, 4} = 2.131847; sd = sqrt(2.5).
  const double half = 2.131847 * std::sqrt(2.5) / std::sqrt(5.0);
  EXPECT_NEAR(iv.lower, 3.0 - half, 1e-5);
  EXPECT_NEAR(iv.upper, 3.0 + half, 1e-5);
}

TEST(Methods, Names) {
  for (auto m : {Method::cemco, Method::cem, Method::cem_dimension, Method::cem_partial}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("kmeans"), Error);
}

TEST(RunBenchmark, SmokeReportIsComplete) {
  BenchmarkOptions o;
  o.scenario = 1;
  o.n_grid = {200};
  o.reps = 2;
  o.restarts = 2;
  o.k_max = 2;
  auto r = run_benchmark(o);
  EXPECT_EQ(r.rows.size(), 2u * 4u);
  ASSERT_EQ(r.summaries.size(), 1u);
  const auto& s = r.summaries[0];
  EXPECT_EQ(s.failures, 0);
  EXPECT_EQ(s.ari_difference.size(), 3u);
  EXPECT_EQ(s.ari_difference.at("cem").count, 2);
  EXPECT_EQ(s.p_h0.size(), 2u);
  EXPECT_EQ(s.p_h1.size(), 2u);
  int chosen = 0;
  for (const auto& [k, c] : s.chosen_k_counts) chosen += c;
  EXPECT_EQ(chosen, 2);
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario,n,rep,method,ari,chosen_k,p_h0,p_h1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_NE(report_json(r).find("\"summaries\""), std::string::npos);
  auto again = run_benchmark(o);
  EXPECT_EQ(report_csv(again), csv);
  o.reps = 1;
  EXPECT_THROW(run_benchmark(o), Error);
}
