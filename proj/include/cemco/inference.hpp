#pragma once

#include "cemco/types.hpp"

#include <optional>
#include <vector>

namespace cemco {

/// Number of free parameters R used by BIC.
///
/// Published mode: K(1 + M(3 + P') + M^2) with P' = P, or P(S+B) under a spline.
/// Exact mode counts the scale matrices as KM(1 + Pcov) when covariance covariates
/// are active and zero otherwise.
long param_count(int k, long m, long p, const std::optional<SplineSpec>& spline = std::nullopt,
                 long pcov = 0, CountMode mode = CountMode::published);

/// param_count for a model config over M-dimensional items.
long param_count(const ModelConfig& config, long m);

/// ln(n) r - 2 final_loglik.
double bic(const FitResult& fit, long n, long r);
double bic(double loglik, long n, long r);

/// Upper tail P(X >= x) of a chi-square distribution with `df` degrees of freedom.
double chi_square_sf(double x, double df);

enum class Target { centroid, covariance };
enum class TestMethod { lrt, bootstrap };

const char* to_string(Target t);
const char* to_string(TestMethod m);

struct TestResult {
  double statistic_d = 0.0;
  int df = 0;
  double p_value = 1.0;
  TestMethod method = TestMethod::lrt;
  Target target = Target::centroid;
  int covariate = 0;
  FitResult null_fit;
  FitResult alt_fit;
  std::optional<int> bootstrap_samples;
  std::vector<double> bootstrap_statistics;
};

/// Config with covariate `l` removed from the tested effect.
ModelConfig null_config(const ModelConfig& config, int covariate, Target target);

/// Degrees of freedom of the test of covariate `l`: KM, or KM(S+B) for a spline centroid effect.
int test_df(const DataSet& data, const ModelConfig& config, int covariate, Target target);

/// Embeds a null-model solution in the alternative's parameter space (zero effect for `l`).
ClusterParams embed_null_params(const DataSet& data, const ModelConfig& config, int covariate, Target target,
                                const ClusterParams& null_params);

/// Likelihood ratio test with chi-square reference.
TestResult lrt(const DataSet& data, const ModelConfig& config, int covariate, Target target);

/// Parametric bootstrap test. Each bootstrap refit uses `boot_restarts` restarts.
TestResult bootstrap_test(const DataSet& data, const ModelConfig& config, int covariate, Target target,
                          int n_boot, std::uint64_t seed, int boot_restarts = 5);

/// Draws a dataset from a fitted model, keeping the covariates of `data`.
DataSet simulate_from_fit(const DataSet& data, const ModelConfig& config, const ClusterParams& params,
                          std::uint64_t seed, std::vector<int>* labels = nullptr);

struct SelectionRow {
  int k = 0;
  double final_loglik = 0.0;
  long param_count = 0;
  double bic = 0.0;
  bool usable = false;
  std::string error;
};

struct SelectionTable {
  std::vector<SelectionRow> rows;
  int chosen_k = 0;
};

/// Fits every k in [k_min, k_max] and picks the BIC minimizer (ties to the smaller k).
SelectionTable select_k(const DataSet& data, const ModelConfig& config, int k_min, int k_max);

}  // namespace cemco
