#pragma once

#include "cemco/inference.hpp"
#include "cemco/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cemco {

/// Everything needed to regenerate a simulated dataset bit-for-bit.
struct ScenarioParams {
  int scenario = 1;
  long n = 0;
  std::uint64_t seed = 0;
  ClusterParams truth;     // alpha, mu*, beta (K x Q x M), sigma, gamma, E
  bool quadratic = false;  // centroid shift beta z + beta z^2
  std::vector<std::string> covariate_distributions;
};

struct LabeledDataSet {
  DataSet data;
  Assignment truth;
  ScenarioParams generator;
};

/// Default scenario-1 effects: cluster 1 +0.1 per continuous covariate and +0.2
/// per binary covariate on every dimension, cluster 2 the negatives.
std::vector<MatrixXd> scenario1_default_beta();

/// K = 2, M = 5, P = 5 (z1, z2 ~ N(0,1); z3..z5 ~ Bernoulli(0.4, 0.25, 0.15)),
/// n/2 items per cluster from N(mu_ij, 0.03 I).
LabeledDataSet gen_scenario1(long n, std::uint64_t seed, const std::optional<std::vector<MatrixXd>>& beta = {});

/// Scenario-2 centroid effects (0.3,0.3), (-0.3,-0.3), (0.3,-0.3), (-0.3,0.3).
MatrixXd scenario2_default_beta();

struct Scenario2Options {
  std::optional<MatrixXd> beta;  // K x M, default (0.3,0.3), (-0.3,-0.3), (0.3,-0.3), (-0.3,0.3)
  std::optional<VectorXd> w;     // K, default (1, 1, 1, 10)
};

/// K = 4, M = 2, P = 1, z ~ N(1,1); Sigma_ij = L E L with L = 1 + w_j z, E = 0.1 I.
LabeledDataSet gen_scenario2(long n, std::uint64_t seed, const Scenario2Options& options = {});

/// Scenario-2 geometry with centroid shift beta_j z + beta_j z^2 and covariance 0.1 I.
/// `beta` is K x M (default: the scenario-2 effects).
LabeledDataSet gen_scenario3(long n, std::uint64_t seed, const std::optional<MatrixXd>& beta = {});

/// Regenerates a dataset from its recorded generator parameters.
LabeledDataSet regenerate(const ScenarioParams& params);

/// Model config the benchmark fits for each scenario.
ModelConfig scenario_config(int scenario, int k);

/// Adjusted Rand index from the contingency table.
double adjusted_rand_index(const Assignment& a, const Assignment& b);

enum class Method { cemco, cem, cem_dimension, cem_partial };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct BenchmarkOptions {
  int scenario = 1;
  std::vector<long> n_grid;
  int reps = 2;
  std::vector<Method> methods{Method::cemco, Method::cem, Method::cem_dimension, Method::cem_partial};
  std::uint64_t seed = 1;
  int restarts = 20;
  bool run_select_k = true;
  int k_min = 1;
  int k_max = 4;
  bool run_lrt = true;
  double beta_scale = 1.0;
};

struct BenchmarkRow {
  int scenario = 0;
  long n = 0;
  int rep = 0;
  Method method = Method::cemco;
  double ari = 0.0;
  std::optional<int> chosen_k;
  std::optional<double> p_h0;
  std::optional<double> p_h1;
  std::string error;
};

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int count = 0;
};

struct BenchmarkSummary {
  long n = 0;
  std::map<std::string, Interval> ari_difference;  // cemco minus method, 90% t interval
  std::map<int, int> chosen_k_counts;
  std::vector<double> p_h0;
  std::vector<double> p_h1;
  int failures = 0;
};

struct BenchmarkReport {
  int scenario = 0;
  int reps = 0;
  std::vector<BenchmarkRow> rows;
  std::vector<BenchmarkSummary> summaries;
};

/// Mean with a two-sided 90% Student-t confidence interval.
Interval mean_interval(const std::vector<double>& values, double level = 0.90);

/// Which covariate and effect the benchmark tests per scenario.
int scenario_test_covariate(int scenario);
Target scenario_test_target(int scenario);

BenchmarkReport run_benchmark(const BenchmarkOptions& options);

/// Long-format CSV: scenario,n,rep,method,ari,chosen_k,p_h0,p_h1.
std::string report_csv(const BenchmarkReport& report);
std::string report_json(const BenchmarkReport& report);

}  // namespace cemco
