#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cemco {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Library error carrying the name of the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Raised when a diagonal entry of the covariance scale matrix falls below the floor.
class DegenerateScaleError : public Error {
 public:
  explicit DegenerateScaleError(const std::string& message) : Error("model", message) {}
};

/// Raised when a covariance matrix cannot be factorized.
class NotPositiveDefiniteError : public Error {
 public:
  explicit NotPositiveDefiniteError(const std::string& message) : Error("model", message) {}
};

/// Items (N x M) plus the covariates observed alongside them (N x P).
struct DataSet {
  MatrixXd items;
  MatrixXd covariates;
  std::vector<std::string> item_names;
  std::vector<std::string> covariate_names;
  std::vector<std::string> item_ids;

  Eigen::Index n() const { return items.rows(); }
  Eigen::Index m() const { return items.cols(); }
  Eigen::Index p() const { return covariates.cols(); }

  /// Throws cemco::Error when the shape or finiteness invariants are broken.
  void validate() const;
};

/// Interior knot count and polynomial degree of a B-spline basis.
struct SplineSpec {
  int knots = 1;
  int degree = 3;

  int width() const { return knots + degree; }
};

/// How the mixture weights are re-estimated in the M-step.
enum class WeightUpdate {
  hard,  // fraction of items assigned by the C-step
  soft,  // mean responsibility
};

/// How the covariance-scale parameters enter the BIC parameter count.
enum class CountMode {
  published,  // 2KM for all scale matrices regardless of how many covariates act on them
  exact,      // KM baseline scales plus KM per covariance covariate
};

struct ModelConfig {
  int k = 2;
  std::vector<int> centroid_covariates;
  std::vector<int> covariance_covariates;
  std::optional<SplineSpec> spline;
  int restarts = 20;
  int max_iter = 500;
  double loglik_rel_tol = 1e-8;
  std::uint64_t seed = 1;

  WeightUpdate weight_update = WeightUpdate::soft;
  CountMode count_mode = CountMode::published;
  double scale_floor = 1e-6;
  /// Smallest cluster a fit may end with; 0 uses the identifiability minimum of this model.
  long min_cluster_items = 0;
  int max_newton_iter = 50;
  double newton_grad_tol = 1e-8;
  int newton_max_halvings = 30;

  /// Throws cemco::Error if the config is inconsistent with `p` covariates.
  void validate(Eigen::Index p) const;

  /// Config with every covariate effect switched off.
  ModelConfig without_covariates() const;
};

/// Full parameter vector of a fitted or initial model.
///
/// `beta[j]` is Q x M where Q is the width of the centroid design (covariate count,
/// or covariate count times spline width). `gamma[j]` is Pcov x M. Every E[j] is M x M.
struct ClusterParams {
  VectorXd alpha;
  MatrixXd mu_star;
  std::vector<MatrixXd> beta;
  MatrixXd sigma;
  std::vector<MatrixXd> gamma;
  std::vector<MatrixXd> e;

  int k() const { return static_cast<int>(alpha.size()); }
  Eigen::Index m() const { return mu_star.cols(); }
  Eigen::Index centroid_width() const { return beta.empty() ? 0 : beta.front().rows(); }
  Eigen::Index scale_width() const { return gamma.empty() ? 0 : gamma.front().rows(); }

  /// Zero-effect parameters with the given shapes: alpha uniform, sigma 1, E identity.
  static ClusterParams zeros(int k, Eigen::Index m, Eigen::Index q, Eigen::Index pcov);

  /// Throws cemco::Error when alpha, E or finiteness invariants are violated.
  void validate() const;
};

/// N x K posterior membership probabilities.
struct Responsibilities {
  MatrixXd matrix;
};

struct Assignment {
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  /// N x K 0/1 indicator matrix.
  MatrixXd indicator(int k) const;
};

struct FitResult {
  ClusterParams params;
  Responsibilities responsibilities;
  Assignment assignment;
  std::vector<double> loglik_trace;
  double final_loglik = 0.0;
  double bic = 0.0;
  bool converged = false;
  bool degenerate = false;  // some cluster ended with too few items to estimate its parameters
  int n_iter = 0;
  int restart_index = 0;
  int failed_restarts = 0;
  std::vector<std::string> warnings;
};

}  // namespace cemco
