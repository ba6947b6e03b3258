#pragma once

#include "cemco/model.hpp"
#include "cemco/types.hpp"

#include <span>

namespace cemco {

/// Transient state of one EM iteration.
struct EmState {
  ClusterParams params;
  Responsibilities responsibilities;
  Assignment assignment;
  double loglik = 0.0;
  int iteration = 0;
};

struct EStepResult {
  Responsibilities responsibilities;
  double loglik = 0.0;
  int underflow_items = 0;  // rows reset to 1/K because every component underflowed
};

struct NewtonResult {
  VectorXd sigma;  // M
  MatrixXd gamma;  // Pcov x M
  double objective_before = 0.0;
  double objective_after = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Initialization ------------------------------------------------------------

/// alpha uniform, mu* at K distinct sampled items, beta = 0, sigma = 1, gamma = 0,
/// E = diagonal of per-dimension sample variances.
ClusterParams init_random(const DataSet& data, const ModelConfig& config, std::uint64_t seed);
ClusterParams init_random(const DataSet& data, const Design& design, int k, std::uint64_t seed);

/// Regression warm start: least squares x_r ~ (1, w) over all items, common slope
/// scaled by `shrink`, centroids seeded on the residuals. Falls back to
/// init_random when the design is rank deficient.
ClusterParams init_residual(const DataSet& data, const ModelConfig& config, std::uint64_t seed,
                            double shrink = 1.0);
ClusterParams init_residual(const DataSet& data, const Design& design, int k, std::uint64_t seed,
                            double shrink, bool* fell_back = nullptr);

// Steps ----------------------------------------------------------------------

EStepResult e_step(const DataSet& data, const Design& design, const ClusterParams& params,
                   double scale_floor = 1e-6);
Responsibilities e_step(const DataSet& data, const ClusterParams& params, const ModelConfig& config);

/// Hard assignment by maximal responsibility; ties go to the lowest index.
Assignment c_step(const Responsibilities& resp);

/// Closed-form updates of mu*, beta and E, Newton-Raphson on the scale
/// parameters when covariance covariates are active, then the weights.
ClusterParams m_step(const DataSet& data, const Design& design, const EmState& state,
                     const ModelConfig& config, std::vector<std::string>* warnings = nullptr);
ClusterParams m_step(const DataSet& data, const EmState& state, const ModelConfig& config);

/// Weighted log-likelihood of cluster j as a function of its scale parameters,
/// up to terms that do not depend on them.
double scale_objective(const DataSet& data, const Design& design, const ClusterParams& params,
                       const Eigen::Ref<const VectorXd>& weights, int j, double scale_floor = 1e-6);

/// Analytic gradient (M x (1+Pcov), row r = d/d(sigma_r, gamma_.r)) and Hessian of scale_objective.
void scale_derivatives(const DataSet& data, const Design& design, const ClusterParams& params,
                       const Eigen::Ref<const VectorXd>& weights, int j, MatrixXd& gradient,
                       MatrixXd& hessian, double scale_floor = 1e-6);

/// Damped Newton-Raphson ascent on the scale parameters of cluster j with mu*, beta, E fixed.
NewtonResult newton_L(const DataSet& data, const Design& design, const ClusterParams& params,
                      const Responsibilities& resp, int j, const ModelConfig& config);
NewtonResult newton_L(const DataSet& data, const ClusterParams& params, const Responsibilities& resp, int j,
                      const ModelConfig& config);

// Driver ---------------------------------------------------------------------

/// Smallest hard cluster size accepted at convergence: the number of free
/// location, core and scale parameters of one cluster.
Eigen::Index min_cluster_size(const Design& design, Eigen::Index m);

/// Runs EM to convergence from one starting point.
FitResult fit_from(const DataSet& data, const ModelConfig& config, const ClusterParams& start);
FitResult fit_from(const DataSet& data, const Design& design, const ModelConfig& config,
                   const ClusterParams& start);

/// Multi-restart fit. Restart r uses seed + r; restart 0 is the regression warm
/// start when centroid covariates exist. `extra_starts` run after the seeded ones.
/// Runs that end degenerate are discarded.
FitResult fit(const DataSet& data, const ModelConfig& config, std::span<const ClusterParams> extra_starts = {});

}  // namespace cemco
