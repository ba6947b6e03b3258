#pragma once

#include "cemco/types.hpp"

namespace cemco {

/// Per-item regressors seen by the model: the centroid design (raw covariates or
/// their spline expansion) and the covariance-scale design.
struct Design {
  MatrixXd centroid;  // N x Q
  MatrixXd scale;     // N x Pcov
};

/// Builds the design matrices for `config` over `data`. With a spline the
/// centroid covariates are expanded; two-valued covariates pass through.
Design make_design(const DataSet& data, const ModelConfig& config);

/// Covariate-adjusted centroid mu*_j + sum_l beta_{j,l} w_l for one design row.
VectorXd centroid(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& design_row);

/// The covariate displacement d_{i,j} = centroid - mu*_j.
VectorXd displacement(const ClusterParams& params, int j,
                      const Eigen::Ref<const VectorXd>& design_row);

/// Diagonal of L_{i,j}: sigma_{r,j} + sum_l gamma_{l,r,j} z_l.
VectorXd scale_diagonal(const ClusterParams& params, int j,
                        const Eigen::Ref<const VectorXd>& scale_row);

/// Sigma_{i,j} = L E_j L. Throws DegenerateScaleError if |L_rr| < floor.
MatrixXd covariance(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& scale_row,
                    double floor = 1e-6);

/// Log of the multivariate normal density, through a Cholesky factor of cov.
double log_density(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& mu,
                   const Eigen::Ref<const MatrixXd>& cov);

/// Sign-preserving clamp of a scale entry away from zero; zero maps to +floor.
inline double clamp_scale(double v, double floor) {
  if (v >= 0.0) return v < floor ? floor : v;
  return v > -floor ? -floor : v;
}

enum class FloorPolicy { clamp, reject };

/// Lower Cholesky factor of E, retrying once with a 1e-8 ridge.
/// Throws NotPositiveDefiniteError when both attempts fail.
MatrixXd factor_core(const MatrixXd& e);

/// N x K matrix of log(alpha_j) + log phi(x_i, mu_ij, Sigma_ij).
MatrixXd weighted_log_densities(const DataSet& data, const Design& design,
                                const ClusterParams& params, FloorPolicy policy,
                                double floor = 1e-6);

/// log phi(x_i, mu_ij, Sigma_ij) for all items and one cluster.
VectorXd component_log_densities(const MatrixXd& items, const Design& design,
                                 const ClusterParams& params, int j, FloorPolicy policy,
                                 double floor = 1e-6);

/// Row-wise log-sum-exp.
VectorXd log_sum_exp_rows(const MatrixXd& m);

/// Mixture log-likelihood sum_i log sum_j alpha_j phi(x_i, mu_ij, Sigma_ij).
double log_likelihood(const DataSet& data, const ClusterParams& params, const ModelConfig& config);

double log_likelihood(const DataSet& data, const Design& design, const ClusterParams& params,
                      FloorPolicy policy, double floor = 1e-6);

}  // namespace cemco
