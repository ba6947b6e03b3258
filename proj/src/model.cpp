#include "cemco/model.hpp"

#include "cemco/splines.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <string>

namespace cemco {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

bool is_two_valued(const Eigen::Ref<const VectorXd>& col) {
  std::set<double> distinct;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    distinct.insert(col[i]);
    if (distinct.size() > 2) return false;
  }
  return true;
}

}  // namespace

Design make_design(const DataSet& data, const ModelConfig& config) {
  const auto n = data.n();
  Design d;
  std::vector<MatrixXd> blocks;
  Eigen::Index width = 0;
  for (int l : config.centroid_covariates) {
    const VectorXd col = data.covariates.col(l);
    if (config.spline && !is_two_valued(col)) {
      blocks.push_back(bspline_basis(std::span<const double>(col.data(), col.size()), *config.spline).design());
    } else {
      blocks.emplace_back(col);
    }
    width += blocks.back().cols();
  }
  d.centroid.resize(n, width);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    d.centroid.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  d.scale.resize(n, static_cast<Eigen::Index>(config.covariance_covariates.size()));
  for (std::size_t c = 0; c < config.covariance_covariates.size(); ++c) {
    d.scale.col(static_cast<Eigen::Index>(c)) = data.covariates.col(config.covariance_covariates[c]);
  }
  return d;
}

VectorXd displacement(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& design_row) {
  const auto& b = params.beta.at(static_cast<std::size_t>(j));
  if (design_row.size() != b.rows()) {
    throw Error("model", "design row has " + std::to_string(design_row.size()) + " entries, beta expects " +
                             std::to_string(b.rows()));
  }
  return b.transpose() * design_row;
}

VectorXd centroid(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& design_row) {
  if (j < 0 || j >= params.k()) throw Error("model", "cluster index out of range");
  return params.mu_star.row(j).transpose() + displacement(params, j, design_row);
}

VectorXd scale_diagonal(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& scale_row) {
  if (j < 0 || j >= params.k()) throw Error("model", "cluster index out of range");
  const auto& g = params.gamma[static_cast<std::size_t>(j)];
  if (scale_row.size() != g.rows()) {
    throw Error("model", "scale row has " + std::to_string(scale_row.size()) + " entries, gamma expects " +
                             std::to_string(g.rows()));
  }
  return params.sigma.row(j).transpose() + g.transpose() * scale_row;
}

MatrixXd covariance(const ClusterParams& params, int j, const Eigen::Ref<const VectorXd>& scale_row,
                    double floor) {
  const VectorXd l = scale_diagonal(params, j, scale_row);
  for (Eigen::Index r = 0; r < l.size(); ++r) {
    if (std::abs(l[r]) < floor) {
      throw DegenerateScaleError("scale entry " + std::to_string(r) + " of cluster " + std::to_string(j) +
                                 " is below the floor");
    }
  }
  const auto& e = params.e[static_cast<std::size_t>(j)];
  MatrixXd sigma = l.asDiagonal() * e * l.asDiagonal();
  return 0.5 * (sigma + sigma.transpose());
}

double log_density(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& mu,
                   const Eigen::Ref<const MatrixXd>& cov) {
  if (x.size() != mu.size() || cov.rows() != x.size() || cov.cols() != x.size()) {
    throw Error("model", "log_density dimension mismatch");
  }
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NotPositiveDefiniteError("covariance is not positive definite");
  const MatrixXd l = llt.matrixL();
  const VectorXd y = l.triangularView<Eigen::Lower>().solve(x - mu);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det + y.squaredNorm());
}

MatrixXd factor_core(const MatrixXd& e) {
  Eigen::LLT<MatrixXd> llt(e);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  llt.compute(e + 1e-8 * MatrixXd::Identity(e.rows(), e.cols()));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  throw NotPositiveDefiniteError("E is not positive definite even with a ridge");
}

VectorXd component_log_densities(const MatrixXd& items, const Design& design, const ClusterParams& params,
                                 int j, FloorPolicy policy, double floor) {
  const auto n = items.rows();
  const auto m = items.cols();
  const auto js = static_cast<std::size_t>(j);
  const MatrixXd chol = factor_core(params.e[js]);
  const double log_det_e = 2.0 * chol.diagonal().array().log().sum();

  MatrixXd resid = items.rowwise() - params.mu_star.row(j);
  if (design.centroid.cols() > 0) resid.noalias() -= design.centroid * params.beta[js];

  VectorXd log_scale = VectorXd::Zero(n);
  const bool unit_scale = design.scale.cols() == 0 && (params.sigma.row(j).array() == 1.0).all();
  if (!unit_scale) {
    MatrixXd scale = MatrixXd::Zero(n, m);
    scale.rowwise() = params.sigma.row(j);
    if (design.scale.cols() > 0) scale.noalias() += design.scale * params.gamma[js];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index r = 0; r < m; ++r) {
        double& v = scale(i, r);
        if (std::abs(v) < floor) {
          if (policy == FloorPolicy::reject) {
            throw DegenerateScaleError("scale entry of cluster " + std::to_string(j) + " at item " +
                                       std::to_string(i) + " is below the floor");
          }
          v = clamp_scale(v, floor);
        }
      }
    }
    resid.array() /= scale.array();
    log_scale = scale.array().abs().log().rowwise().sum();
  }

  const MatrixXd y = chol.triangularView<Eigen::Lower>().solve(resid.transpose());
  const double constant = -0.5 * (static_cast<double>(m) * kLog2Pi + log_det_e);
  return (constant - log_scale.array() - 0.5 * y.colwise().squaredNorm().transpose().array()).matrix();
}

MatrixXd weighted_log_densities(const DataSet& data, const Design& design, const ClusterParams& params,
                                FloorPolicy policy, double floor) {
  const int k = params.k();
  MatrixXd out(data.n(), k);
  for (int j = 0; j < k; ++j) {
    const double log_alpha =
        params.alpha[j] > 0.0 ? std::log(params.alpha[j]) : -std::numeric_limits<double>::infinity();
    out.col(j) = component_log_densities(data.items, design, params, j, policy, floor).array() + log_alpha;
  }
  return out;
}

VectorXd log_sum_exp_rows(const MatrixXd& m) {
  VectorXd out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out[i] = mx;
      continue;
    }
    out[i] = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

double log_likelihood(const DataSet& data, const Design& design, const ClusterParams& params,
                      FloorPolicy policy, double floor) {
  return log_sum_exp_rows(weighted_log_densities(data, design, params, policy, floor)).sum();
}

double log_likelihood(const DataSet& data, const ClusterParams& params, const ModelConfig& config) {
  data.validate();
  config.validate(data.p());
  const Design design = make_design(data, config);
  if (params.m() != data.m() || params.centroid_width() != design.centroid.cols() ||
      params.scale_width() != design.scale.cols()) {
    throw Error("model", "parameter dimensions are inconsistent with the data and config");
  }
  return log_likelihood(data, design, params, FloorPolicy::reject, config.scale_floor);
}

}  // namespace cemco
