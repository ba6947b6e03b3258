#include "cemco/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace cemco {

void DataSet::validate() const {
  if (items.rows() < 1 || items.cols() < 1) throw Error("data", "need at least one item and one dimension");
  if (!items.allFinite()) throw Error("data", "items contain non-finite values");
  if (covariates.cols() > 0) {
    if (covariates.rows() != items.rows()) {
      throw Error("data", "covariates have " + std::to_string(covariates.rows()) + " rows, items have " +
                              std::to_string(items.rows()));
    }
    if (!covariates.allFinite()) throw Error("data", "covariates contain non-finite values");
  }
}

void ModelConfig::validate(Eigen::Index p) const {
  if (k < 1) throw Error("config", "k must be >= 1");
  if (restarts < 1) throw Error("config", "restarts must be >= 1");
  if (max_iter < 1) throw Error("config", "max_iter must be >= 1");
  if (!(loglik_rel_tol > 0.0)) throw Error("config", "loglik_rel_tol must be positive");
  if (min_cluster_items < 0) throw Error("config", "min_cluster_items must be >= 0");
  auto check = [p](const std::vector<int>& idx, const char* what) {
    std::set<int> seen;
    for (int l : idx) {
      if (l < 0 || l >= p) {
        throw Error("config", std::string(what) + " covariate index " + std::to_string(l) + " out of range");
      }
      if (!seen.insert(l).second) throw Error("config", std::string(what) + " covariate listed twice");
    }
  };
  check(centroid_covariates, "centroid");
  check(covariance_covariates, "covariance");
  if (spline) {
    if (spline->degree < 1 || spline->knots < 0) throw Error("config", "spline needs degree >= 1, knots >= 0");
    if (!covariance_covariates.empty()) {
      throw Error("config", "spline effects apply to centroids only; covariance covariates must be empty");
    }
  }
}

ModelConfig ModelConfig::without_covariates() const {
  ModelConfig out = *this;
  out.centroid_covariates.clear();
  out.covariance_covariates.clear();
  out.spline.reset();
  return out;
}

ClusterParams ClusterParams::zeros(int k, Eigen::Index m, Eigen::Index q, Eigen::Index pcov) {
  ClusterParams p;
  p.alpha = VectorXd::Constant(k, 1.0 / k);
  p.mu_star = MatrixXd::Zero(k, m);
  p.beta.assign(static_cast<std::size_t>(k), MatrixXd::Zero(q, m));
  p.sigma = MatrixXd::Ones(k, m);
  p.gamma.assign(static_cast<std::size_t>(k), MatrixXd::Zero(pcov, m));
  p.e.assign(static_cast<std::size_t>(k), MatrixXd::Identity(m, m));
  return p;
}

void ClusterParams::validate() const {
  const int kk = k();
  if (kk < 1) throw Error("model", "no clusters");
  const auto mm = m();
  if (mu_star.rows() != kk || sigma.rows() != kk || sigma.cols() != mm ||
      beta.size() != static_cast<std::size_t>(kk) || gamma.size() != static_cast<std::size_t>(kk) ||
      e.size() != static_cast<std::size_t>(kk)) {
    throw Error("model", "parameter shapes disagree with cluster count");
  }
  if (!alpha.allFinite() || !mu_star.allFinite() || !sigma.allFinite()) {
    throw Error("model", "non-finite parameter");
  }
  if ((alpha.array() < 0.0).any() || (alpha.array() > 1.0).any() || std::abs(alpha.sum() - 1.0) > 1e-10) {
    throw Error("model", "alpha must lie in [0,1] and sum to 1");
  }
  for (int j = 0; j < kk; ++j) {
    const auto& ej = e[static_cast<std::size_t>(j)];
    if (beta[static_cast<std::size_t>(j)].cols() != mm || gamma[static_cast<std::size_t>(j)].cols() != mm ||
        ej.rows() != mm || ej.cols() != mm) {
      throw Error("model", "cluster " + std::to_string(j) + " parameter shapes disagree with dimension");
    }
    if (!beta[static_cast<std::size_t>(j)].allFinite() || !gamma[static_cast<std::size_t>(j)].allFinite() ||
        !ej.allFinite()) {
      throw Error("model", "non-finite parameter in cluster " + std::to_string(j));
    }
    if ((ej - ej.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw Error("model", "E of cluster " + std::to_string(j) + " is not symmetric");
    }
    Eigen::LLT<MatrixXd> llt(ej);
    if (llt.info() != Eigen::Success) {
      throw NotPositiveDefiniteError("E of cluster " + std::to_string(j) + " is not positive definite");
    }
  }
}

MatrixXd Assignment::indicator(int k) const {
  MatrixXd c = MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) c(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return c;
}

}  // namespace cemco
