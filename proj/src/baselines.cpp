#include "cemco/baselines.hpp"

#include "cemco/engine.hpp"

#include <cmath>
#include <string>

namespace cemco {

ModelConfig baseline_config(int k, int restarts, std::uint64_t seed) {
  ModelConfig c;
  c.k = k;
  c.restarts = restarts;
  c.seed = seed;
  return c;
}

FitResult cem_fit(const DataSet& data, const ModelConfig& base) {
  DataSet plain;
  plain.items = data.items;
  plain.covariates.resize(data.n(), 0);
  plain.item_names = data.item_names;
  plain.item_ids = data.item_ids;
  return fit(plain, base.without_covariates());
}

FitResult cem_fit(const DataSet& data, int k, int restarts, std::uint64_t seed) {
  return cem_fit(data, baseline_config(k, restarts, seed));
}

MatrixXd standardize_columns(const MatrixXd& z) {
  MatrixXd out = z;
  const double n = static_cast<double>(z.rows());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double mean = z.col(c).mean();
    const double var = n > 1 ? (z.col(c).array() - mean).square().sum() / (n - 1.0) : 0.0;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      out.col(c).setZero();
    } else {
      out.col(c) = (z.col(c).array() - mean) / sd;
    }
  }
  return out;
}

FitResult cem_dimension_fit(const DataSet& data, const ModelConfig& base) {
  if (data.p() == 0) return cem_fit(data, base);
  DataSet joined;
  joined.items.resize(data.n(), data.m() + data.p());
  joined.items << data.items, standardize_columns(data.covariates);
  joined.covariates.resize(data.n(), 0);
  joined.item_ids = data.item_ids;

  // A zeroed constant column would make every E singular; leave such columns out.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < joined.items.cols(); ++c) {
    if (c < data.m() || joined.items.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
  }
  if (static_cast<Eigen::Index>(keep.size()) != joined.items.cols()) {
    MatrixXd reduced(data.n(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) reduced.col(static_cast<Eigen::Index>(c)) = joined.items.col(keep[c]);
    joined.items = std::move(reduced);
  }
  return fit(joined, base.without_covariates());
}

FitResult cem_dimension_fit(const DataSet& data, int k, int restarts, std::uint64_t seed) {
  return cem_dimension_fit(data, baseline_config(k, restarts, seed));
}

MatrixXd regression_residuals(const MatrixXd& x, const MatrixXd& z, int* dropped) {
  if (dropped) *dropped = 0;
  MatrixXd design(x.rows(), 1);
  design.col(0).setOnes();
  // Greedy column selection keeps the design full rank.
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    MatrixXd trial(x.rows(), design.cols() + 1);
    trial << design, z.col(c);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(trial);
    if (qr.rank() == trial.cols()) {
      design = std::move(trial);
    } else if (dropped) {
      ++*dropped;
    }
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  return x - design * qr.solve(x);
}

FitResult cem_partial_fit(const DataSet& data, const ModelConfig& base) {
  if (data.p() == 0) return cem_fit(data, base);
  int dropped = 0;
  DataSet resid;
  resid.items = regression_residuals(data.items, data.covariates, &dropped);
  resid.covariates.resize(data.n(), 0);
  resid.item_ids = data.item_ids;
  FitResult out = fit(resid, base.without_covariates());
  if (dropped > 0) out.warnings.push_back("dropped " + std::to_string(dropped) + " collinear covariate columns");
  return out;
}

FitResult cem_partial_fit(const DataSet& data, int k, int restarts, std::uint64_t seed) {
  return cem_partial_fit(data, baseline_config(k, restarts, seed));
}

}  // namespace cemco
