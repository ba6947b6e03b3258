#pragma once

#include "cemco/types.hpp"

namespace cemco {

/// Options shared by the baseline fitters; everything except K, restarts and
/// seed follows the engine defaults.
ModelConfig baseline_config(int k, int restarts, std::uint64_t seed);

/// Standard CEM on the items, ignoring covariates.
FitResult cem_fit(const DataSet& data, int k, int restarts, std::uint64_t seed);
FitResult cem_fit(const DataSet& data, const ModelConfig& base);

/// CEM on [x | standardized z]. Constant covariate columns become zeros.
FitResult cem_dimension_fit(const DataSet& data, int k, int restarts, std::uint64_t seed);
FitResult cem_dimension_fit(const DataSet& data, const ModelConfig& base);

/// CEM on the residuals of per-dimension least squares x_r ~ (1, z).
/// Collinear covariate columns are dropped (reported in `warnings`).
FitResult cem_partial_fit(const DataSet& data, int k, int restarts, std::uint64_t seed);
FitResult cem_partial_fit(const DataSet& data, const ModelConfig& base);

/// Column-standardized copy; constant columns map to zero.
MatrixXd standardize_columns(const MatrixXd& z);

/// Residuals of x ~ (1, z) with collinear columns of z removed.
MatrixXd regression_residuals(const MatrixXd& x, const MatrixXd& z, int* dropped = nullptr);

}  // namespace cemco
