#pragma once

#include "cemco/types.hpp"

#include <span>

namespace cemco {

/// Clamped B-spline basis fitted to one covariate.
///
/// `matrix` holds all S+B+1 basis functions (rows are a partition of unity);
/// `design()` drops the first column, leaving the S+B regressors the model uses
/// (the dropped intercept direction is absorbed by mu*).
struct SplineBasis {
  MatrixXd matrix;
  std::vector<double> knot_vector;
  int degree = 0;

  Eigen::Index width() const { return matrix.cols() - 1; }
  MatrixXd design() const { return matrix.rightCols(width()); }

  /// All basis functions at `x`; values outside the knot span are clamped to it.
  VectorXd evaluate(double x) const;
  MatrixXd evaluate(std::span<const double> values) const;
};

/// Knots at equally spaced quantiles, boundary knots at min/max repeated degree+1 times.
std::vector<double> quantile_knots(std::span<const double> values, const SplineSpec& spec);

/// Cox-de Boor evaluation of the degree+1 non-zero basis functions at x.
/// Returns the index of the first of them; `out` receives the values.
int basis_functions(const std::vector<double>& knots, int degree, double x, VectorXd& out);

SplineBasis bspline_basis(std::span<const double> values, const SplineSpec& spec);

/// Replaces each covariate column by its spline design (S+B columns). Covariates
/// listed in `passthrough` are copied unexpanded.
DataSet expand(const DataSet& data, const SplineSpec& spec, std::span<const int> passthrough = {});

}  // namespace cemco
