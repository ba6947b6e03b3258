#include "cemco/splines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cemco {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<double> quantile_knots(std::span<const double> values, const SplineSpec& spec) {
  if (spec.degree < 1 || spec.knots < 0) {
    throw Error("splines", "degree must be >= 1 and knot count >= 0");
  }
  if (values.size() <= static_cast<std::size_t>(spec.width())) {
    throw Error("splines", "need more than " + std::to_string(spec.width()) + " values, got " +
                               std::to_string(values.size()));
  }
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw Error("splines", "non-finite covariate value");
  }
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();

  std::vector<double> knots(static_cast<std::size_t>(spec.degree + 1), lo);
  double prev = lo;
  for (int s = 1; s <= spec.knots; ++s) {
    const double q = quantile_sorted(sorted, static_cast<double>(s) / (spec.knots + 1));
    if (!(q > prev) || !(q < hi)) {
      throw Error("splines", "too few distinct values to place " + std::to_string(spec.knots) +
                                 " interior knots");
    }
    knots.push_back(q);
    prev = q;
  }
  if (!(hi > lo)) throw Error("splines", "covariate is constant; cannot place boundary knots");
  knots.insert(knots.end(), static_cast<std::size_t>(spec.degree + 1), hi);
  return knots;
}

int basis_functions(const std::vector<double>& knots, int degree, double x, VectorXd& out) {
  const int n_basis = static_cast<int>(knots.size()) - degree - 1;
  const double lo = knots[static_cast<std::size_t>(degree)];
  const double hi = knots[static_cast<std::size_t>(n_basis)];
  x = std::clamp(x, lo, hi);

  // Last span whose left knot is <= x; the right boundary belongs to the final span.
  int span = n_basis - 1;
  if (x < hi) {
    span = static_cast<int>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
    span = std::clamp(span, degree, n_basis - 1);
  }

  out.setZero(degree + 1);
  VectorXd left(degree + 1);
  VectorXd right(degree + 1);
  out[0] = 1.0;
  for (int d = 1; d <= degree; ++d) {
    left[d] = x - knots[static_cast<std::size_t>(span + 1 - d)];
    right[d] = knots[static_cast<std::size_t>(span + d)] - x;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double denom = right[r + 1] + left[d - r];
      const double temp = out[r] / denom;
      out[r] = saved + right[r + 1] * temp;
      saved = left[d - r] * temp;
    }
    out[d] = saved;
  }
  return span - degree;
}

VectorXd SplineBasis::evaluate(double x) const {
  const auto n_basis = static_cast<Eigen::Index>(knot_vector.size()) - degree - 1;
  VectorXd row = VectorXd::Zero(n_basis);
  VectorXd local;
  const int first = basis_functions(knot_vector, degree, x, local);
  row.segment(first, degree + 1) = local;
  return row;
}

MatrixXd SplineBasis::evaluate(std::span<const double> values) const {
  const auto n_basis = static_cast<Eigen::Index>(knot_vector.size()) - degree - 1;
  MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(values.size()), n_basis);
  VectorXd local;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int first = basis_functions(knot_vector, degree, values[i], local);
    out.row(static_cast<Eigen::Index>(i)).segment(first, degree + 1) = local.transpose();
  }
  return out;
}

SplineBasis bspline_basis(std::span<const double> values, const SplineSpec& spec) {
  SplineBasis basis;
  basis.degree = spec.degree;
  basis.knot_vector = quantile_knots(values, spec);
  basis.matrix = basis.evaluate(values);
  return basis;
}

DataSet expand(const DataSet& data, const SplineSpec& spec, std::span<const int> passthrough) {
  if (data.p() < 1) throw Error("splines", "expand needs at least one covariate");
  const auto n = data.n();
  std::vector<MatrixXd> blocks;
  std::vector<std::string> names;
  Eigen::Index width = 0;
  for (Eigen::Index l = 0; l < data.p(); ++l) {
    const std::string base = l < static_cast<Eigen::Index>(data.covariate_names.size())
                                 ? data.covariate_names[static_cast<std::size_t>(l)]
                                 : "z" + std::to_string(l + 1);
    const bool pass = std::find(passthrough.begin(), passthrough.end(), static_cast<int>(l)) !=
                      passthrough.end();
    if (pass) {
      blocks.emplace_back(data.covariates.col(l));
      names.push_back(base);
    } else {
      const VectorXd col = data.covariates.col(l);
      const auto basis = bspline_basis(std::span<const double>(col.data(), col.size()), spec);
      blocks.push_back(basis.design());
      for (Eigen::Index b = 0; b < basis.width(); ++b) {
        names.push_back(base + "_bs" + std::to_string(b + 1));
      }
    }
    width += blocks.back().cols();
  }

  DataSet out;
  out.items = data.items;
  out.item_names = data.item_names;
  out.item_ids = data.item_ids;
  out.covariates.resize(n, width);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.covariates.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  out.covariate_names = std::move(names);
  return out;
}

}  // namespace cemco
