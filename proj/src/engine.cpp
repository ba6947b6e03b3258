#include "cemco/engine.hpp"

#include "cemco/inference.hpp"
#include "cemco/parallel.hpp"
#include "cemco/rng.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

namespace cemco {

namespace {

std::vector<Eigen::Index> sample_distinct(Eigen::Index n, int k, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (int t = 0; t < k; ++t) {
    std::uniform_int_distribution<Eigen::Index> pick(t, n - 1);
    std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

VectorXd column_variances(const MatrixXd& x) {
  const VectorXd mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - mean.transpose();
  VectorXd var = centered.colwise().squaredNorm() / static_cast<double>(x.rows());
  return var.cwiseMax(1e-12);
}

MatrixXd with_intercept(const MatrixXd& z) {
  MatrixXd a(z.rows(), z.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(z.cols()) = z;
  return a;
}

/// Makes a symmetric matrix positive definite by adding growing ridges.
MatrixXd make_positive_definite(MatrixXd e) {
  e = 0.5 * (e + e.transpose());
  double ridge = 1e-8;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::LLT<MatrixXd> llt(e);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) return e;
    e.diagonal().array() += ridge;
    ridge *= 10.0;
  }
  throw NotPositiveDefiniteError("could not regularize E");
}

/// Scale matrix rows l_i = a_i theta^T with the floor applied.
MatrixXd scale_rows(const MatrixXd& a, const MatrixXd& theta, double floor) {
  MatrixXd l = a * theta.transpose();
  l = l.unaryExpr([floor](double v) { return std::abs(v) < floor ? clamp_scale(v, floor) : v; });
  return l;
}

/// Weighted log-likelihood of one cluster as a function of its scale parameters
/// theta (row r = (sigma_r, gamma_{1,r}, ..., gamma_{Pcov,r})).
struct ScaleProblem {
  MatrixXd resid;  // N x M, x_i - mu_ij
  MatrixXd a;      // N x (1 + Pcov)
  MatrixXd prec;   // E^{-1}
  VectorXd w;
  double floor = 1e-6;

  double value(const MatrixXd& theta) const {
    const auto n = resid.rows();
    const auto m = resid.cols();
    const auto width = a.cols();
    std::vector<double> u(static_cast<std::size_t>(m));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      double log_l = 0.0;
      for (Eigen::Index r = 0; r < m; ++r) {
        double l = 0.0;
        for (Eigen::Index c = 0; c < width; ++c) l += a(i, c) * theta(r, c);
        if (std::abs(l) < floor) l = clamp_scale(l, floor);
        log_l += std::log(std::abs(l));
        u[static_cast<std::size_t>(r)] = resid(i, r) / l;
      }
      double quad = 0.0;
      for (Eigen::Index r = 0; r < m; ++r) {
        double row = 0.0;
        for (Eigen::Index c = 0; c < m; ++c) row += prec(r, c) * u[static_cast<std::size_t>(c)];
        quad += u[static_cast<std::size_t>(r)] * row;
      }
      total += w[i] * (log_l + 0.5 * quad);
    }
    return -total;
  }

  void derivatives(const MatrixXd& theta, MatrixXd& gradient, MatrixXd& hessian) const {
    const auto m = resid.cols();
    const auto width = a.cols();
    const MatrixXd raw = a * theta.transpose();
    const MatrixXd l = scale_rows(a, theta, floor);
    // Clamped entries do not move with theta.
    const MatrixXd live = (raw.array().abs() >= floor).cast<double>();
    const MatrixXd u = resid.array() / l.array();
    const MatrixXd v = u * prec;
    const MatrixXd g = live.array() * (u.array() * v.array() - 1.0) / l.array();
    gradient = (g.array().colwise() * w.array()).matrix().transpose() * a;

    hessian.setZero(m * width, m * width);
    VectorXd c(resid.rows());
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index s = r; s < m; ++s) {
        c = -(u.col(r).array() * u.col(s).array() * prec(r, s)) / (l.col(r).array() * l.col(s).array());
        if (r == s) c.array() += (1.0 - 2.0 * u.col(r).array() * v.col(r).array()) / l.col(r).array().square();
        c.array() *= w.array() * live.col(r).array() * live.col(s).array();
        const MatrixXd block = a.transpose() * (a.array().colwise() * c.array()).matrix();
        hessian.block(r * width, s * width, width, width) = block;
        if (s != r) hessian.block(s * width, r * width, width, width) = block.transpose();
      }
    }
  }

  /// The objective is -inf wherever l_ir crosses zero at an item, which splits the
  /// (sigma, gamma) space into basins Newton cannot leave. For each dimension and
  /// covariate, scans directions of (sigma_r, gamma_lr) with the overall scale of
  /// row r solved in closed form, and moves to the best direction found.
  MatrixXd scan_directions(MatrixXd theta, int grid = 36) const {
    const auto n = resid.rows();
    const auto m = resid.cols();
    const auto width = a.cols();
    const double total_w = w.sum();
    if (width < 2 || total_w <= 0.0) return theta;
    VectorXd spread(width);
    for (Eigen::Index c = 1; c < width; ++c) {
      const double mean = a.col(c).mean();
      const double sd = std::sqrt((a.col(c).array() - mean).square().sum() / static_cast<double>(n));
      spread(c) = sd > 0.0 ? sd : 1.0;
    }
    MatrixXd u = resid.array() / scale_rows(a, theta, floor).array();
    // Items with negligible weight cannot move the score; the caller re-checks the full objective.
    const double w_cut = 1e-10 * w.maxCoeff();
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] > w_cut) active.push_back(i);
    }
    VectorXd v(n), cross(n);
    for (Eigen::Index r = 0; r < m; ++r) {
      // Coupling of dimension r with the other, fixed dimensions.
      cross = u * prec.col(r) - u.col(r) * prec(r, r);
      // Score of row `row` of theta with its scale chosen optimally; returns the scale too.
      auto score = [&](const Eigen::RowVectorXd& row, double& t_best) {
        v.noalias() = a * row.transpose();
        double log_v = 0.0, quad = 0.0, lin = 0.0;
        for (const Eigen::Index i : active) {
          const double av = std::abs(v[i]);
          if (av < floor) return -std::numeric_limits<double>::infinity();
          const double ai = resid(i, r) / v[i];
          log_v += w[i] * std::log(av);
          quad += w[i] * prec(r, r) * ai * ai;
          lin += w[i] * ai * cross[i];
        }
        if (!(quad > 0.0)) return -std::numeric_limits<double>::infinity();
        t_best = (-lin + std::sqrt(lin * lin + 4.0 * quad * total_w)) / (2.0 * quad);
        return total_w * std::log(t_best) - log_v - 0.5 * quad * t_best * t_best - lin * t_best;
      };
      double t_now = 1.0;
      double best = score(theta.row(r), t_now);
      Eigen::RowVectorXd best_row = theta.row(r);
      double best_t = t_now;
      for (Eigen::Index c = 1; c < width; ++c) {
        double norm = std::hypot(theta(r, 0), theta(r, c) * spread(c));
        if (!(norm > 0.0)) norm = 1.0;
        const Eigen::RowVectorXd base = theta.row(r);
        double best_phi = std::numeric_limits<double>::quiet_NaN();
        auto try_phi = [&](double phi) {
          Eigen::RowVectorXd row = base;
          row(0) = norm * std::cos(phi);
          row(c) = norm * std::sin(phi) / spread(c);
          double t = 1.0;
          const double s = score(row, t);
          if (s > best) {
            best = s;
            best_row = row;
            best_t = t;
            best_phi = phi;
          }
        };
        // Coarse sweep of the full circle, then successively finer sweeps around the winner.
        double step = std::numbers::pi / grid;
        for (int g = 0; g < 2 * grid; ++g) try_phi(step * g);
        for (int level = 0; level < 3 && !std::isnan(best_phi); ++level) {
          const double centre = best_phi;
          step /= 4.0;
          for (int g = -3; g <= 3; ++g) {
            if (g != 0) try_phi(centre + step * g);
          }
        }
      }
      theta.row(r) = best_row / best_t;
      u.col(r) = resid.col(r).array() / (a * theta.row(r).transpose()).unaryExpr([this](double x) {
        return std::abs(x) < floor ? clamp_scale(x, floor) : x;
      }).array();
    }
    return theta;
  }
};

ScaleProblem make_scale_problem(const DataSet& data, const Design& design, const ClusterParams& params,
                                const Eigen::Ref<const VectorXd>& weights, int j, double floor) {
  const auto js = static_cast<std::size_t>(j);
  ScaleProblem prob;
  prob.resid = data.items.rowwise() - params.mu_star.row(j);
  if (design.centroid.cols() > 0) prob.resid.noalias() -= design.centroid * params.beta[js];
  prob.a = with_intercept(design.scale);
  const MatrixXd chol = factor_core(params.e[js]);
  const MatrixXd chol_inv = chol.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(chol.rows(), chol.cols()));
  prob.prec = chol_inv.transpose() * chol_inv;
  prob.w = weights;
  prob.floor = floor;
  return prob;
}

MatrixXd scale_theta(const ClusterParams& params, int j) {
  const auto& g = params.gamma[static_cast<std::size_t>(j)];
  MatrixXd theta(params.m(), g.rows() + 1);
  theta.col(0) = params.sigma.row(j).transpose();
  theta.rightCols(g.rows()) = g.transpose();
  return theta;
}

/// Weighted least squares for (mu*, beta) of one cluster; E cancels when every
/// item shares the same covariance.
void update_location_homoscedastic(const DataSet& data, const Design& design, const VectorXd& w,
                                   ClusterParams& params, int j) {
  const auto js = static_cast<std::size_t>(j);
  const double total = w.sum();
  const auto q = design.centroid.cols();
  if (q == 0) {
    params.mu_star.row(j) = (w.transpose() * data.items) / total;
    return;
  }

  std::vector<Eigen::Index> active;
  MatrixXd target = data.items;
  for (Eigen::Index l = 0; l < q; ++l) {
    const double ss = (w.array() * design.centroid.col(l).array().square()).sum();
    if (ss > 1e-14 * total) {
      active.push_back(l);
    } else {
      target.noalias() -= design.centroid.col(l) * params.beta[js].row(l);
    }
  }
  const auto width = static_cast<Eigen::Index>(active.size()) + 1;
  MatrixXd a(data.n(), width);
  a.col(0).setOnes();
  for (Eigen::Index c = 1; c < width; ++c) a.col(c) = design.centroid.col(active[static_cast<std::size_t>(c - 1)]);

  const MatrixXd aw = a.array().colwise() * w.array();
  const MatrixXd gram = aw.transpose() * a;
  const MatrixXd rhs = aw.transpose() * target;
  const MatrixXd coef = gram.completeOrthogonalDecomposition().solve(rhs);

  params.mu_star.row(j) = coef.row(0);
  for (Eigen::Index c = 1; c < width; ++c) params.beta[js].row(active[static_cast<std::size_t>(c - 1)]) = coef.row(c);
}

/// Generalized least squares for (mu*, beta) when the item covariances differ
/// through L_ij: normal equations sum_i w_i (a_i a_i^T) kron Sigma_ij^{-1}.
void update_location_heteroscedastic(const DataSet& data, const Design& design, const VectorXd& w,
                                     ClusterParams& params, int j, double floor) {
  const auto js = static_cast<std::size_t>(j);
  const auto m = data.m();
  const double total = w.sum();
  const auto q = design.centroid.cols();

  std::vector<Eigen::Index> active;
  MatrixXd target = data.items;
  for (Eigen::Index l = 0; l < q; ++l) {
    const double ss = (w.array() * design.centroid.col(l).array().square()).sum();
    if (ss > 1e-14 * total) {
      active.push_back(l);
    } else {
      target.noalias() -= design.centroid.col(l) * params.beta[js].row(l);
    }
  }
  const auto width = static_cast<Eigen::Index>(active.size()) + 1;
  MatrixXd a(data.n(), width);
  a.col(0).setOnes();
  for (Eigen::Index c = 1; c < width; ++c) a.col(c) = design.centroid.col(active[static_cast<std::size_t>(c - 1)]);

  const MatrixXd inv_l = scale_rows(with_intercept(design.scale), scale_theta(params, j), floor).cwiseInverse();
  const MatrixXd chol = factor_core(params.e[js]);
  const MatrixXd chol_inv = chol.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(m, m));

  // Whitened least squares: row block i is sqrt(w_i) C^{-1} L_i^{-1} applied to x_i and to
  // (a_i^T kron I). QR on the stacked system stays accurate when some L_i are tiny.
  const auto dim = width * m;
  MatrixXd x(data.n() * m, dim);
  VectorXd y(data.n() * m);
  MatrixXd g(m, m);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    g = std::sqrt(w[i]) * (chol_inv * inv_l.row(i).transpose().asDiagonal());
    y.segment(i * m, m) = g * target.row(i).transpose();
    for (Eigen::Index p = 0; p < width; ++p) x.block(i * m, p * m, m, m) = a(i, p) * g;
  }
  const VectorXd coef = x.colPivHouseholderQr().solve(y);
  params.mu_star.row(j) = coef.segment(0, m).transpose();
  for (Eigen::Index p = 1; p < width; ++p) {
    params.beta[js].row(active[static_cast<std::size_t>(p - 1)]) = coef.segment(p * m, m).transpose();
  }
}

void update_core(const DataSet& data, const Design& design, const VectorXd& w, ClusterParams& params, int j,
                 double floor) {
  const auto js = static_cast<std::size_t>(j);
  MatrixXd u = data.items.rowwise() - params.mu_star.row(j);
  if (design.centroid.cols() > 0) u.noalias() -= design.centroid * params.beta[js];
  if (design.scale.cols() > 0) {
    u.array() /= scale_rows(with_intercept(design.scale), scale_theta(params, j), floor).array();
  }
  const MatrixXd uw = u.array().colwise() * w.array();
  params.e[js] = make_positive_definite((uw.transpose() * u) / w.sum());
}

struct StartSpec {
  ClusterParams params;
  bool seeded = false;
};

}  // namespace

// Initialization ------------------------------------------------------------

ClusterParams init_random(const DataSet& data, const Design& design, int k, std::uint64_t seed) {
  if (k < 1) throw Error("engine", "k must be >= 1");
  if (k > data.n()) {
    throw Error("engine", "cannot place " + std::to_string(k) + " clusters on " + std::to_string(data.n()) + " items");
  }
  Rng rng(seed);
  const auto idx = sample_distinct(data.n(), k, rng);
  ClusterParams p = ClusterParams::zeros(k, data.m(), design.centroid.cols(), design.scale.cols());
  const MatrixXd e0 = column_variances(data.items).asDiagonal();
  for (int j = 0; j < k; ++j) {
    p.mu_star.row(j) = data.items.row(idx[static_cast<std::size_t>(j)]);
    p.e[static_cast<std::size_t>(j)] = e0;
  }
  return p;
}

ClusterParams init_random(const DataSet& data, const ModelConfig& config, std::uint64_t seed) {
  data.validate();
  config.validate(data.p());
  return init_random(data, make_design(data, config), config.k, seed);
}

ClusterParams init_residual(const DataSet& data, const Design& design, int k, std::uint64_t seed, double shrink,
                            bool* fell_back) {
  if (fell_back) *fell_back = false;
  const auto q = design.centroid.cols();
  if (q == 0) throw Error("engine", "init_residual needs at least one centroid covariate");
  if (!(shrink >= 0.0 && shrink <= 2.0)) throw Error("engine", "shrink must lie in [0, 2]");
  if (k > data.n()) {
    throw Error("engine", "cannot place " + std::to_string(k) + " clusters on " + std::to_string(data.n()) + " items");
  }

  const MatrixXd a = with_intercept(design.centroid);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
  if (qr.rank() < a.cols()) {
    if (fell_back) *fell_back = true;
    return init_random(data, design, k, seed);
  }
  MatrixXd slope = MatrixXd::Zero(q, data.m());
  MatrixXd resid = data.items;
  if (shrink != 0.0) {
    slope = shrink * qr.solve(data.items).bottomRows(q);
    resid.noalias() -= design.centroid * slope;
  }

  Rng rng(seed);
  const auto idx = sample_distinct(data.n(), k, rng);
  ClusterParams p = ClusterParams::zeros(k, data.m(), q, design.scale.cols());
  const MatrixXd e0 = column_variances(resid).asDiagonal();
  for (int j = 0; j < k; ++j) {
    p.mu_star.row(j) = resid.row(idx[static_cast<std::size_t>(j)]);
    p.beta[static_cast<std::size_t>(j)] = slope;
    p.e[static_cast<std::size_t>(j)] = e0;
  }
  return p;
}

ClusterParams init_residual(const DataSet& data, const ModelConfig& config, std::uint64_t seed, double shrink) {
  data.validate();
  config.validate(data.p());
  return init_residual(data, make_design(data, config), config.k, seed, shrink);
}

// Steps ----------------------------------------------------------------------

EStepResult e_step(const DataSet& data, const Design& design, const ClusterParams& params, double scale_floor) {
  const MatrixXd logw = weighted_log_densities(data, design, params, FloorPolicy::clamp, scale_floor);
  const auto n = logw.rows();
  const auto k = logw.cols();
  EStepResult out;
  out.responsibilities.matrix.resize(n, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logw.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out.responsibilities.matrix.row(i).setConstant(1.0 / static_cast<double>(k));
      ++out.underflow_items;
      total += mx;
      continue;
    }
    const Eigen::RowVectorXd shifted = (logw.row(i).array() - mx).exp();
    const double s = shifted.sum();
    out.responsibilities.matrix.row(i) = shifted / s;
    total += mx + std::log(s);
  }
  out.loglik = total;
  return out;
}

Responsibilities e_step(const DataSet& data, const ClusterParams& params, const ModelConfig& config) {
  data.validate();
  config.validate(data.p());
  return e_step(data, make_design(data, config), params, config.scale_floor).responsibilities;
}

Assignment c_step(const Responsibilities& resp) {
  const auto& p = resp.matrix;
  Assignment a;
  a.labels.resize(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < p.cols(); ++j) {
      if (p(i, j) > p(i, best)) best = static_cast<int>(j);
    }
    a.labels[static_cast<std::size_t>(i)] = best;
  }
  return a;
}

double scale_objective(const DataSet& data, const Design& design, const ClusterParams& params,
                       const Eigen::Ref<const VectorXd>& weights, int j, double scale_floor) {
  const auto prob = make_scale_problem(data, design, params, weights, j, scale_floor);
  return prob.value(scale_theta(params, j));
}

void scale_derivatives(const DataSet& data, const Design& design, const ClusterParams& params,
                       const Eigen::Ref<const VectorXd>& weights, int j, MatrixXd& gradient, MatrixXd& hessian,
                       double scale_floor) {
  const auto prob = make_scale_problem(data, design, params, weights, j, scale_floor);
  prob.derivatives(scale_theta(params, j), gradient, hessian);
}

NewtonResult newton_L(const DataSet& data, const Design& design, const ClusterParams& params,
                      const Responsibilities& resp, int j, const ModelConfig& config) {
  if (design.scale.cols() == 0) throw Error("engine", "newton_L needs active covariance covariates");
  const VectorXd w = resp.matrix.col(j);
  const auto prob = make_scale_problem(data, design, params, w, j, config.scale_floor);
  MatrixXd theta = scale_theta(params, j);
  const auto rows = theta.rows();
  const auto cols = theta.cols();

  NewtonResult out;
  out.objective_before = prob.value(theta);
  {
    const MatrixXd scanned = prob.scan_directions(theta);
    if (prob.value(scanned) > out.objective_before) theta = scanned;
  }
  double f = prob.value(theta);
  const double grad_scale = std::max(1.0, w.sum());

  MatrixXd gradient;
  MatrixXd hessian;
  for (int it = 0; it < config.max_newton_iter; ++it) {
    prob.derivatives(theta, gradient, hessian);
    if (gradient.cwiseAbs().maxCoeff() <= config.newton_grad_tol * grad_scale) {
      out.converged = true;
      break;
    }
    // Flatten with row r of theta contiguous, matching the Hessian layout.
    VectorXd g(rows * cols);
    for (Eigen::Index r = 0; r < rows; ++r) g.segment(r * cols, cols) = gradient.row(r).transpose();

    MatrixXd neg_h = -0.5 * (hessian + hessian.transpose());
    Eigen::LLT<MatrixXd> llt(neg_h);
    if (llt.info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(neg_h, Eigen::EigenvaluesOnly);
      const double lo = eig.eigenvalues().minCoeff();
      const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
      neg_h.diagonal().array() += std::max(0.0, -lo) + 1e-8 * std::max(1.0, hi);
      llt.compute(neg_h);
    }
    const VectorXd step_flat = llt.info() == Eigen::Success ? VectorXd(llt.solve(g)) : VectorXd(g);
    // Newton decrement: the predicted gain is below what the objective can resolve.
    if (0.5 * g.dot(step_flat) <= 1e-12 * std::max(1.0, std::abs(f))) {
      out.converged = true;
      break;
    }
    MatrixXd step(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) step.row(r) = step_flat.segment(r * cols, cols).transpose();

    double t = 1.0;
    bool accepted = false;
    MatrixXd candidate;
    double f_new = f;
    const double step_size = step.cwiseAbs().maxCoeff();
    const double theta_size = 1.0 + theta.cwiseAbs().maxCoeff();
    for (int h = 0; h <= config.newton_max_halvings; ++h, t *= 0.5) {
      if (t * step_size < 1e-14 * theta_size) break;
      candidate = theta + t * step;
      f_new = prob.value(candidate);
      if (std::isfinite(f_new) && f_new >= f) {
        accepted = true;
        break;
      }
    }
    out.iterations = it + 1;
    if (!accepted) {
      out.converged = gradient.cwiseAbs().maxCoeff() <= 1e3 * config.newton_grad_tol * grad_scale;
      break;
    }
    const double moved = (t * step).cwiseAbs().maxCoeff();
    theta = candidate;
    f = f_new;
    if (moved < 1e-13) {
      out.converged = true;
      break;
    }
  }

  out.objective_after = f;
  out.sigma = theta.col(0);
  out.gamma = theta.rightCols(cols - 1).transpose();
  return out;
}

NewtonResult newton_L(const DataSet& data, const ClusterParams& params, const Responsibilities& resp, int j,
                      const ModelConfig& config) {
  data.validate();
  config.validate(data.p());
  return newton_L(data, make_design(data, config), params, resp, j, config);
}

ClusterParams m_step(const DataSet& data, const Design& design, const EmState& state, const ModelConfig& config,
                     std::vector<std::string>* warnings) {
  ClusterParams next = state.params;
  const int k = next.k();
  const auto n = data.n();
  const auto& resp = state.responsibilities.matrix;
  const bool heteroscedastic = design.scale.cols() > 0;

  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int label : state.assignment.labels) counts[static_cast<std::size_t>(label)] += 1.0;

  for (int j = 0; j < k; ++j) {
    const VectorXd w = resp.col(j);
    if (!(w.sum() > 1e-10)) continue;
    // Each block must not lower this cluster's expected log-likelihood; a block that
    // does (a nearly singular core on a tiny cluster, round-off) is undone.
    auto expected = [&] {
      const double q = w.dot(component_log_densities(data.items, design, next, j, FloorPolicy::clamp, config.scale_floor));
      return std::isnan(q) ? -std::numeric_limits<double>::infinity() : q;
    };
    double q = expected();
    auto keep_if_better = [&](const ClusterParams& before) {
      const double q_new = expected();
      if (q_new >= q) {
        q = q_new;
      } else {
        next = before;
      }
    };
    {
      const ClusterParams before = next;
      if (heteroscedastic) {
        update_location_heteroscedastic(data, design, w, next, j, config.scale_floor);
      } else {
        update_location_homoscedastic(data, design, w, next, j);
      }
      keep_if_better(before);
    }
    {
      const ClusterParams before = next;
      update_core(data, design, w, next, j, config.scale_floor);
      keep_if_better(before);
    }
    if (heteroscedastic) {
      const ClusterParams before = next;
      const auto nr = newton_L(data, design, next, state.responsibilities, j, config);
      next.sigma.row(j) = nr.sigma.transpose();
      next.gamma[static_cast<std::size_t>(j)] = nr.gamma;
      keep_if_better(before);
      if (!nr.converged && warnings) {
        warnings->push_back("newton_L did not converge for cluster " + std::to_string(j));
      }
    }
  }

  const double nd = static_cast<double>(n);
  for (int j = 0; j < k; ++j) {
    next.alpha[j] = config.weight_update == WeightUpdate::hard ? counts[static_cast<std::size_t>(j)] / nd
                                                               : resp.col(j).sum() / nd;
  }

  // Clusters that lost every item restart at the worst-explained items.
  std::vector<int> empty;
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0.0) empty.push_back(j);
  }
  if (!empty.empty()) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const VectorXd best = resp.rowwise().maxCoeff();
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return best[a] < best[b]; });
    const MatrixXd e0 = column_variances(data.items).asDiagonal();
    double reseeded = 0.0;
    for (std::size_t t = 0; t < empty.size(); ++t) {
      const int j = empty[t];
      const auto js = static_cast<std::size_t>(j);
      next.mu_star.row(j) = data.items.row(order[t % order.size()]);
      next.beta[js].setZero();
      next.sigma.row(j).setOnes();
      next.gamma[js].setZero();
      next.e[js] = e0;
      next.alpha[j] = 0.0;
      reseeded += 1.0 / nd;
      if (warnings) warnings->push_back("re-seeded empty cluster " + std::to_string(j));
    }
    const double rest = next.alpha.sum();
    if (rest > 0.0) next.alpha *= (1.0 - reseeded) / rest;
    for (int j : empty) next.alpha[j] = 1.0 / nd;
  }
  next.alpha /= next.alpha.sum();

#ifndef NDEBUG
  assert(std::abs(next.alpha.sum() - 1.0) < 1e-10);
  for (const auto& e : next.e) {
    Eigen::LLT<MatrixXd> llt(e);
    assert(llt.info() == Eigen::Success);
  }
#endif
  return next;
}

ClusterParams m_step(const DataSet& data, const EmState& state, const ModelConfig& config) {
  data.validate();
  config.validate(data.p());
  return m_step(data, make_design(data, config), state, config);
}

// Driver ---------------------------------------------------------------------

Eigen::Index min_cluster_size(const Design& design, Eigen::Index m) {
  Eigen::Index count = (design.centroid.cols() + 1) * m + m * (m + 1) / 2;
  if (design.scale.cols() > 0) count += (design.scale.cols() + 1) * m;
  return count;
}

FitResult fit_from(const DataSet& data, const Design& design, const ModelConfig& config, const ClusterParams& start) {
  if (start.k() != config.k || start.m() != data.m() || start.centroid_width() != design.centroid.cols() ||
      start.scale_width() != design.scale.cols()) {
    throw Error("engine", "starting parameters do not match the data and config");
  }
  FitResult result;
  EmState state;
  state.params = start;
  for (int it = 0;; ++it) {
    auto es = e_step(data, design, state.params, config.scale_floor);
    state.responsibilities = std::move(es.responsibilities);
    state.loglik = es.loglik;
    state.iteration = it;
    if (!std::isfinite(state.loglik)) throw Error("engine", "log-likelihood became non-finite");
#ifndef NDEBUG
    assert(((state.responsibilities.matrix.rowwise().sum().array() - 1.0).abs() < 1e-10).all());
#endif
    const bool have_prev = !result.loglik_trace.empty();
    const double prev = have_prev ? result.loglik_trace.back() : 0.0;
    result.loglik_trace.push_back(state.loglik);
    if (es.underflow_items > 0) {
      result.warnings.push_back(std::to_string(es.underflow_items) + " items underflowed in every component");
    }
    if (have_prev && std::abs(state.loglik - prev) <= config.loglik_rel_tol * std::abs(prev)) {
      result.converged = true;
      break;
    }
    if (it >= config.max_iter) break;
    state.assignment = c_step(state.responsibilities);
    state.params = m_step(data, design, state, config, &result.warnings);
    result.n_iter = it + 1;
  }
  result.assignment = c_step(state.responsibilities);
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(config.k), 0);
  for (int label : result.assignment.labels) ++sizes[static_cast<std::size_t>(label)];
  const auto smallest = *std::min_element(sizes.begin(), sizes.end());
  const Eigen::Index floor_size =
      config.min_cluster_items > 0 ? config.min_cluster_items : min_cluster_size(design, data.m());
  if (smallest < floor_size) {
    result.degenerate = true;
    result.warnings.push_back("a cluster ended with " + std::to_string(smallest) + " items, fewer than " +
                              std::to_string(floor_size));
  }
  result.responsibilities = std::move(state.responsibilities);
  result.params = std::move(state.params);
  result.final_loglik = result.loglik_trace.back();
  result.bic = bic(result.final_loglik, data.n(), param_count(config, data.m()));
  return result;
}

FitResult fit_from(const DataSet& data, const ModelConfig& config, const ClusterParams& start) {
  data.validate();
  config.validate(data.p());
  return fit_from(data, make_design(data, config), config, start);
}

FitResult fit(const DataSet& data, const ModelConfig& config, std::span<const ClusterParams> extra_starts) {
  data.validate();
  config.validate(data.p());
  if (config.k > data.n()) {
    throw Error("engine", "k = " + std::to_string(config.k) + " exceeds the item count " + std::to_string(data.n()));
  }
  const Design design = make_design(data, config);
  const std::size_t seeded = static_cast<std::size_t>(config.restarts);
  const std::size_t total = seeded + extra_starts.size();

  std::vector<std::optional<FitResult>> runs(total);
  std::vector<std::string> errors(total);
  parallel_for(total, [&](std::size_t r) {
    try {
      ClusterParams start;
      if (r < seeded) {
        const std::uint64_t seed = config.seed + r;
        start = (r == 0 && design.centroid.cols() > 0) ? init_residual(data, design, config.k, seed, 1.0)
                                                       : init_random(data, design, config.k, seed);
      } else {
        start = extra_starts[r - seeded];
      }
      runs[r] = fit_from(data, design, config, start);
      runs[r]->restart_index = static_cast<int>(r);
    } catch (const Error& e) {
      errors[r] = e.what();
    }
  });

  // Non-degenerate runs always beat degenerate ones; within a class the highest likelihood wins.
  std::optional<std::size_t> best;
  int failed = 0;
  int degenerate = 0;
  for (std::size_t r = 0; r < total; ++r) {
    if (!runs[r]) {
      ++failed;
      continue;
    }
    if (runs[r]->degenerate) ++degenerate;
    if (!best) {
      best = r;
      continue;
    }
    const auto& a = *runs[r];
    const auto& b = *runs[*best];
    if (a.degenerate != b.degenerate ? !a.degenerate : a.final_loglik > b.final_loglik) best = r;
  }
  if (!best) throw Error("engine", "all restarts failed (degenerate data?): " + errors.front());

  FitResult out = std::move(*runs[*best]);
  out.failed_restarts = failed;
  if (out.degenerate) out.warnings.push_back("every restart ended degenerate");
  else if (degenerate > 0) out.warnings.push_back(std::to_string(degenerate) + " degenerate restarts discarded");
  const long r = param_count(config, data.m());
  if (r > data.n()) {
    out.warnings.push_back("parameter count " + std::to_string(r) + " exceeds item count " +
                           std::to_string(data.n()));
  }
  return out;
}

}  // namespace cemco
