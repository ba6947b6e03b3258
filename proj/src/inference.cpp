#include "cemco/inference.hpp"

#include "cemco/engine.hpp"
#include "cemco/model.hpp"
#include "cemco/parallel.hpp"
#include "cemco/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace cemco {

long param_count(int k, long m, long p, const std::optional<SplineSpec>& spline, long pcov, CountMode mode) {
  const long kk = k;
  const long pw = spline ? p * spline->width() : p;
  if (mode == CountMode::published) return kk * (1 + m * (3 + pw) + m * m);
  const long scale = pcov > 0 ? kk * m * (1 + pcov) : 0;
  return kk * (1 + m + m * pw + m * m) + scale;
}

long param_count(const ModelConfig& config, long m) {
  return param_count(config.k, m, static_cast<long>(config.centroid_covariates.size()), config.spline,
                     static_cast<long>(config.covariance_covariates.size()), config.count_mode);
}

double bic(double loglik, long n, long r) {
  if (n < 1) throw Error("inference", "bic needs n >= 1");
  return std::log(static_cast<double>(n)) * static_cast<double>(r) - 2.0 * loglik;
}

double bic(const FitResult& fit, long n, long r) { return bic(fit.final_loglik, n, r); }

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw Error("inference", "chi-square df must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

const char* to_string(Target t) { return t == Target::centroid ? "centroid" : "covariance"; }
const char* to_string(TestMethod m) { return m == TestMethod::lrt ? "lrt" : "bootstrap"; }

namespace {

std::vector<int>& tested_list(ModelConfig& config, Target target) {
  return target == Target::centroid ? config.centroid_covariates : config.covariance_covariates;
}

std::size_t position_of(const std::vector<int>& list, int covariate) {
  const auto it = std::find(list.begin(), list.end(), covariate);
  if (it == list.end()) {
    throw Error("inference", "covariate " + std::to_string(covariate) + " is not active for the tested effect");
  }
  return static_cast<std::size_t>(it - list.begin());
}

Eigen::Index centroid_block_width(const DataSet& data, const ModelConfig& config, int covariate) {
  if (!config.spline) return 1;
  std::set<double> distinct;
  for (Eigen::Index i = 0; i < data.n() && distinct.size() <= 2; ++i) distinct.insert(data.covariates(i, covariate));
  return distinct.size() <= 2 ? 1 : config.spline->width();
}

}  // namespace

ModelConfig null_config(const ModelConfig& config, int covariate, Target target) {
  ModelConfig out = config;
  auto& list = tested_list(out, target);
  list.erase(list.begin() + static_cast<std::ptrdiff_t>(position_of(list, covariate)));
  if (target == Target::centroid && out.centroid_covariates.empty()) out.spline.reset();
  return out;
}

int test_df(const DataSet& data, const ModelConfig& config, int covariate, Target target) {
  const auto& list = target == Target::centroid ? config.centroid_covariates : config.covariance_covariates;
  position_of(list, covariate);
  const long km = static_cast<long>(config.k) * data.m();
  if (target == Target::covariance) return static_cast<int>(km);
  return static_cast<int>(km * centroid_block_width(data, config, covariate));
}

ClusterParams embed_null_params(const DataSet& data, const ModelConfig& config, int covariate, Target target,
                                const ClusterParams& null_params) {
  ClusterParams out = null_params;
  const auto m = data.m();
  if (target == Target::centroid) {
    Eigen::Index offset = 0;
    const auto pos = position_of(config.centroid_covariates, covariate);
    for (std::size_t c = 0; c < pos; ++c) offset += centroid_block_width(data, config, config.centroid_covariates[c]);
    const Eigen::Index width = centroid_block_width(data, config, covariate);
    for (auto& b : out.beta) {
      MatrixXd grown = MatrixXd::Zero(b.rows() + width, m);
      grown.topRows(offset) = b.topRows(offset);
      grown.bottomRows(b.rows() - offset) = b.bottomRows(b.rows() - offset);
      b = std::move(grown);
    }
  } else {
    const auto pos = static_cast<Eigen::Index>(position_of(config.covariance_covariates, covariate));
    for (auto& g : out.gamma) {
      MatrixXd grown = MatrixXd::Zero(g.rows() + 1, m);
      grown.topRows(pos) = g.topRows(pos);
      grown.bottomRows(g.rows() - pos) = g.bottomRows(g.rows() - pos);
      g = std::move(grown);
    }
  }
  return out;
}

namespace {

ClusterParams project_alt_params(const DataSet& data, const ModelConfig& config, int covariate, Target target,
                                 const ClusterParams& alt) {
  ClusterParams out = alt;
  if (target == Target::centroid) {
    Eigen::Index offset = 0;
    const auto pos = position_of(config.centroid_covariates, covariate);
    for (std::size_t c = 0; c < pos; ++c) offset += centroid_block_width(data, config, config.centroid_covariates[c]);
    const Eigen::Index width = centroid_block_width(data, config, covariate);
    for (auto& b : out.beta) {
      MatrixXd shrunk(b.rows() - width, b.cols());
      shrunk.topRows(offset) = b.topRows(offset);
      shrunk.bottomRows(b.rows() - offset - width) = b.bottomRows(b.rows() - offset - width);
      b = std::move(shrunk);
    }
  } else {
    const auto pos = static_cast<Eigen::Index>(position_of(config.covariance_covariates, covariate));
    for (auto& g : out.gamma) {
      MatrixXd shrunk(g.rows() - 1, g.cols());
      shrunk.topRows(pos) = g.topRows(pos);
      shrunk.bottomRows(g.rows() - pos - 1) = g.bottomRows(g.rows() - pos - 1);
      g = std::move(shrunk);
    }
    if (null_config(config, covariate, target).covariance_covariates.empty()) {
      for (int j = 0; j < out.k(); ++j) {
        const auto d = out.sigma.row(j).transpose().asDiagonal();
        out.e[static_cast<std::size_t>(j)] = d * out.e[static_cast<std::size_t>(j)] * d;
      }
      out.sigma.setOnes();
    }
  }
  return out;
}

struct NestedFits {
  FitResult null_fit;
  FitResult alt_fit;
  double statistic = 0.0;
};

NestedFits fit_nested(const DataSet& data, const ModelConfig& config, int covariate, Target target) {
  // Both fits must reject the same partitions, so the null uses the alternative's size floor.
  ModelConfig null_cfg = null_config(config, covariate, target);
  if (null_cfg.min_cluster_items == 0) {
    null_cfg.min_cluster_items = static_cast<long>(min_cluster_size(make_design(data, config), data.m()));
  }
  NestedFits out;
  out.null_fit = fit(data, null_cfg);
  const ClusterParams warm = embed_null_params(data, config, covariate, target, out.null_fit.params);
  out.alt_fit = fit(data, config, std::span<const ClusterParams>(&warm, 1));
  // Restart the null from the alternative's solution so both fits explore the same partitions.
  for (int round = 0; round < 3; ++round) {
    const ClusterParams back = project_alt_params(data, config, covariate, target, out.alt_fit.params);
    FitResult candidate = fit_from(data, null_cfg, back);
    if (candidate.degenerate || candidate.final_loglik <= out.null_fit.final_loglik) break;
    out.null_fit = std::move(candidate);
    FitResult alt = fit_from(data, config, embed_null_params(data, config, covariate, target, out.null_fit.params));
    if (!alt.degenerate && alt.final_loglik > out.alt_fit.final_loglik) out.alt_fit = std::move(alt);
  }
  out.statistic = std::max(0.0, 2.0 * (out.alt_fit.final_loglik - out.null_fit.final_loglik));
  return out;
}

}  // namespace

TestResult lrt(const DataSet& data, const ModelConfig& config, int covariate, Target target) {
  data.validate();
  config.validate(data.p());
  TestResult out;
  out.method = TestMethod::lrt;
  out.target = target;
  out.covariate = covariate;
  out.df = test_df(data, config, covariate, target);
  auto fits = fit_nested(data, config, covariate, target);
  out.statistic_d = fits.statistic;
  out.p_value = std::clamp(chi_square_sf(out.statistic_d, out.df), 0.0, 1.0);
  out.null_fit = std::move(fits.null_fit);
  out.alt_fit = std::move(fits.alt_fit);
  return out;
}

DataSet simulate_from_fit(const DataSet& data, const ModelConfig& config, const ClusterParams& params,
                          std::uint64_t seed, std::vector<int>* labels) {
  const Design design = make_design(data, config);
  const int k = params.k();
  const auto m = data.m();
  Rng rng(seed);
  std::discrete_distribution<int> pick(params.alpha.data(), params.alpha.data() + k);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<MatrixXd> chol(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) chol[static_cast<std::size_t>(j)] = factor_core(params.e[static_cast<std::size_t>(j)]);

  DataSet out = data;
  if (labels) labels->assign(static_cast<std::size_t>(data.n()), 0);
  VectorXd eps(m);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const int j = pick(rng);
    for (Eigen::Index r = 0; r < m; ++r) eps[r] = normal(rng);
    const VectorXd mu = centroid(params, j, design.centroid.row(i).transpose());
    VectorXd l = scale_diagonal(params, j, design.scale.row(i).transpose());
    for (Eigen::Index r = 0; r < m; ++r) l[r] = clamp_scale(l[r], config.scale_floor);
    out.items.row(i) = (mu + l.asDiagonal() * (chol[static_cast<std::size_t>(j)] * eps)).transpose();
    if (labels) (*labels)[static_cast<std::size_t>(i)] = j;
  }
  return out;
}

TestResult bootstrap_test(const DataSet& data, const ModelConfig& config, int covariate, Target target, int n_boot,
                          std::uint64_t seed, int boot_restarts) {
  if (n_boot < 19) throw Error("inference", "bootstrap needs at least 19 samples, got " + std::to_string(n_boot));
  if (boot_restarts < 1) throw Error("inference", "bootstrap restarts must be >= 1");
  data.validate();
  config.validate(data.p());

  TestResult out;
  out.method = TestMethod::bootstrap;
  out.target = target;
  out.covariate = covariate;
  out.df = test_df(data, config, covariate, target);
  auto observed = fit_nested(data, config, covariate, target);
  out.statistic_d = observed.statistic;

  const ModelConfig null_cfg = null_config(config, covariate, target);
  ClusterParams null_params = observed.null_fit.params;
  null_params.alpha.setZero();
  for (int label : observed.null_fit.assignment.labels) null_params.alpha[label] += 1.0;
  null_params.alpha /= static_cast<double>(data.n());

  ModelConfig boot_cfg = config;
  boot_cfg.restarts = boot_restarts;
  std::vector<double> stats(static_cast<std::size_t>(n_boot), 0.0);
  parallel_for(static_cast<std::size_t>(n_boot), [&](std::size_t b) {
    const DataSet sample = simulate_from_fit(data, null_cfg, null_params, derive_seed(seed, 2 * b));
    ModelConfig cfg = boot_cfg;
    cfg.seed = derive_seed(seed, 2 * b + 1);
    try {
      stats[b] = fit_nested(sample, cfg, covariate, target).statistic;
    } catch (const Error&) {
      stats[b] = 0.0;
    }
  });

  const auto exceed = std::count_if(stats.begin(), stats.end(), [&](double d) { return d >= out.statistic_d; });
  out.p_value = (1.0 + static_cast<double>(exceed)) / (static_cast<double>(n_boot) + 1.0);
  out.bootstrap_samples = n_boot;
  out.bootstrap_statistics = std::move(stats);
  out.null_fit = std::move(observed.null_fit);
  out.alt_fit = std::move(observed.alt_fit);
  return out;
}

SelectionTable select_k(const DataSet& data, const ModelConfig& config, int k_min, int k_max) {
  if (k_min < 1 || k_max < k_min) throw Error("inference", "need 1 <= k_min <= k_max");
  if (k_max > data.n()) throw Error("inference", "k_max exceeds the item count");
  SelectionTable table;
  table.rows.resize(static_cast<std::size_t>(k_max - k_min + 1));
  parallel_for(table.rows.size(), [&](std::size_t t) {
    auto& row = table.rows[t];
    row.k = k_min + static_cast<int>(t);
    ModelConfig cfg = config;
    cfg.k = row.k;
    row.param_count = param_count(cfg, data.m());
    try {
      const FitResult f = fit(data, cfg);
      row.final_loglik = f.final_loglik;
      row.bic = f.bic;
      row.usable = std::isfinite(f.bic) && !f.degenerate;
      if (f.degenerate) row.error = "every restart ended degenerate";
    } catch (const Error& e) {
      row.error = e.what();
    }
  });
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : table.rows) {
    if (row.usable && row.bic < best) {
      best = row.bic;
      table.chosen_k = row.k;
    }
  }
  if (table.chosen_k == 0) throw Error("inference", "every candidate k failed to fit");
  return table;
}

}  // namespace cemco
