#include "cemco/simulation.hpp"

#include "cemco/baselines.hpp"
#include "cemco/engine.hpp"
#include "cemco/format.hpp"
#include "cemco/parallel.hpp"
#include "cemco/rng.hpp"

#include <boost/math/distributions/students_t.hpp>
#include "json.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

namespace cemco {

MatrixXd scenario2_default_beta() {
  MatrixXd b(4, 2);
  b << 0.3, 0.3, -0.3, -0.3, 0.3, -0.3, -0.3, 0.3;
  return b;
}

namespace {

MatrixXd unit_square_centroids() {
  MatrixXd mu(4, 2);
  mu << 0, 0, 0, 1, 1, 0, 1, 1;
  return mu;
}

void check_divisible(long n, long k, const char* name) {
  if (n <= 0 || n % k != 0) {
    throw Error("simulation", std::string(name) + " needs n divisible by " + std::to_string(k) + ", got " +
                                  std::to_string(n));
  }
}

DataSet empty_dataset(long n, long m, long p) {
  DataSet d;
  d.items.resize(n, m);
  d.covariates.resize(n, p);
  for (long r = 0; r < m; ++r) d.item_names.push_back("x" + std::to_string(r + 1));
  for (long l = 0; l < p; ++l) d.covariate_names.push_back("z" + std::to_string(l + 1));
  return d;
}

}  // namespace

std::vector<MatrixXd> scenario1_default_beta() {
  std::vector<MatrixXd> beta(2, MatrixXd::Zero(5, 5));
  const double continuous = 0.1;
  const double binary = 0.2;
  for (int l = 0; l < 5; ++l) {
    const double v = l < 2 ? continuous : binary;
    beta[0].row(l).setConstant(v);
    beta[1].row(l).setConstant(-v);
  }
  return beta;
}

LabeledDataSet gen_scenario1(long n, std::uint64_t seed, const std::optional<std::vector<MatrixXd>>& beta) {
  if (n <= 0 || n % 2 != 0) throw Error("simulation", "scenario 1 needs an even n, got " + std::to_string(n));
  const int k = 2;
  const long m = 5;
  const long p = 5;
  LabeledDataSet out;
  auto& g = out.generator;
  g.scenario = 1;
  g.n = n;
  g.seed = seed;
  g.truth = ClusterParams::zeros(k, m, p, 0);
  g.truth.mu_star.row(1).setConstant(0.2);
  g.truth.beta = beta ? *beta : scenario1_default_beta();
  if (g.truth.beta.size() != 2 || g.truth.beta[0].rows() != p || g.truth.beta[0].cols() != m ||
      g.truth.beta[1].rows() != p || g.truth.beta[1].cols() != m) {
    throw Error("simulation", "scenario 1 beta must be 2 matrices of 5 x 5");
  }
  for (auto& e : g.truth.e) e = 0.03 * MatrixXd::Identity(m, m);
  g.covariate_distributions = {"normal(0,1)", "normal(0,1)", "bernoulli(0.4)", "bernoulli(0.25)", "bernoulli(0.15)"};

  out.data = empty_dataset(n, m, p);
  out.truth.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double probs[3] = {0.4, 0.25, 0.15};
  const double sd = std::sqrt(0.03);
  for (long i = 0; i < n; ++i) {
    const int j = i < n / 2 ? 0 : 1;
    VectorXd z(p);
    z[0] = normal(rng);
    z[1] = normal(rng);
    for (int b = 0; b < 3; ++b) z[2 + b] = std::bernoulli_distribution(probs[b])(rng) ? 1.0 : 0.0;
    VectorXd x = g.truth.mu_star.row(j).transpose() + g.truth.beta[static_cast<std::size_t>(j)].transpose() * z;
    for (long r = 0; r < m; ++r) x[r] += sd * normal(rng);
    out.data.items.row(i) = x.transpose();
    out.data.covariates.row(i) = z.transpose();
    out.truth.labels[static_cast<std::size_t>(i)] = j;
  }
  return out;
}

LabeledDataSet gen_scenario2(long n, std::uint64_t seed, const Scenario2Options& options) {
  check_divisible(n, 4, "scenario 2");
  const int k = 4;
  const long m = 2;
  LabeledDataSet out;
  auto& g = out.generator;
  g.scenario = 2;
  g.n = n;
  g.seed = seed;
  g.truth = ClusterParams::zeros(k, m, 1, 1);
  g.truth.mu_star = unit_square_centroids();
  const MatrixXd beta = options.beta.value_or(scenario2_default_beta());
  VectorXd w(4);
  w << 1, 1, 1, 10;
  if (options.w) w = *options.w;
  if (beta.rows() != k || beta.cols() != m || w.size() != k) {
    throw Error("simulation", "scenario 2 expects beta 4 x 2 and w of length 4");
  }
  for (int j = 0; j < k; ++j) {
    const auto js = static_cast<std::size_t>(j);
    g.truth.beta[js].row(0) = beta.row(j);
    g.truth.gamma[js].row(0).setConstant(w[j]);
    g.truth.e[js] = 0.1 * MatrixXd::Identity(m, m);
  }
  g.covariate_distributions = {"normal(1,1)"};

  out.data = empty_dataset(n, m, 1);
  out.truth.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(0.1);
  const long per = n / k;
  for (long i = 0; i < n; ++i) {
    const int j = static_cast<int>(i / per);
    const auto js = static_cast<std::size_t>(j);
    const double z = 1.0 + normal(rng);
    for (long r = 0; r < m; ++r) {
      const double l = g.truth.sigma(j, r) + g.truth.gamma[js](0, r) * z;
      out.data.items(i, r) = g.truth.mu_star(j, r) + g.truth.beta[js](0, r) * z + l * sd * normal(rng);
    }
    out.data.covariates(i, 0) = z;
    out.truth.labels[static_cast<std::size_t>(i)] = j;
  }
  return out;
}

LabeledDataSet gen_scenario3(long n, std::uint64_t seed, const std::optional<MatrixXd>& beta) {
  check_divisible(n, 4, "scenario 3");
  const int k = 4;
  const long m = 2;
  LabeledDataSet out;
  auto& g = out.generator;
  g.scenario = 3;
  g.n = n;
  g.seed = seed;
  g.quadratic = true;
  g.truth = ClusterParams::zeros(k, m, 1, 0);
  g.truth.mu_star = unit_square_centroids();
  const MatrixXd b = beta.value_or(scenario2_default_beta());
  if (b.rows() != k || b.cols() != m) throw Error("simulation", "scenario 3 expects beta 4 x 2");
  for (int j = 0; j < k; ++j) {
    g.truth.beta[static_cast<std::size_t>(j)].row(0) = b.row(j);
    g.truth.e[static_cast<std::size_t>(j)] = 0.1 * MatrixXd::Identity(m, m);
  }
  g.covariate_distributions = {"normal(1,1)"};

  out.data = empty_dataset(n, m, 1);
  out.truth.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(0.1);
  const long per = n / k;
  for (long i = 0; i < n; ++i) {
    const int j = static_cast<int>(i / per);
    const double z = 1.0 + normal(rng);
    for (long r = 0; r < m; ++r) {
      const double bj = b(j, r);
      out.data.items(i, r) = g.truth.mu_star(j, r) + bj * z + bj * z * z + sd * normal(rng);
    }
    out.data.covariates(i, 0) = z;
    out.truth.labels[static_cast<std::size_t>(i)] = j;
  }
  return out;
}

LabeledDataSet regenerate(const ScenarioParams& params) {
  switch (params.scenario) {
    case 1:
      return gen_scenario1(params.n, params.seed, params.truth.beta);
    case 2: {
      Scenario2Options opt;
      MatrixXd beta(4, 2);
      VectorXd w(4);
      for (int j = 0; j < 4; ++j) {
        beta.row(j) = params.truth.beta[static_cast<std::size_t>(j)].row(0);
        w[j] = params.truth.gamma[static_cast<std::size_t>(j)](0, 0);
      }
      opt.beta = beta;
      opt.w = w;
      return gen_scenario2(params.n, params.seed, opt);
    }
    case 3: {
      MatrixXd beta(4, 2);
      for (int j = 0; j < 4; ++j) beta.row(j) = params.truth.beta[static_cast<std::size_t>(j)].row(0);
      return gen_scenario3(params.n, params.seed, beta);
    }
    default:
      throw Error("simulation", "unknown scenario " + std::to_string(params.scenario));
  }
}

ModelConfig scenario_config(int scenario, int k) {
  ModelConfig c;
  c.k = k;
  switch (scenario) {
    case 1:
      c.centroid_covariates = {0, 1, 2, 3, 4};
      break;
    case 2:
      c.centroid_covariates = {0};
      c.covariance_covariates = {0};
      break;
    case 3:
      c.centroid_covariates = {0};
      c.spline = SplineSpec{1, 3};
      break;
    default:
      throw Error("simulation", "unknown scenario " + std::to_string(scenario));
  }
  return c;
}

double adjusted_rand_index(const Assignment& a, const Assignment& b) {
  if (a.size() != b.size()) throw Error("simulation", "assignments differ in length");
  const auto n = static_cast<double>(a.size());
  auto comb2 = [](double v) { return 0.5 * v * (v - 1.0); };

  std::unordered_map<long long, double> cells;
  std::unordered_map<int, double> rows;
  std::unordered_map<int, double> cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long long key = (static_cast<long long>(a.labels[i]) << 32) ^ static_cast<unsigned>(b.labels[i]);
    cells[key] += 1.0;
    rows[a.labels[i]] += 1.0;
    cols[b.labels[i]] += 1.0;
  }
  double index = 0.0;
  for (const auto& [key, count] : cells) index += comb2(count);
  double sum_rows = 0.0;
  for (const auto& [key, count] : rows) sum_rows += comb2(count);
  double sum_cols = 0.0;
  for (const auto& [key, count] : cols) sum_cols += comb2(count);
  const double total = comb2(n);
  const double expected = total > 0.0 ? sum_rows * sum_cols / total : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  const double denom = max_index - expected;
  if (denom == 0.0) return 1.0;
  return (index - expected) / denom;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::cemco:
      return "cemco";
    case Method::cem:
      return "cem";
    case Method::cem_dimension:
      return "cem_dimension";
    case Method::cem_partial:
      return "cem_partial";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "cemco") return Method::cemco;
  if (s == "cem") return Method::cem;
  if (s == "cem_dimension" || s == "cem-dimension") return Method::cem_dimension;
  if (s == "cem_partial" || s == "cem-partial") return Method::cem_partial;
  throw Error("simulation", "unknown method '" + s + "'");
}

Interval mean_interval(const std::vector<double>& values, double level) {
  Interval out;
  out.count = static_cast<int>(values.size());
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  out.mean = mean;
  if (values.size() < 2) {
    out.lower = out.upper = mean;
    return out;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  const boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(dist, 0.5 + 0.5 * level);
  out.lower = mean - t * se;
  out.upper = mean + t * se;
  return out;
}

int scenario_test_covariate(int scenario) {
  if (scenario < 1 || scenario > 3) throw Error("simulation", "unknown scenario " + std::to_string(scenario));
  return 0;
}

Target scenario_test_target(int scenario) { return scenario == 2 ? Target::covariance : Target::centroid; }

namespace {

LabeledDataSet generate(int scenario, long n, std::uint64_t seed, double beta_scale, bool null_effect) {
  switch (scenario) {
    case 1: {
      auto beta = scenario1_default_beta();
      for (auto& b : beta) b *= null_effect ? 0.0 : beta_scale;
      return gen_scenario1(n, seed, beta);
    }
    case 2: {
      Scenario2Options opt;
      opt.beta = scenario2_default_beta();
      VectorXd w(4);
      w << 1, 1, 1, 10;
      opt.w = null_effect ? VectorXd(VectorXd::Zero(4)) : VectorXd(w * beta_scale);
      return gen_scenario2(n, seed, opt);
    }
    case 3: {
      const MatrixXd beta = scenario2_default_beta() * (null_effect ? 0.0 : beta_scale);
      return gen_scenario3(n, seed, beta);
    }
    default:
      throw Error("simulation", "unknown scenario " + std::to_string(scenario));
  }
}

FitResult run_method(Method method, const DataSet& data, const ModelConfig& config) {
  switch (method) {
    case Method::cemco:
      return fit(data, config);
    case Method::cem:
      return cem_fit(data, config);
    case Method::cem_dimension:
      return cem_dimension_fit(data, config);
    case Method::cem_partial:
      return cem_partial_fit(data, config);
  }
  throw Error("simulation", "unknown method");
}

}  // namespace

BenchmarkReport run_benchmark(const BenchmarkOptions& options) {
  if (options.reps < 2) throw Error("simulation", "benchmark needs reps >= 2");
  if (options.n_grid.empty()) throw Error("simulation", "benchmark needs at least one n");
  BenchmarkReport report;
  report.scenario = options.scenario;
  report.reps = options.reps;
  const int true_k = options.scenario == 1 ? 2 : 4;
  const int covariate = scenario_test_covariate(options.scenario);
  const Target target = scenario_test_target(options.scenario);

  struct Unit {
    long n;
    int rep;
  };
  std::vector<Unit> units;
  for (long n : options.n_grid) {
    for (int rep = 0; rep < options.reps; ++rep) units.push_back({n, rep});
  }
  std::vector<std::vector<BenchmarkRow>> per_unit(units.size());

  parallel_for(units.size(), [&](std::size_t u) {
    const auto [n, rep] = units[u];
    const std::uint64_t data_seed = derive_seed(derive_seed(options.seed, static_cast<std::uint64_t>(n)), 2 * rep);
    const std::uint64_t fit_seed = derive_seed(derive_seed(options.seed, static_cast<std::uint64_t>(n)), 2 * rep + 1);
    auto& rows = per_unit[u];
    for (Method m : options.methods) {
      BenchmarkRow row;
      row.scenario = options.scenario;
      row.n = n;
      row.rep = rep;
      row.method = m;
      rows.push_back(row);
    }
    auto record_error = [&](const std::string& what) {
      for (auto& r : rows) {
        if (!r.error.empty()) r.error += "; ";
        r.error += what;
      }
    };

    LabeledDataSet sample;
    try {
      sample = generate(options.scenario, n, data_seed, options.beta_scale, false);
    } catch (const Error& e) {
      record_error(e.what());
      return;
    }
    ModelConfig config = scenario_config(options.scenario, true_k);
    config.restarts = options.restarts;
    config.seed = fit_seed;

    for (auto& row : rows) {
      try {
        const FitResult f = run_method(row.method, sample.data, config);
        row.ari = adjusted_rand_index(sample.truth, f.assignment);
      } catch (const Error& e) {
        row.error = e.what();
        row.ari = std::nan("");
      }
    }

    std::optional<int> chosen;
    std::optional<double> p1;
    std::optional<double> p0;
    if (options.run_select_k) {
      try {
        chosen = select_k(sample.data, config, options.k_min, options.k_max).chosen_k;
      } catch (const Error& e) {
        record_error(e.what());
      }
    }
    if (options.run_lrt) {
      try {
        p1 = lrt(sample.data, config, covariate, target).p_value;
        const auto null_sample = generate(options.scenario, n, data_seed, options.beta_scale, true);
        p0 = lrt(null_sample.data, config, covariate, target).p_value;
      } catch (const Error& e) {
        record_error(e.what());
      }
    }
    for (auto& row : rows) {
      row.chosen_k = chosen;
      row.p_h1 = p1;
      row.p_h0 = p0;
    }
  });

  for (auto& rows : per_unit) {
    for (auto& r : rows) report.rows.push_back(std::move(r));
  }

  for (long n : options.n_grid) {
    BenchmarkSummary s;
    s.n = n;
    std::map<int, double> cemco_ari;
    std::map<Method, std::map<int, double>> by_method;
    std::map<int, bool> seen_rep;
    for (const auto& r : report.rows) {
      if (r.n != n) continue;
      if (!r.error.empty()) ++s.failures;
      if (std::isfinite(r.ari)) by_method[r.method][r.rep] = r.ari;
      if (!seen_rep[r.rep]) {
        seen_rep[r.rep] = true;
        if (r.chosen_k) ++s.chosen_k_counts[*r.chosen_k];
        if (r.p_h0) s.p_h0.push_back(*r.p_h0);
        if (r.p_h1) s.p_h1.push_back(*r.p_h1);
      }
    }
    const auto cemco_it = by_method.find(Method::cemco);
    if (cemco_it != by_method.end()) {
      for (const auto& [method, aris] : by_method) {
        if (method == Method::cemco) continue;
        std::vector<double> diffs;
        for (const auto& [rep, ari] : aris) {
          const auto c = cemco_it->second.find(rep);
          if (c != cemco_it->second.end()) diffs.push_back(c->second - ari);
        }
        s.ari_difference[to_string(method)] = mean_interval(diffs);
      }
    }
    report.summaries.push_back(std::move(s));
  }
  return report;
}

std::string report_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << "scenario,n,rep,method,ari,chosen_k,p_h0,p_h1\n";
  auto opt = [](const auto& v) { return v ? format_double(static_cast<double>(*v)) : std::string(); };
  for (const auto& r : report.rows) {
    out << r.scenario << ',' << r.n << ',' << r.rep << ',' << to_string(r.method) << ','
        << (std::isfinite(r.ari) ? format_double(r.ari) : std::string()) << ','
        << (r.chosen_k ? std::to_string(*r.chosen_k) : std::string()) << ',' << opt(r.p_h0) << ',' << opt(r.p_h1)
        << '\n';
  }
  return out.str();
}

std::string report_json(const BenchmarkReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["scenario"] = report.scenario;
  j["reps"] = report.reps;
  ordered_json summaries = ordered_json::array();
  for (const auto& s : report.summaries) {
    ordered_json js;
    js["n"] = s.n;
    ordered_json diffs = ordered_json::object();
    for (const auto& [name, iv] : s.ari_difference) {
      diffs[name] = {{"mean", iv.mean}, {"ci90_lower", iv.lower}, {"ci90_upper", iv.upper}, {"count", iv.count}};
    }
    js["ari_difference"] = diffs;
    ordered_json counts = ordered_json::object();
    for (const auto& [k, c] : s.chosen_k_counts) counts[std::to_string(k)] = c;
    js["chosen_k_counts"] = counts;
    js["p_h0"] = s.p_h0;
    js["p_h1"] = s.p_h1;
    js["failures"] = s.failures;
    summaries.push_back(js);
  }
  j["summaries"] = summaries;
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) {
    ordered_json jr;
    jr["n"] = r.n;
    jr["rep"] = r.rep;
    jr["method"] = to_string(r.method);
    jr["ari"] = std::isfinite(r.ari) ? ordered_json(r.ari) : ordered_json(nullptr);
    jr["chosen_k"] = r.chosen_k ? ordered_json(*r.chosen_k) : ordered_json(nullptr);
    jr["p_h0"] = r.p_h0 ? ordered_json(*r.p_h0) : ordered_json(nullptr);
    jr["p_h1"] = r.p_h1 ? ordered_json(*r.p_h1) : ordered_json(nullptr);
    if (!r.error.empty()) jr["error"] = r.error;
    rows.push_back(jr);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace cemco
