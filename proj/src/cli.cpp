#include "cemco/cli.hpp"

#include "cemco/engine.hpp"
#include "cemco/inference.hpp"
#include "cemco/io.hpp"
#include "cemco/preprocess.hpp"
#include "cemco/simulation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>

namespace cemco {

namespace {

using json = nlohmann::ordered_json;
using Apply = std::function<void(RunConfig&)>;

/// Registers a flag whose value, when given, overrides the --config file.
template <class T, class Setter>
CLI::Option* flag(CLI::App* app, std::vector<Apply>& appliers, const std::string& name, const std::string& help,
                  Setter setter) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(name, *value, help);
  appliers.push_back([opt, value, setter](RunConfig& c) {
    if (opt->count() > 0) setter(c, *value);
  });
  return opt;
}

using Names = std::vector<std::string>;

void data_flags(CLI::App* app, std::vector<Apply>& a) {
  flag<std::string>(app, a, "--input", "input CSV", [](RunConfig& c, const std::string& v) { c.input = v; });
  flag<Names>(app, a, "--items", "item columns (default: all non-covariate columns)",
              [](RunConfig& c, const Names& v) { c.items = v; })
      ->delimiter(',');
  flag<Names>(app, a, "--covariates", "covariates acting on centroids",
              [](RunConfig& c, const Names& v) { c.centroid_covariates = v; })
      ->delimiter(',');
  flag<Names>(app, a, "--covariance-covariates", "covariates acting on covariance scales",
              [](RunConfig& c, const Names& v) { c.covariance_covariates = v; })
      ->delimiter(',');
}

void model_flags(CLI::App* app, std::vector<Apply>& a) {
  flag<int>(app, a, "--k", "number of clusters", [](RunConfig& c, int v) { c.model.k = v; });
  flag<int>(app, a, "--spline-knots", "interior knots of a B-spline centroid effect", [](RunConfig& c, int v) {
    if (!c.model.spline) c.model.spline = SplineSpec{};
    c.model.spline->knots = v;
  });
  flag<int>(app, a, "--spline-degree", "degree of a B-spline centroid effect", [](RunConfig& c, int v) {
    if (!c.model.spline) c.model.spline = SplineSpec{};
    c.model.spline->degree = v;
  });
  flag<int>(app, a, "--max-iter", "EM iteration cap", [](RunConfig& c, int v) { c.model.max_iter = v; });
  flag<double>(app, a, "--tol", "relative log-likelihood tolerance",
               [](RunConfig& c, double v) { c.model.loglik_rel_tol = v; });
  flag<std::string>(app, a, "--weights", "mixture weight update: soft or hard", [](RunConfig& c, const std::string& v) {
    c.model.weight_update = v == "hard" ? WeightUpdate::hard : WeightUpdate::soft;
  })->check(CLI::IsMember({"soft", "hard"}));
  flag<std::string>(app, a, "--count", "BIC parameter count: published or exact", [](RunConfig& c, const std::string& v) {
    c.model.count_mode = v == "exact" ? CountMode::exact : CountMode::published;
  })->check(CLI::IsMember({"published", "exact"}));
}

void output_flag(CLI::App* app, std::vector<Apply>& a, const std::string& help) {
  flag<std::string>(app, a, "--output", help, [](RunConfig& c, const std::string& v) { c.output = v; });
}

struct Loaded {
  DataSet data;
  ModelConfig model;
};

Loaded load_inputs(const RunConfig& c) {
  if (c.input.empty()) throw Error("cli", "--input is required");
  Loaded l;
  l.data = load_csv(c.input, c.items, covariate_columns(c));
  l.model = resolve_model(c, l.data);
  return l;
}

std::filesystem::path output_dir(const RunConfig& c) {
  std::filesystem::path dir = c.output.empty() ? std::filesystem::path(".") : std::filesystem::path(c.output);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_or_print(const RunConfig& c, const std::string& text, std::ostream& out) {
  if (c.output.empty()) {
    out << text;
  } else {
    write_text(c.output, text);
  }
}

int run_fit(const RunConfig& c, std::ostream& out) {
  const Loaded in = load_inputs(c);
  const FitResult f = fit(in.data, in.model);
  const auto dir = output_dir(c);
  save_fit_json((dir / "fit.json").string(), f, in.model, in.data);
  write_text((dir / "assignments.csv").string(), assignments_csv(f, in.data));
  json j;
  j["k"] = in.model.k;
  j["final_loglik"] = f.final_loglik;
  j["bic"] = f.bic;
  j["converged"] = f.converged;
  j["n_iter"] = f.n_iter;
  j["fit"] = (dir / "fit.json").string();
  j["assignments"] = (dir / "assignments.csv").string();
  out << j.dump() << '\n';
  return 0;
}

int run_select_k(const RunConfig& c, std::ostream& out) {
  const Loaded in = load_inputs(c);
  const SelectionTable table = select_k(in.data, in.model, c.k_min, c.k_max);
  const auto dir = output_dir(c);
  write_text((dir / "selection.csv").string(), selection_csv(table));
  json j;
  j["chosen_k"] = table.chosen_k;
  j["table"] = (dir / "selection.csv").string();
  out << j.dump() << '\n';
  return 0;
}

int run_test(const RunConfig& c, std::ostream& out) {
  const Loaded in = load_inputs(c);
  if (c.test_covariate.empty()) throw Error("cli", "--covariate is required");
  const auto& names = in.data.covariate_names;
  const auto it = std::find(names.begin(), names.end(), c.test_covariate);
  if (it == names.end()) throw Error("cli", "covariate '" + c.test_covariate + "' is not in the model");
  const int l = static_cast<int>(it - names.begin());
  const TestResult r = c.method == TestMethod::lrt
                           ? lrt(in.data, in.model, l, c.target)
                           : bootstrap_test(in.data, in.model, l, c.target, c.n_boot, in.model.seed, c.boot_restarts);
  write_or_print(c, test_result_json(r, in.data), out);
  return 0;
}

int run_simulate(const RunConfig& c, std::ostream& out) {
  LabeledDataSet s;
  switch (c.scenario) {
    case 1: {
      auto beta = scenario1_default_beta();
      for (auto& b : beta) b *= c.beta_scale;
      s = gen_scenario1(c.n, c.model.seed, beta);
      break;
    }
    case 2:
      s = gen_scenario2(c.n, c.model.seed);
      break;
    case 3:
      s = gen_scenario3(c.n, c.model.seed, MatrixXd(scenario2_default_beta() * c.beta_scale));
      break;
    default:
      throw Error("cli", "scenario must be 1, 2 or 3");
  }
  std::ostringstream text;
  write_csv(text, s.data, &s.truth.labels);
  write_or_print(c, text.str(), out);
  return 0;
}

int run_benchmark_command(const RunConfig& c, std::ostream& out) {
  BenchmarkOptions o;
  o.scenario = c.scenario;
  o.n_grid = c.n_grid.empty() ? std::vector<long>{c.n} : c.n_grid;
  o.reps = c.reps;
  if (!c.methods.empty()) {
    o.methods.clear();
    for (const auto& m : c.methods) o.methods.push_back(method_from_string(m));
  }
  o.seed = c.model.seed;
  o.restarts = c.model.restarts;
  o.k_min = c.k_min;
  o.k_max = c.k_max;
  o.beta_scale = c.beta_scale;
  const BenchmarkReport report = run_benchmark(o);
  const std::string prefix = c.output.empty() ? "benchmark" : c.output;
  write_text(prefix + ".csv", report_csv(report));
  write_text(prefix + ".json", report_json(report));
  json j;
  j["csv"] = prefix + ".csv";
  j["json"] = prefix + ".json";
  out << j.dump() << '\n';
  return 0;
}

int run_preprocess(const RunConfig& c, const std::string& pca_json_path, std::ostream& out) {
  if (c.input.empty()) throw Error("cli", "--input is required");
  DataSet data = standardize(load_csv(c.input, c.items, covariate_columns(c)));
  if (c.pca_rule != "none") {
    PcaRule rule;
    if (c.pca_rule == "elbow") {
      rule.kind = PcaRuleKind::elbow;
    } else if (c.pca_rule == "fixed") {
      rule.kind = PcaRuleKind::fixed;
      rule.m = c.pca_m;
    } else if (c.pca_rule == "variance") {
      rule.kind = PcaRuleKind::variance;
      rule.threshold = c.pca_threshold;
    } else {
      throw Error("cli", "--pca must be none, elbow, fixed or variance");
    }
    const PcaResult pca = pca_select(data, rule);
    data = apply_pca(data, pca);
    if (!pca_json_path.empty()) write_text(pca_json_path, pca_json(pca));
  }
  std::ostringstream text;
  write_csv(text, data);
  write_or_print(c, text.str(), out);
  return 0;
}

void report_error(std::ostream& err, const std::string& module, const std::string& message) {
  json j;
  j["error"] = {{"module", module}, {"message", message}};
  err << j.dump() << '\n';
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model-based clustering with covariate effects on centroids and covariances", "cemco"};
  app.require_subcommand(1);
  app.fallthrough();
  std::vector<Apply> global;
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration; flags override it");
  flag<std::uint64_t>(&app, global, "--seed", "random seed", [](RunConfig& c, std::uint64_t v) { c.model.seed = v; });
  flag<int>(&app, global, "--restarts", "EM restarts", [](RunConfig& c, int v) { c.model.restarts = v; });

  std::vector<Apply> local;
  auto* fit_cmd = app.add_subcommand("fit", "fit one model and write fit.json and assignments.csv");
  data_flags(fit_cmd, local);
  model_flags(fit_cmd, local);
  output_flag(fit_cmd, local, "output directory");

  auto* select_cmd = app.add_subcommand("select-k", "choose the cluster count by BIC");
  data_flags(select_cmd, local);
  model_flags(select_cmd, local);
  output_flag(select_cmd, local, "output directory");
  flag<int>(select_cmd, local, "--k-min", "smallest k", [](RunConfig& c, int v) { c.k_min = v; });
  flag<int>(select_cmd, local, "--k-max", "largest k", [](RunConfig& c, int v) { c.k_max = v; });

  auto* test_cmd = app.add_subcommand("test-covariate", "test one covariate effect");
  data_flags(test_cmd, local);
  model_flags(test_cmd, local);
  output_flag(test_cmd, local, "result JSON (default stdout)");
  flag<std::string>(test_cmd, local, "--covariate", "covariate under test",
                    [](RunConfig& c, const std::string& v) { c.test_covariate = v; });
  flag<std::string>(test_cmd, local, "--target", "centroid or covariance", [](RunConfig& c, const std::string& v) {
    c.target = v == "covariance" ? Target::covariance : Target::centroid;
  })->check(CLI::IsMember({"centroid", "covariance"}));
  flag<std::string>(test_cmd, local, "--method", "lrt or bootstrap", [](RunConfig& c, const std::string& v) {
    c.method = v == "bootstrap" ? TestMethod::bootstrap : TestMethod::lrt;
  })->check(CLI::IsMember({"lrt", "bootstrap"}));
  flag<int>(test_cmd, local, "--n-boot", "bootstrap samples", [](RunConfig& c, int v) { c.n_boot = v; });
  flag<int>(test_cmd, local, "--boot-restarts", "restarts per bootstrap refit",
            [](RunConfig& c, int v) { c.boot_restarts = v; });

  auto* sim_cmd = app.add_subcommand("simulate", "write a labeled simulated dataset");
  output_flag(sim_cmd, local, "output CSV (default stdout)");
  flag<int>(sim_cmd, local, "--scenario", "1, 2 or 3", [](RunConfig& c, int v) { c.scenario = v; });
  flag<long>(sim_cmd, local, "--n", "item count", [](RunConfig& c, long v) { c.n = v; });
  flag<double>(sim_cmd, local, "--beta-scale", "multiplier on the centroid effects (scenarios 1, 3)",
               [](RunConfig& c, double v) { c.beta_scale = v; });

  auto* bench_cmd = app.add_subcommand("benchmark", "simulation benchmark against the CEM baselines");
  output_flag(bench_cmd, local, "output prefix for .csv and .json (default benchmark)");
  flag<int>(bench_cmd, local, "--scenario", "1, 2 or 3", [](RunConfig& c, int v) { c.scenario = v; });
  flag<std::vector<long>>(bench_cmd, local, "--n", "item counts", [](RunConfig& c, const std::vector<long>& v) {
    c.n_grid = v;
  })->delimiter(',');
  flag<int>(bench_cmd, local, "--reps", "repetitions per item count", [](RunConfig& c, int v) { c.reps = v; });
  flag<Names>(bench_cmd, local, "--methods", "cemco,cem,cem-dimension,cem-partial",
              [](RunConfig& c, const Names& v) { c.methods = v; })
      ->delimiter(',');
  flag<int>(bench_cmd, local, "--k-min", "smallest k for BIC selection", [](RunConfig& c, int v) { c.k_min = v; });
  flag<int>(bench_cmd, local, "--k-max", "largest k for BIC selection", [](RunConfig& c, int v) { c.k_max = v; });
  flag<double>(bench_cmd, local, "--beta-scale", "multiplier on the centroid effects",
               [](RunConfig& c, double v) { c.beta_scale = v; });

  auto* pre_cmd = app.add_subcommand("preprocess", "standardize items and optionally reduce them by PCA");
  data_flags(pre_cmd, local);
  output_flag(pre_cmd, local, "output CSV (default stdout)");
  flag<std::string>(pre_cmd, local, "--pca", "none, elbow, fixed or variance",
                    [](RunConfig& c, const std::string& v) { c.pca_rule = v; })
      ->check(CLI::IsMember({"none", "elbow", "fixed", "variance"}));
  flag<int>(pre_cmd, local, "--m", "component count for --pca fixed", [](RunConfig& c, int v) { c.pca_m = v; });
  flag<double>(pre_cmd, local, "--threshold", "cumulative ratio for --pca variance",
               [](RunConfig& c, double v) { c.pca_threshold = v; });
  std::string pca_json_path;
  pre_cmd->add_option("--pca-json", pca_json_path, "write the PCA result here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    report_error(err, "cli", e.what());
    return 2;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& apply : global) apply(config);
    for (const auto& apply : local) apply(config);
    if (fit_cmd->parsed()) return run_fit(config, out);
    if (select_cmd->parsed()) return run_select_k(config, out);
    if (test_cmd->parsed()) return run_test(config, out);
    if (sim_cmd->parsed()) return run_simulate(config, out);
    if (bench_cmd->parsed()) return run_benchmark_command(config, out);
    return run_preprocess(config, pca_json_path, out);
  } catch (const Error& e) {
    report_error(err, e.module(), e.what());
  } catch (const std::exception& e) {
    report_error(err, "cli", e.what());
  }
  return 1;
}

}  // namespace cemco
