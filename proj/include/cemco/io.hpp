#pragma once

#include "cemco/inference.hpp"
#include "cemco/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cemco {

/// Reads a comma-separated table with a header row.
///
/// `item_columns` empty means every column that is not a covariate, `id` or `label`.
/// A column named `id` fills DataSet::item_ids. Rows are numbered from 1, header excluded.
DataSet load_csv(const std::string& path, const std::vector<std::string>& item_columns,
                 const std::vector<std::string>& covariate_columns);
DataSet read_csv(std::istream& in, const std::vector<std::string>& item_columns,
                 const std::vector<std::string>& covariate_columns, const std::string& source = "<stream>");

/// Writes id (when present), items, covariates and an optional label column.
/// Numbers use the shortest text that parses back to the same double.
void save_csv(const std::string& path, const DataSet& data, const std::vector<int>* labels = nullptr);
void write_csv(std::ostream& out, const DataSet& data, const std::vector<int>* labels = nullptr);

/// Everything a CLI run needs; mirrors the --config JSON file.
struct RunConfig {
  ModelConfig model;
  std::string input;
  std::vector<std::string> items;
  std::vector<std::string> centroid_covariates;
  std::vector<std::string> covariance_covariates;
  std::string output;

  int k_min = 1;
  int k_max = 6;

  std::string test_covariate;
  Target target = Target::centroid;
  TestMethod method = TestMethod::lrt;
  int n_boot = 199;
  int boot_restarts = 5;

  int scenario = 1;
  long n = 360;
  std::vector<long> n_grid;
  int reps = 2;
  double beta_scale = 1.0;
  std::vector<std::string> methods;

  std::string pca_rule = "none";  // none | elbow | fixed | variance
  int pca_m = 5;
  double pca_threshold = 0.9;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

/// Covariates to load: centroid names first, then covariance-only names.
std::vector<std::string> covariate_columns(const RunConfig& config);

/// Resolves covariate names against the loaded data into model indices.
ModelConfig resolve_model(const RunConfig& config, const DataSet& data);

/// Contents of a fit.json file.
struct FitFile {
  ModelConfig config;
  ClusterParams params;
  std::vector<double> loglik_trace;
  double final_loglik = 0.0;
  double bic = 0.0;
  bool converged = false;
  int n_iter = 0;
  std::vector<int> assignments;
  MatrixXd responsibilities;
  std::vector<std::string> item_names;
  std::vector<std::string> covariate_names;
};

std::string fit_json(const FitResult& fit, const ModelConfig& config, const DataSet& data);
void save_fit_json(const std::string& path, const FitResult& fit, const ModelConfig& config, const DataSet& data);
FitFile fit_from_json(const std::string& text);
FitFile load_fit_json(const std::string& path);

/// id,cluster,p_1..p_K per item.
std::string assignments_csv(const FitResult& fit, const DataSet& data);

std::string selection_csv(const SelectionTable& table);
std::string test_result_json(const TestResult& result, const DataSet& data);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace cemco
