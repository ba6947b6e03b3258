#include "cemco/io.hpp"

#include "cemco/format.hpp"
#include "cemco/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cemco {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_cell(const std::string& raw, long row, const std::string& column, const std::string& source) {
  const std::string text = trim(raw);
  const std::string where = source + ": row " + std::to_string(row) + ", column '" + column + "'";
  if (text.empty() || text == "NA" || text == "NaN" || text == "nan") throw Error("io", where + ": missing value");
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  double v = 0.0;
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw Error("io", where + ": malformed number '" + text + "'");
  }
  return v;
}

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : cols_if_empty;
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw Error("io", "ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

json model_json(const ModelConfig& c) {
  json j;
  j["k"] = c.k;
  j["centroid_covariates"] = c.centroid_covariates;
  j["covariance_covariates"] = c.covariance_covariates;
  if (c.spline) {
    j["spline"] = {{"knots", c.spline->knots}, {"degree", c.spline->degree}};
  } else {
    j["spline"] = nullptr;
  }
  j["restarts"] = c.restarts;
  j["max_iter"] = c.max_iter;
  j["loglik_rel_tol"] = c.loglik_rel_tol;
  j["seed"] = c.seed;
  j["weight_update"] = c.weight_update == WeightUpdate::hard ? "hard" : "soft";
  j["count_mode"] = c.count_mode == CountMode::published ? "published" : "exact";
  j["scale_floor"] = c.scale_floor;
  return j;
}

void read_model(const json& j, ModelConfig& c) {
  if (j.contains("k")) c.k = j["k"].get<int>();
  if (j.contains("centroid_covariates") && j["centroid_covariates"].is_array() &&
      (j["centroid_covariates"].empty() || j["centroid_covariates"][0].is_number())) {
    c.centroid_covariates = j["centroid_covariates"].get<std::vector<int>>();
  }
  if (j.contains("covariance_covariates") && j["covariance_covariates"].is_array() &&
      (j["covariance_covariates"].empty() || j["covariance_covariates"][0].is_number())) {
    c.covariance_covariates = j["covariance_covariates"].get<std::vector<int>>();
  }
  if (j.contains("spline")) {
    if (j["spline"].is_null()) {
      c.spline.reset();
    } else {
      SplineSpec s;
      s.knots = j["spline"].value("knots", s.knots);
      s.degree = j["spline"].value("degree", s.degree);
      c.spline = s;
    }
  }
  if (j.contains("restarts")) c.restarts = j["restarts"].get<int>();
  if (j.contains("max_iter")) c.max_iter = j["max_iter"].get<int>();
  if (j.contains("loglik_rel_tol")) c.loglik_rel_tol = j["loglik_rel_tol"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("weight_update")) {
    const auto w = j["weight_update"].get<std::string>();
    if (w != "hard" && w != "soft") throw Error("config", "weight_update must be hard or soft");
    c.weight_update = w == "hard" ? WeightUpdate::hard : WeightUpdate::soft;
  }
  if (j.contains("count_mode")) {
    const auto m = j["count_mode"].get<std::string>();
    if (m != "published" && m != "exact") throw Error("config", "count_mode must be published or exact");
    c.count_mode = m == "published" ? CountMode::published : CountMode::exact;
  }
  if (j.contains("scale_floor")) c.scale_floor = j["scale_floor"].get<double>();
}

}  // namespace

DataSet read_csv(std::istream& in, const std::vector<std::string>& item_columns,
                 const std::vector<std::string>& covariate_columns, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error("io", source + ": empty file, header expected");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!index.emplace(header[c], c).second) throw Error("io", source + ": duplicate column '" + header[c] + "'");
  }
  auto locate = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw Error("io", source + ": unknown column '" + name + "'");
    return it->second;
  };

  std::vector<std::size_t> cov_idx;
  for (const auto& name : covariate_columns) cov_idx.push_back(locate(name));
  std::vector<std::string> items = item_columns;
  if (items.empty()) {
    for (const auto& h : header) {
      if (h == "id" || h == "label") continue;
      if (std::find(covariate_columns.begin(), covariate_columns.end(), h) != covariate_columns.end()) continue;
      items.push_back(h);
    }
  }
  if (items.empty()) throw Error("io", source + ": no item columns");
  std::vector<std::size_t> item_idx;
  for (const auto& name : items) item_idx.push_back(locate(name));
  const auto id_it = index.find("id");

  std::vector<std::vector<double>> x_rows;
  std::vector<std::vector<double>> z_rows;
  std::vector<std::string> ids;
  long row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error("io", source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> x;
    for (std::size_t c : item_idx) x.push_back(parse_cell(cells[c], row, header[c], source));
    std::vector<double> z;
    for (std::size_t c : cov_idx) z.push_back(parse_cell(cells[c], row, header[c], source));
    if (id_it != index.end()) ids.push_back(trim(cells[id_it->second]));
    x_rows.push_back(std::move(x));
    z_rows.push_back(std::move(z));
  }
  if (x_rows.empty()) throw Error("io", source + ": no data rows");

  DataSet d;
  const auto n = static_cast<Eigen::Index>(x_rows.size());
  d.items.resize(n, static_cast<Eigen::Index>(item_idx.size()));
  d.covariates.resize(n, static_cast<Eigen::Index>(cov_idx.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index r = 0; r < d.items.cols(); ++r) d.items(i, r) = x_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)];
    for (Eigen::Index l = 0; l < d.covariates.cols(); ++l) {
      d.covariates(i, l) = z_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)];
    }
  }
  d.item_names = items;
  d.covariate_names = covariate_columns;
  d.item_ids = std::move(ids);
  return d;
}

DataSet load_csv(const std::string& path, const std::vector<std::string>& item_columns,
                 const std::vector<std::string>& covariate_columns) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  return read_csv(in, item_columns, covariate_columns, path);
}

void write_csv(std::ostream& out, const DataSet& data, const std::vector<int>* labels) {
  const bool with_ids = !data.item_ids.empty();
  auto name = [](const std::vector<std::string>& names, Eigen::Index c, const char* prefix) {
    return c < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                       : prefix + std::to_string(c + 1);
  };
  std::vector<std::string> header;
  if (with_ids) header.push_back("id");
  for (Eigen::Index r = 0; r < data.m(); ++r) header.push_back(name(data.item_names, r, "x"));
  for (Eigen::Index l = 0; l < data.p(); ++l) header.push_back(name(data.covariate_names, l, "z"));
  if (labels) header.push_back("label");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << quote(header[c]);
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    bool first = true;
    auto sep = [&] {
      if (!first) out << ',';
      first = false;
    };
    if (with_ids) {
      sep();
      out << quote(data.item_ids[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index r = 0; r < data.m(); ++r) {
      sep();
      out << format_double(data.items(i, r));
    }
    for (Eigen::Index l = 0; l < data.p(); ++l) {
      sep();
      out << format_double(data.covariates(i, l));
    }
    if (labels) {
      sep();
      out << (*labels)[static_cast<std::size_t>(i)];
    }
    out << '\n';
  }
}

void save_csv(const std::string& path, const DataSet& data, const std::vector<int>* labels) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write '" + path + "'");
  write_csv(out, data, labels);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write '" + path + "'");
  out << text;
}

// Run configuration -----------------------------------------------------------

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("config", std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j["model"];
      read_model(m, c.model);
      if (m.contains("centroid_covariates") && !m["centroid_covariates"].empty() &&
          m["centroid_covariates"][0].is_string()) {
        c.centroid_covariates = m["centroid_covariates"].get<std::vector<std::string>>();
      }
      if (m.contains("covariance_covariates") && !m["covariance_covariates"].empty() &&
          m["covariance_covariates"][0].is_string()) {
        c.covariance_covariates = m["covariance_covariates"].get<std::vector<std::string>>();
      }
    }
    c.input = j.value("input", c.input);
    if (j.contains("items")) c.items = j["items"].get<std::vector<std::string>>();
    if (j.contains("covariates")) c.centroid_covariates = j["covariates"].get<std::vector<std::string>>();
    if (j.contains("covariance_covariates")) {
      c.covariance_covariates = j["covariance_covariates"].get<std::vector<std::string>>();
    }
    c.output = j.value("output", c.output);
    c.k_min = j.value("k_min", c.k_min);
    c.k_max = j.value("k_max", c.k_max);
    c.test_covariate = j.value("covariate", c.test_covariate);
    if (j.contains("target")) {
      const auto t = j["target"].get<std::string>();
      if (t != "centroid" && t != "covariance") throw Error("config", "target must be centroid or covariance");
      c.target = t == "centroid" ? Target::centroid : Target::covariance;
    }
    if (j.contains("method")) {
      const auto t = j["method"].get<std::string>();
      if (t != "lrt" && t != "bootstrap") throw Error("config", "method must be lrt or bootstrap");
      c.method = t == "lrt" ? TestMethod::lrt : TestMethod::bootstrap;
    }
    c.n_boot = j.value("n_boot", c.n_boot);
    c.boot_restarts = j.value("boot_restarts", c.boot_restarts);
    c.scenario = j.value("scenario", c.scenario);
    c.n = j.value("n", c.n);
    if (j.contains("n_grid")) c.n_grid = j["n_grid"].get<std::vector<long>>();
    c.reps = j.value("reps", c.reps);
    c.beta_scale = j.value("beta_scale", c.beta_scale);
    if (j.contains("methods")) c.methods = j["methods"].get<std::vector<std::string>>();
    c.pca_rule = j.value("pca", c.pca_rule);
    c.pca_m = j.value("pca_m", c.pca_m);
    c.pca_threshold = j.value("pca_threshold", c.pca_threshold);
  } catch (const json::exception& e) {
    throw Error("config", e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_text(path)); }

std::string run_config_to_json(const RunConfig& c) {
  json j;
  json m = model_json(c.model);
  m["centroid_covariates"] = c.centroid_covariates;
  m["covariance_covariates"] = c.covariance_covariates;
  j["model"] = m;
  j["input"] = c.input;
  j["items"] = c.items;
  j["output"] = c.output;
  j["k_min"] = c.k_min;
  j["k_max"] = c.k_max;
  j["covariate"] = c.test_covariate;
  j["target"] = to_string(c.target);
  j["method"] = to_string(c.method);
  j["n_boot"] = c.n_boot;
  j["boot_restarts"] = c.boot_restarts;
  j["scenario"] = c.scenario;
  j["n"] = c.n;
  j["n_grid"] = c.n_grid;
  j["reps"] = c.reps;
  j["beta_scale"] = c.beta_scale;
  j["methods"] = c.methods;
  j["pca"] = c.pca_rule;
  j["pca_m"] = c.pca_m;
  j["pca_threshold"] = c.pca_threshold;
  return j.dump(2) + "\n";
}

std::vector<std::string> covariate_columns(const RunConfig& config) {
  std::vector<std::string> out = config.centroid_covariates;
  for (const auto& name : config.covariance_covariates) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

ModelConfig resolve_model(const RunConfig& config, const DataSet& data) {
  ModelConfig m = config.model;
  auto find = [&](const std::string& name) {
    const auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) throw Error("config", "covariate '" + name + "' not loaded");
    return static_cast<int>(it - data.covariate_names.begin());
  };
  m.centroid_covariates.clear();
  m.covariance_covariates.clear();
  for (const auto& name : config.centroid_covariates) m.centroid_covariates.push_back(find(name));
  for (const auto& name : config.covariance_covariates) m.covariance_covariates.push_back(find(name));
  m.validate(data.p());
  return m;
}

// Fit files -------------------------------------------------------------------

std::string fit_json(const FitResult& fit, const ModelConfig& config, const DataSet& data) {
  const auto& p = fit.params;
  json j;
  j["k"] = p.k();
  j["alpha"] = std::vector<double>(p.alpha.data(), p.alpha.data() + p.alpha.size());
  j["mu_star"] = matrix_json(p.mu_star);
  json beta = json::array();
  for (const auto& b : p.beta) beta.push_back(matrix_json(b));
  j["beta"] = beta;
  j["sigma"] = matrix_json(p.sigma);
  json gamma = json::array();
  for (const auto& g : p.gamma) gamma.push_back(matrix_json(g));
  j["gamma"] = gamma;
  json e = json::array();
  for (const auto& x : p.e) e.push_back(matrix_json(x));
  j["e"] = e;
  j["loglik_trace"] = fit.loglik_trace;
  j["final_loglik"] = fit.final_loglik;
  j["bic"] = fit.bic;
  j["converged"] = fit.converged;
  j["n_iter"] = fit.n_iter;
  j["restart_index"] = fit.restart_index;
  j["assignments"] = fit.assignment.labels;
  j["responsibilities"] = matrix_json(fit.responsibilities.matrix);
  j["seed"] = config.seed;
  json cfg = model_json(config);
  cfg["item_names"] = data.item_names;
  cfg["covariate_names"] = data.covariate_names;
  j["config"] = cfg;
  j["warnings"] = fit.warnings;
  return j.dump(2) + "\n";
}

void save_fit_json(const std::string& path, const FitResult& fit, const ModelConfig& config, const DataSet& data) {
  write_text(path, fit_json(fit, config, data));
}

FitFile fit_from_json(const std::string& text) {
  FitFile f;
  try {
    const json j = json::parse(text);
    read_model(j.at("config"), f.config);
    f.item_names = j["config"].value("item_names", std::vector<std::string>{});
    f.covariate_names = j["config"].value("covariate_names", std::vector<std::string>{});
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    auto& p = f.params;
    p.alpha = Eigen::Map<const VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    p.mu_star = matrix_from(j.at("mu_star"));
    const auto m = p.mu_star.cols();
    for (const auto& b : j.at("beta")) p.beta.push_back(matrix_from(b, m));
    p.sigma = matrix_from(j.at("sigma"));
    for (const auto& g : j.at("gamma")) p.gamma.push_back(matrix_from(g, m));
    for (const auto& e : j.at("e")) p.e.push_back(matrix_from(e));
    f.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
    f.final_loglik = j.at("final_loglik").get<double>();
    f.bic = j.at("bic").get<double>();
    f.converged = j.value("converged", false);
    f.n_iter = j.value("n_iter", 0);
    f.assignments = j.at("assignments").get<std::vector<int>>();
    if (j.contains("responsibilities")) f.responsibilities = matrix_from(j["responsibilities"], p.k());
  } catch (const json::exception& e) {
    throw Error("io", std::string("malformed fit file: ") + e.what());
  }
  f.params.validate();
  return f;
}

FitFile load_fit_json(const std::string& path) { return fit_from_json(read_text(path)); }

std::string assignments_csv(const FitResult& fit, const DataSet& data) {
  std::ostringstream out;
  const auto& resp = fit.responsibilities.matrix;
  out << "id,cluster";
  for (Eigen::Index j = 0; j < resp.cols(); ++j) out << ",p_" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < fit.assignment.labels.size(); ++i) {
    out << (data.item_ids.empty() ? std::to_string(i + 1) : quote(data.item_ids[i])) << ','
        << fit.assignment.labels[i] + 1;
    for (Eigen::Index j = 0; j < resp.cols(); ++j) {
      out << ',' << format_double(resp(static_cast<Eigen::Index>(i), j));
    }
    out << '\n';
  }
  return out.str();
}

std::string selection_csv(const SelectionTable& table) {
  std::ostringstream out;
  out << "k,loglik,param_count,bic,usable,chosen\n";
  for (const auto& row : table.rows) {
    out << row.k << ',' << (row.usable ? format_double(row.final_loglik) : "") << ',' << row.param_count << ','
        << (row.usable ? format_double(row.bic) : "") << ',' << (row.usable ? 1 : 0) << ','
        << (row.k == table.chosen_k ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string test_result_json(const TestResult& r, const DataSet& data) {
  json j;
  j["covariate"] = r.covariate < static_cast<int>(data.covariate_names.size())
                       ? json(data.covariate_names[static_cast<std::size_t>(r.covariate)])
                       : json(r.covariate);
  j["target"] = to_string(r.target);
  j["method"] = to_string(r.method);
  j["statistic_d"] = r.statistic_d;
  j["df"] = r.df;
  j["p_value"] = r.p_value;
  j["null_loglik"] = r.null_fit.final_loglik;
  j["alt_loglik"] = r.alt_fit.final_loglik;
  if (r.bootstrap_samples) {
    j["bootstrap_samples"] = *r.bootstrap_samples;
    j["bootstrap_statistics"] = r.bootstrap_statistics;
  }
  return j.dump(2) + "\n";
}

}  // namespace cemco
