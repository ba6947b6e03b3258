#include "cemco/preprocess.hpp"

#include "cemco/format.hpp"

#include "json.hpp"

#include <cmath>
#include <numeric>

namespace cemco {

DataSet standardize(const DataSet& data) {
  data.validate();
  if (data.n() < 2) throw Error("preprocess", "standardizing needs at least two items");
  DataSet out = data;
  const double denom = static_cast<double>(data.n() - 1);
  for (Eigen::Index r = 0; r < data.m(); ++r) {
    const double mean = data.items.col(r).mean();
    const VectorXd centered = data.items.col(r).array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / denom);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      const std::string name = r < static_cast<Eigen::Index>(data.item_names.size())
                                   ? data.item_names[static_cast<std::size_t>(r)]
                                   : std::to_string(r + 1);
      throw Error("preprocess", "column '" + name + "' has zero variance");
    }
    out.items.col(r) = centered / sd;
  }
  return out;
}

PcaResult pca_select(const DataSet& data, const PcaRule& rule) {
  data.validate();
  const auto n = data.n();
  const auto m = data.m();
  if (n <= m) throw Error("preprocess", "PCA needs more items than columns");
  const DataSet z = standardize(data);
  const MatrixXd corr = (z.items.transpose() * z.items) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(corr);
  if (eig.info() != Eigen::Success) throw Error("preprocess", "eigendecomposition failed");
  const VectorXd values = eig.eigenvalues().reverse().cwiseMax(0.0);
  MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.sum();
  if (!(total > 0.0)) throw Error("preprocess", "degenerate covariance");
  for (Eigen::Index c = 0; c < m; ++c) {
    Eigen::Index at = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&at);
    if (vectors(at, c) < 0.0) vectors.col(c) *= -1.0;
  }

  PcaResult out;
  out.loadings = vectors;
  out.explained_ratio = values / total;
  const auto& ratio = out.explained_ratio;
  switch (rule.kind) {
    case PcaRuleKind::elbow: {
      // Largest ratio between consecutive explained-variance ratios; a numerically
      // zero successor is an infinite drop and ends the search.
      int best = 1;
      double drop = -1.0;
      const double negligible = 1e-12 * ratio[0];
      for (Eigen::Index c = 0; c + 1 < m; ++c) {
        if (ratio[c + 1] <= negligible) {
          if (ratio[c] > negligible) best = static_cast<int>(c + 1);
          break;
        }
        if (ratio[c] / ratio[c + 1] > drop) {
          drop = ratio[c] / ratio[c + 1];
          best = static_cast<int>(c + 1);
        }
      }
      out.selected = best;
      out.rule = "elbow";
      break;
    }
    case PcaRuleKind::fixed:
      if (rule.m < 1 || rule.m > m) {
        throw Error("preprocess", "fixed component count " + std::to_string(rule.m) + " outside 1.." + std::to_string(m));
      }
      out.selected = rule.m;
      out.rule = "fixed:" + std::to_string(rule.m);
      break;
    case PcaRuleKind::variance: {
      if (!(rule.threshold > 0.0 && rule.threshold <= 1.0)) throw Error("preprocess", "variance threshold must be in (0, 1]");
      double cumulative = 0.0;
      out.selected = static_cast<int>(m);
      for (Eigen::Index c = 0; c < m; ++c) {
        cumulative += ratio[c];
        if (cumulative >= rule.threshold - 1e-12) {
          out.selected = static_cast<int>(c + 1);
          break;
        }
      }
      out.rule = "variance:" + format_double(rule.threshold);
      break;
    }
  }
  out.scores = z.items * vectors.leftCols(out.selected);
  return out;
}

DataSet apply_pca(const DataSet& data, const PcaResult& pca) {
  DataSet out = data;
  out.items = pca.scores;
  out.item_names.clear();
  for (int c = 0; c < pca.selected; ++c) out.item_names.push_back("PC" + std::to_string(c + 1));
  return out;
}

std::string pca_json(const PcaResult& pca) {
  nlohmann::ordered_json j;
  j["rule"] = pca.rule;
  j["selected"] = pca.selected;
  j["explained_ratio"] = std::vector<double>(pca.explained_ratio.data(), pca.explained_ratio.data() + pca.explained_ratio.size());
  auto loadings = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < pca.loadings.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < pca.loadings.cols(); ++c) row.push_back(pca.loadings(r, c));
    loadings.push_back(std::move(row));
  }
  j["loadings"] = loadings;
  return j.dump(2) + "\n";
}

}  // namespace cemco
