#pragma once

#include "cemco/types.hpp"

#include <string>

namespace cemco {

/// Item columns centered and scaled to unit sample standard deviation (N - 1).
/// Covariates are copied unchanged.
DataSet standardize(const DataSet& data);

enum class PcaRuleKind { elbow, fixed, variance };

struct PcaRule {
  PcaRuleKind kind = PcaRuleKind::elbow;
  int m = 5;                 // fixed
  double threshold = 0.9;    // variance: smallest m whose cumulative ratio reaches it
};

struct PcaResult {
  MatrixXd loadings;         // M x M, column c is component c
  VectorXd explained_ratio;  // non-increasing
  MatrixXd scores;           // N x selected
  int selected = 0;
  std::string rule;          // e.g. "elbow", "fixed:5", "variance:0.9"
};

/// Principal components of the correlation matrix of the items. Eigenvectors are
/// signed so their largest-magnitude entry is positive. The elbow keeps the
/// components before the largest ratio between consecutive explained-variance ratios.
PcaResult pca_select(const DataSet& data, const PcaRule& rule);

/// Copy of `data` whose items are the selected scores, named PC1..PCm.
DataSet apply_pca(const DataSet& data, const PcaResult& pca);

std::string pca_json(const PcaResult& pca);

}  // namespace cemco
