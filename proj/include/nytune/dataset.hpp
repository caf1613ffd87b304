#pragma once

#include "nytune/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nytune {

struct Split {
  std::vector<Index> train_idx, val_idx, test_idx;
};

enum class Task { REGRESSION, BINARY, MULTICLASS };

struct PreprocessRecord {
  Task task = Task::REGRESSION;
  std::vector<Index> kept_features;  // columns of the raw design kept after dropping
  std::vector<Index> dropped_features;
  Vec feature_mean, feature_std;     // over kept features, train statistics
  double label_mean = 0.0, label_std = 1.0;
  std::vector<double> classes;       // original label values (BINARY: {neg, pos})
  std::vector<std::string> warnings;
};

struct Dataset {
  Mat X;  // n x d
  Mat Y;  // n x o
  std::optional<Split> split;
  std::optional<PreprocessRecord> prep;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }
  Index o() const { return Y.cols(); }
  void validate() const;
  Dataset subset(const std::vector<Index>& rows) const;
};

}  // namespace nytune
