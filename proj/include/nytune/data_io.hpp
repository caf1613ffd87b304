#pragma once

#include "nytune/dataset.hpp"
#include "nytune/kernel.hpp"

#include <cstdint>
#include <string>

namespace nytune {

enum class Format { DELIMITED, SPARSE_INDEX_VALUE };

struct Schema {
  char delimiter = ',';
  // Label columns of a delimited row; negative values count from the end.
  std::vector<Index> label_cols = {-1};
  bool header = false;
  // Sparse format: feature count (0 = largest index seen).
  Index n_features = 0;
};

Dataset load_dataset(const std::string& path, Format format, const Schema& schema = {});
// Features first, then label columns, full double precision.
void save_delimited(const std::string& path, const Dataset& ds, char delimiter = ',');

struct SplitSpec {
  double train_frac = 0.7;    // remainder goes to test
  std::optional<Split> fixed;  // overrides the fractional split
};

// Standardizes with train statistics, encodes labels for the task, splits.
Dataset preprocess(const Dataset& ds, Task task, std::uint64_t seed, const SplitSpec& spec = {});

// Uniform random permutation split into sizes round(frac * n) and the rest.
Split random_split(Index n, double train_frac, std::uint64_t seed);

enum class MetricKind { RMSE, NRMSE, CERROR, AUC };
std::string to_string(MetricKind k);
std::string to_string(Task t);

struct MetricValue {
  MetricKind kind;
  double value;
};

MetricValue metric(MetricKind kind, const Mat& predictions, const Mat& targets);

// Known regression function f*(x) = sum_j beta_j k(x, z_j).
struct SyntheticTarget {
  Mat Z;
  Vec beta;
  Lengthscales ls;
  Vec eval(const Mat& X) const;
};

struct SyntheticProblem {
  Dataset data;  // labels f*(X) + sigma * noise
  Vec f_star;    // f*(X) at the fixed design
  SyntheticTarget target;
  double sigma = 0.0;
};

// Fixed design X ~ N(0, I_d); f* a random N-KRR function with m_star centers.
SyntheticProblem make_synthetic(Index n, Index d, double sigma, std::uint64_t seed,
                                Index m_star = 10, double ell_star = 1.0);
// Fresh labels f* + sigma * eps for Monte-Carlo use.
Mat draw_labels(const Vec& f_star, double sigma, std::uint64_t seed);

// Binary labels sign(f*(x) + s * eps) with s calibrated so that the average
// Bayes error of the design is bayes_error. Returns raw labels in {-1, +1}.
struct SyntheticBinary {
  Dataset data;
  SyntheticTarget target;
  double noise_scale = 0.0;
  double bayes_error = 0.0;  // achieved on the design
};
SyntheticBinary make_synthetic_binary(Index n, Index d, double bayes_error, std::uint64_t seed,
                                      Index m_star = 10, double ell_star = 1.0);

std::string preprocess_record_json(const PreprocessRecord& rec);

// 64-bit FNV-1a over the raw bytes of X and Y plus their shapes.
std::uint64_t dataset_hash(const Dataset& ds);

}  // namespace nytune
