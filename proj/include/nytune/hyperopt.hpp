#pragma once

#include "nytune/data_io.hpp"
#include "nytune/grad.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nytune {

struct OptConfig {
  double learning_rate = 0.05;
  Index epochs = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Index early_stop_patience = 1;  // 0 disables early stopping
  std::uint64_t seed = 0;
  bool ste_mode = false;
  Index t = 20;
  ProbeKind probe_kind = ProbeKind::GAUSSIAN;
  bool redraw_probes = false;  // fresh probes every step instead of one set per run
  double sigma2 = 1.0;
  double prop_reg_factor = 2.0;
  double val_frac = 0.6;  // HOLD_OUT validation share of the training data
  bool track_exact = false;  // also record the exact objective at each iterate (STE runs)

  void validate() const;
};

struct TrajectoryRecord {
  Index step = 0;
  double value = 0.0;
  ObjectiveTerms terms;
  double lambda = 0.0;
  double ell_min = 0.0, ell_mean = 0.0, ell_max = 0.0;
  std::optional<double> test_metric;
  std::optional<double> exact_value;
  bool diverged = false;
  std::string message;
  double seconds = 0.0;  // wall clock for the epoch
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
};

struct OptResult {
  HyperParams hp;
  Trajectory trajectory;
  Index best_step = 0;  // epoch whose iterate was returned (0 = hp0, nothing evaluated)
  bool early_stopped = false;
  bool diverged = false;
  std::string diagnostic;
};

HyperParams init_hyperparams(const Dataset& data, Index m, std::uint64_t seed);
// Median pairwise Euclidean distance over at most max_points rows (seeded subsample).
double median_heuristic(const Mat& X, std::uint64_t seed, Index max_points = 2000);

// Optional held-out evaluation recorded in the trajectory.
struct TestEval {
  const Dataset* test = nullptr;
  MetricKind kind = MetricKind::RMSE;
};

OptResult optimize(ObjectiveId id, const Dataset& data, const OptConfig& cfg, const HyperParams& hp0,
                   const TestEval& test = {});

// Generic Adam loop over flat parameters; the callback returns (value, gradient).
// Used by optimize() and directly by tests with closed-form objectives.
using FlatObjective = std::function<std::pair<double, Vec>(const Vec&)>;
struct FlatResult {
  Vec best;
  double best_value = 0.0;
  Index steps = 0;
  std::vector<double> values;
};
FlatResult adam_minimize(const FlatObjective& f, const Vec& x0, const OptConfig& cfg);

Vec logspace(double lo, double hi, Index count);

struct GridCell {
  double lambda = 0.0, ell = 0.0;
  bool ok = false;
  ObjectiveReport report;
  double test_error = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct GridResult {
  ObjectiveId id;
  std::vector<GridCell> cells;  // lambda-major
  Index n_lambda = 0, n_ell = 0;
  Index argmin = -1;            // index into cells, -1 if every cell failed
};

// Evaluates the objective over lambda x ell with a single shared lengthscale and Z fixed.
GridResult grid_search(ObjectiveId id, const Dataset& data, const Vec& lambda_grid, const Vec& ell_grid,
                       const Mat& Z, const ObjectiveOptions& opt = {}, const TestEval& test = {});

}  // namespace nytune
