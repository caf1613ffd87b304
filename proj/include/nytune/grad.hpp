#pragma once

#include "nytune/objectives.hpp"
#include "nytune/trace_estim.hpp"

#include <string>
#include <vector>

namespace nytune {

struct HpGradient {
  double d_log_lambda = 0.0;
  Vec d_log_ell;
  Mat d_Z;

  bool all_finite() const;
};

// Flat layout shared by the optimizer and finite differences:
// [log_lambda, log_ell (d), Z row-major (m*d)].
Vec hp_to_vector(const HyperParams& hp);
HyperParams hp_from_vector(const Vec& theta, Index m, Index d);
Vec grad_to_vector(const HpGradient& g);

struct GradOptions {
  ObjectiveOptions obj;
  bool ste = false;                  // trace terms from probes instead of exact traces
  const ProbeSet* probes = nullptr;  // required when ste is set
  double jitter_start = kJitterStart;  // relative K_mm jitter tried first
};

struct GradResult {
  ObjectiveReport report;
  HpGradient grad;
};

// Value and gradient of the objective as computed here: K_mm enters through the
// jittered Cholesky factor used by fit(), and in STE mode the probe-based
// traces replace the exact ones. HOLD_OUT and LOOCV have no trace terms.
GradResult grad_objective(ObjectiveId id, const Dataset& data, const HyperParams& hp,
                          const GradOptions& opt = {});
ObjectiveReport value_objective(ObjectiveId id, const Dataset& data, const HyperParams& hp,
                                const GradOptions& opt = {});

struct GradCheckReport {
  std::vector<std::string> coord;  // "log_lambda", "log_ell[j]", "Z[i,j]"
  std::vector<double> analytic, numeric, rel_err;
  double max_rel_err = 0.0;
  double step = 0.0, tol = 0.0;
  bool passed = false;
  // Set when the comparison fails at a step large enough that truncation error
  // of the central difference, not the analytic gradient, is the likely cause.
  bool discretization_suspect = false;
  std::vector<std::string> flagged;
};

// Central differences in the flat coordinates. Relative error per coordinate is
// |a - f| / max(|a|, |f|, floor) with floor = 1e-6 max_k |a_k| guarding
// coordinates whose gradient vanishes.
GradCheckReport grad_check(ObjectiveId id, const Dataset& data, const HyperParams& hp,
                           double step = 1e-5, double tol = 1e-4, const GradOptions& opt = {});

}  // namespace nytune
