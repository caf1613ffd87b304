#pragma once

#include "nytune/nystrom.hpp"

#include <array>
#include <optional>
#include <string>

namespace nytune {

enum class ObjectiveId { HOLD_OUT, LOOCV, GCV, CREG, SGPR, PROP };

inline constexpr std::array<ObjectiveId, 6> kAllObjectives = {
    ObjectiveId::HOLD_OUT, ObjectiveId::LOOCV, ObjectiveId::GCV,
    ObjectiveId::CREG,     ObjectiveId::SGPR,  ObjectiveId::PROP};

std::string to_string(ObjectiveId id);
ObjectiveId objective_from_string(const std::string& s);

struct ObjectiveTerms {
  double data_fit = 0.0;
  double complexity = 0.0;
  double trace_gap = 0.0;
  double regularizer = 0.0;
  double noise_scale = 0.0;
};

struct ObjectiveReport {
  ObjectiveId id = ObjectiveId::PROP;
  double value = 0.0;
  ObjectiveTerms terms;
  // Context needed to recombine terms.
  double n = 0.0;
  double lambda = 0.0;
  double reg_factor = 2.0;
};

// Value rebuilt from the terms:
//   HOLD_OUT, LOOCV   data_fit
//   GCV               data_fit / (1 - complexity / n)^2      (complexity = tr H)
//   CREG              data_fit + complexity
//   SGPR              complexity + data_fit + trace_gap / (n lambda)
//                     (complexity = logdet, data_fit = Y^T (K~ + n lambda I)^{-1} Y)
//   PROP              complexity + 2 trace_gap data_fit / (n lambda)
//                     + 2 (data_fit - regularizer) + reg_factor * regularizer
double recombine(const ObjectiveReport& r);

struct ObjectiveOptions {
  double sigma2 = 1.0;          // noise estimate for CREG and PROP
  double prop_reg_factor = 2.0;  // factor on lambda ||f||^2 inside PROP; 1 or 2
  double leverage_guard = 1e-12;
  Index sgpr_max_n = 20000;
};

ObjectiveReport eval_holdout(const Dataset& data, const HyperParams& hp);
ObjectiveReport eval_loocv(const Dataset& data, const HyperParams& hp,
                           const ObjectiveOptions& opt = {});
ObjectiveReport eval_gcv(const Dataset& data, const HyperParams& hp);
ObjectiveReport eval_creg(const Dataset& data, const HyperParams& hp, double sigma2);
ObjectiveReport eval_sgpr(const Dataset& data, const HyperParams& hp,
                          const ObjectiveOptions& opt = {});
ObjectiveReport eval_prop(const Dataset& data, const HyperParams& hp, double sigma2 = 1.0,
                          const ObjectiveOptions& opt = {});

ObjectiveReport evaluate(ObjectiveId id, const Dataset& data, const HyperParams& hp,
                         const ObjectiveOptions& opt = {});

// tr((K~ + n lambda I)^{-1} K~) through the m x m form.
double effective_dimension(const Dataset& data, const HyperParams& hp);
// tr(K - K~) with K~ = K_nm K_mm^+ K_nm^T and tr K = n.
double trace_gap(const Dataset& data, const HyperParams& hp);

struct RegularizedRisk {
  double value = 0.0;  // n^{-1} Y^T (I - H) Y
  double mse = 0.0;    // n^{-1} ||f(X) - Y||^2
  double penalty = 0.0;  // lambda beta^T K_mm beta
};
RegularizedRisk regularized_risk(const Dataset& data, const HyperParams& hp);

}  // namespace nytune
