#pragma once

#include "nytune/nystrom.hpp"

#include <cstdint>

namespace nytune {

enum class ProbeKind { GAUSSIAN, RADEMACHER };

std::string to_string(ProbeKind k);

struct ProbeSet {
  Mat R;  // n x t
  ProbeKind kind = ProbeKind::GAUSSIAN;
  std::uint64_t seed = 0;

  Index n() const { return R.rows(); }
  Index t() const { return R.cols(); }
};

// Column j is drawn after columns 0..j-1, so a smaller t yields a prefix.
ProbeSet make_probes(Index n, Index t, ProbeKind kind, std::uint64_t seed);

// Wraps caller-provided probes after checking they plausibly have zero mean
// and unit variance entries of the declared kind; throws ContractError if not.
ProbeSet probes_from_matrix(Mat R, ProbeKind kind, std::uint64_t seed = 0);
void validate_probes(const Mat& R, ProbeKind kind);

// t^{-1} sum_i r_i^T K_nm B^{-1} K_nm^T r_i
double ste_effective_dimension(const Dataset& data, const HyperParams& hp, const ProbeSet& probes);
// t^{-1} sum_i r_i^T K_nm S^{-1} K_nm^T r_i with S the jittered K_mm factor
double ste_trace_ktilde(const Dataset& data, const HyperParams& hp, const ProbeSet& probes);

// (n / p) tr(K_pm K_mm^+ K_pm^T) over p rows drawn without replacement.
double subsample_trace_ktilde(const Dataset& data, const HyperParams& hp, Index p,
                              std::uint64_t seed);
double subsample_trace_ktilde_rows(const Dataset& data, const HyperParams& hp,
                                   const std::vector<Index>& rows);

// Exact tr(K~) with the pseudo-inverse.
double exact_trace_ktilde(const Dataset& data, const HyperParams& hp);

}  // namespace nytune
