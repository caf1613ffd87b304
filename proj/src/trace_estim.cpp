#include "nytune/trace_estim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nytune {

std::string to_string(ProbeKind k) { return k == ProbeKind::GAUSSIAN ? "GAUSSIAN" : "RADEMACHER"; }

ProbeSet make_probes(Index n, Index t, ProbeKind kind, std::uint64_t seed) {
  require(n >= 1 && t >= 1, "make_probes: n and t must be positive");
  ProbeSet ps;
  ps.kind = kind;
  ps.seed = seed;
  ps.R.resize(n, t);
  std::mt19937_64 rng(seed);
  if (kind == ProbeKind::GAUSSIAN) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Index j = 0; j < t; ++j)
      for (Index i = 0; i < n; ++i) ps.R(i, j) = nd(rng);
  } else {
    std::bernoulli_distribution bd(0.5);
    for (Index j = 0; j < t; ++j)
      for (Index i = 0; i < n; ++i) ps.R(i, j) = bd(rng) ? 1.0 : -1.0;
  }
  return ps;
}

void validate_probes(const Mat& R, ProbeKind kind) {
  require(R.rows() >= 1 && R.cols() >= 1, "probes: empty probe matrix");
  require(R.allFinite(), "probes: non-finite entry");
  if (kind == ProbeKind::RADEMACHER) {
    require((R.array().abs() == 1.0).all(), "probes: Rademacher entries must be +-1");
    return;
  }
  const double n = static_cast<double>(R.rows());
  if (R.rows() < 30) return;  // too few entries for a moment check
  // 6-sigma bounds on the first two sample moments; a standard normal entry
  // exceeds 8.5 in magnitude with probability ~2e-17, so larger entries mean
  // a different distribution (e.g. a scaled basis vector).
  for (Index j = 0; j < R.cols(); ++j) {
    auto c = R.col(j).array();
    double m1 = c.mean();
    double m2 = c.square().mean();
    bool ok = std::abs(m1) <= 6.0 / std::sqrt(n) && std::abs(m2 - 1.0) <= 6.0 * std::sqrt(2.0 / n) &&
              c.abs().maxCoeff() <= 8.5;
    require(ok, "probes: column " + std::to_string(j) +
                    " is not consistent with zero-mean unit-variance Gaussian entries");
  }
}

ProbeSet probes_from_matrix(Mat R, ProbeKind kind, std::uint64_t seed) {
  validate_probes(R, kind);
  ProbeSet ps;
  ps.R = std::move(R);
  ps.kind = kind;
  ps.seed = seed;
  return ps;
}

double ste_effective_dimension(const Dataset& data, const HyperParams& hp, const ProbeSet& probes) {
  require(probes.n() == data.n(), "ste: probe rows must equal n");
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  Mat Lc = cf.F.chol_C.matrixL();
  Mat P = Lc.triangularView<Eigen::Lower>().solve(cf.F.Phi.transpose() * probes.R);
  return P.squaredNorm() / static_cast<double>(probes.t());
}

double ste_trace_ktilde(const Dataset& data, const HyperParams& hp, const ProbeSet& probes) {
  require(probes.n() == data.n(), "ste: probe rows must equal n");
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  return (cf.F.Phi.transpose() * probes.R).squaredNorm() / static_cast<double>(probes.t());
}

double subsample_trace_ktilde_rows(const Dataset& data, const HyperParams& hp,
                                   const std::vector<Index>& rows) {
  require(!rows.empty(), "subsample trace: p must be at least 1");
  hp.validate();
  Mat Xp(static_cast<Index>(rows.size()), data.d());
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < data.n(), "subsample trace: row index out of range");
    Xp.row(static_cast<Index>(i)) = data.X.row(rows[i]);
  }
  Mat W = pinv_sqrt(kernel_matrix_sym(hp.Z, hp.ls));
  double s = (kernel_matrix(Xp, hp.Z, hp.ls) * W).squaredNorm();
  return static_cast<double>(data.n()) / static_cast<double>(rows.size()) * s;
}

double subsample_trace_ktilde(const Dataset& data, const HyperParams& hp, Index p,
                              std::uint64_t seed) {
  require(p >= 1 && p <= data.n(), "subsample trace: need 1 <= p <= n");
  std::vector<Index> idx(static_cast<size_t>(data.n()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: first p entries form a uniform sample without replacement.
  for (Index i = 0; i < p; ++i) {
    std::uniform_int_distribution<Index> ud(i, data.n() - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(ud(rng))]);
  }
  idx.resize(static_cast<size_t>(p));
  return subsample_trace_ktilde_rows(data, hp, idx);
}

double exact_trace_ktilde(const Dataset& data, const HyperParams& hp) {
  Mat W = pinv_sqrt(kernel_matrix_sym(hp.Z, hp.ls));
  return (kernel_matrix(data.X, hp.Z, hp.ls) * W).squaredNorm();
}

}  // namespace nytune
