#pragma once

#include "nytune/dataset.hpp"
#include "nytune/kernel.hpp"

#include <Eigen/Cholesky>

namespace nytune {

struct HyperParams {
  double log_lambda = 0.0;
  Lengthscales ls;
  Mat Z;  // m x d

  double lambda() const { return std::exp(log_lambda); }
  Index m() const { return Z.rows(); }
  void validate() const;
};

struct NkrrModel {
  Mat beta;  // m x o
  HyperParams hp;
  double jitter = 0.0;      // diagonal shift of the normal matrix actually used
  double kmm_jitter = 0.0;  // shift added to K_mm (jitter = n * lambda * kmm_jitter)
  double residual = 0.0;    // relative residual of the normal equations
};

inline constexpr double kJitterStart = 1e-10;
inline constexpr double kJitterMax = 1e-4;
inline constexpr double kPinvCutoff = 1e-10;
inline constexpr double kResidualTol = 1e-8;

// Factorization shared by fitting, objectives and gradients.
//   S   = K_mm + J I = L L^T          (J escalates from kJitterStart * mean diag)
//   Phi = K_nm L^{-T}
//   C   = Phi^T Phi + n lambda I = Lc Lc^T
// so that (K_nm^T K_nm + n lambda S) = L C L^T and H = Phi C^{-1} Phi^T.
struct NystromFactor {
  Mat A;    // K_nm
  Mat L;    // lower Cholesky factor of S
  Mat Phi;  // n x m
  Eigen::LLT<Mat> chol_C;
  double mu = 0.0;  // n * lambda
  double kmm_jitter = 0.0;

  Index n() const { return A.rows(); }
  Index m() const { return A.cols(); }
  Mat solve_C(const Mat& V) const { return chol_C.solve(V); }
  Mat L_inv_T(const Mat& V) const;   // L^{-T} V
  Mat L_inv(const Mat& V) const;     // L^{-1} V
  Mat beta(const Mat& Y) const;      // (K_nm^T K_nm + mu S)^{-1} K_nm^T Y
  Mat fitted(const Mat& Y) const;    // H Y through Phi
  Vec hat_diag() const;              // diag(H), computed in row blocks
  double effective_dimension() const;  // tr(H) = m - mu tr(C^{-1})
  double trace_ktilde() const;         // ||Phi||_F^2, jittered surrogate of tr(K~)
  double logdet_C() const;
};

// Factor at the first jitter level >= start_level that succeeds.
NystromFactor factorize(const Mat& X, const HyperParams& hp, double start_level = kJitterStart);

// Factor whose coefficients for labels Y pass the normal-equation residual
// check, escalating jitter as needed. This is the factor behind fit().
struct CheckedFactor {
  NystromFactor F;
  Mat beta;
  double residual = 0.0;
};
CheckedFactor factorize_checked(const Mat& X, const Mat& Y, const HyperParams& hp,
                                double start_level = kJitterStart);

NkrrModel fit(const Dataset& data, const HyperParams& hp);
Mat predict(const NkrrModel& model, const Mat& Xq);
Mat hat_apply(const Dataset& data, const HyperParams& hp, const Mat& V);

// W = U_r diag(ev_r)^{-1/2} from the eigendecomposition of a PSD matrix, with
// eigenvalues below cutoff * max eigenvalue discarded. K_mm^+ = W W^T.
Mat pinv_sqrt(const Mat& Kmm, double cutoff = kPinvCutoff);
Mat pinv_sym(const Mat& M, double cutoff);

// Diagnostics for the alternative formulations (dense, small n).
double check_kernel_equivalence(const Dataset& data, const HyperParams& hp);
// Predictions through the projected-operator form V (V* S V + n lambda I)^{-1} V* Phi* Y.
Mat predict_projected_form(const Dataset& data, const HyperParams& hp, const Mat& Xq);

}  // namespace nytune
