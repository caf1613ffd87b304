#pragma once

#include "nytune/common.hpp"

namespace nytune {

// Per-dimension Gaussian lengthscales, stored in log space.
struct Lengthscales {
  Vec log_ell;

  Lengthscales() = default;
  explicit Lengthscales(Vec log_ell_) : log_ell(std::move(log_ell_)) {}
  static Lengthscales constant(Index d, double ell);

  Index dim() const { return log_ell.size(); }
  Vec ell() const { return log_ell.array().exp(); }
  void validate() const;
};

inline constexpr Index kDefaultBlockRows = 4096;

// k(x, z) = exp(-1/2 sum_j ((x_j - z_j) / l_j)^2)
double kernel_eval(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& z,
                   const Lengthscales& ls);

// Entry (i, j) = k(A_i, B_j). Rows are processed in blocks of block_rows.
Mat kernel_matrix(const Mat& A, const Mat& B, const Lengthscales& ls,
                  Index block_rows = kDefaultBlockRows);

// Symmetric K(A, A) with exact unit diagonal and mirrored upper triangle.
Mat kernel_matrix_sym(const Mat& A, const Lengthscales& ls,
                      Index block_rows = kDefaultBlockRows);

// k(a_i, a_i) for each row; identically one for the Gaussian kernel.
Vec kernel_diag(const Mat& A, const Lengthscales& ls);

struct KernelGrad {
  Vec log_ell;  // d
  Mat A;        // a x d
  Mat B;        // b x d
};

// Gradients of s = tr(L^T K(A,B) R) w.r.t. log-lengthscales, A and B.
KernelGrad kernel_vjp(const Mat& A, const Mat& B, const Lengthscales& ls,
                      const Mat& L, const Mat& R, Index block_rows = kDefaultBlockRows);

// Produces rows [r0, r0 + rows) of a weight matrix G (rows x b).
using WeightBlockFn = std::function<Mat(Index r0, Index rows)>;

// Gradients of s = sum_ij G_ij K(A,B)_ij where G is supplied block by block.
// Partial sums over row blocks are reduced in block order.
KernelGrad kernel_vjp_weighted(const Mat& A, const Mat& B, const Lengthscales& ls,
                               const WeightBlockFn& weights,
                               Index block_rows = kDefaultBlockRows);

}  // namespace nytune
