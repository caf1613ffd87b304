#include "nytune/kernel.hpp"

#include <cmath>
#include <vector>

namespace nytune {

Lengthscales Lengthscales::constant(Index d, double ell) {
  require(d >= 1, "lengthscales: d must be >= 1");
  require(ell > 0 && std::isfinite(ell), "lengthscales: ell must be positive and finite");
  return Lengthscales(Vec::Constant(d, std::log(ell)));
}

void Lengthscales::validate() const {
  require(log_ell.size() >= 1, "lengthscales: d must be >= 1");
  require(log_ell.allFinite(), "lengthscales: non-finite log lengthscale");
}

namespace {

// Points as columns (d x a) so each point is contiguous.
Mat transposed(const Mat& A) { return A.transpose(); }

inline double sqdist_scaled(const double* a, const double* b, const double* inv, Index d) {
  double s = 0.0;
  for (Index k = 0; k < d; ++k) {
    double t = (a[k] - b[k]) * inv[k];
    s += t * t;
  }
  return s;
}

void check_shapes(const Mat& A, const Mat& B, const Lengthscales& ls) {
  ls.validate();
  require(A.rows() >= 1 && B.rows() >= 1, "kernel: empty point set");
  require(A.cols() == ls.dim() && B.cols() == ls.dim(), "kernel: dimension mismatch");
}

Index num_blocks(Index rows, Index block) { return (rows + block - 1) / block; }

}  // namespace

double kernel_eval(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& z,
                   const Lengthscales& ls) {
  ls.validate();
  require(x.size() == ls.dim() && z.size() == ls.dim(), "kernel_eval: dimension mismatch");
  Vec inv = (-ls.log_ell).array().exp();
  Vec xv = x, zv = z;
  return std::exp(-0.5 * sqdist_scaled(xv.data(), zv.data(), inv.data(), ls.dim()));
}

Mat kernel_matrix(const Mat& A, const Mat& B, const Lengthscales& ls, Index block_rows) {
  check_shapes(A, B, ls);
  require(block_rows >= 1, "kernel_matrix: block size must be positive");
  const Index a = A.rows(), b = B.rows(), d = ls.dim();
  Vec inv = (-ls.log_ell).array().exp();
  Mat At = transposed(A), Bt = transposed(B);
  Mat K(a, b);
  parallel_blocks(num_blocks(a, block_rows), [&](Index blk) {
    Index r0 = blk * block_rows, r1 = std::min(a, r0 + block_rows);
    for (Index j = 0; j < b; ++j) {
      const double* bj = Bt.col(j).data();
      for (Index i = r0; i < r1; ++i)
        K(i, j) = std::exp(-0.5 * sqdist_scaled(At.col(i).data(), bj, inv.data(), d));
    }
  });
  return K;
}

Mat kernel_matrix_sym(const Mat& A, const Lengthscales& ls, Index block_rows) {
  check_shapes(A, A, ls);
  require(block_rows >= 1, "kernel_matrix: block size must be positive");
  const Index a = A.rows(), d = ls.dim();
  Vec inv = (-ls.log_ell).array().exp();
  Mat At = transposed(A);
  Mat K(a, a);
  // Column blocks of the upper triangle; each entry computed once.
  parallel_blocks(num_blocks(a, block_rows), [&](Index blk) {
    Index c0 = blk * block_rows, c1 = std::min(a, c0 + block_rows);
    for (Index j = c0; j < c1; ++j) {
      K(j, j) = 1.0;
      for (Index i = 0; i < j; ++i)
        K(i, j) = std::exp(-0.5 * sqdist_scaled(At.col(i).data(), At.col(j).data(), inv.data(), d));
    }
  });
  K.triangularView<Eigen::StrictlyLower>() = K.transpose().triangularView<Eigen::StrictlyLower>();
  return K;
}

Vec kernel_diag(const Mat& A, const Lengthscales& ls) {
  ls.validate();
  require(A.cols() == ls.dim(), "kernel_diag: dimension mismatch");
  return Vec::Ones(A.rows());
}

KernelGrad kernel_vjp_weighted(const Mat& A, const Mat& B, const Lengthscales& ls,
                               const WeightBlockFn& weights, Index block_rows) {
  check_shapes(A, B, ls);
  require(block_rows >= 1, "kernel_vjp: block size must be positive");
  const Index a = A.rows(), b = B.rows(), d = ls.dim();
  Vec inv = (-ls.log_ell).array().exp();
  Mat At = transposed(A), Bt = transposed(B);

  const Index nb = num_blocks(a, block_rows);
  Mat gAt = Mat::Zero(d, a);
  std::vector<Mat> gBt_part(nb);
  std::vector<Vec> gl_part(nb);

  parallel_blocks(nb, [&](Index blk) {
    Index r0 = blk * block_rows, rows = std::min(a, r0 + block_rows) - r0;
    Mat G = weights(r0, rows);
    if (G.rows() != rows || G.cols() != b)
      throw ContractError("kernel_vjp: weight block shape mismatch");
    Mat gBt = Mat::Zero(d, b);
    Vec gl = Vec::Zero(d);
    std::vector<double> diff(d);
    for (Index ii = 0; ii < rows; ++ii) {
      Index i = r0 + ii;
      const double* ai = At.col(i).data();
      double* ga = gAt.col(i).data();
      for (Index j = 0; j < b; ++j) {
        double g = G(ii, j);
        if (g == 0.0) continue;
        const double* bj = Bt.col(j).data();
        double s = 0.0;
        for (Index k = 0; k < d; ++k) {
          diff[k] = (ai[k] - bj[k]) * inv[k];
          s += diff[k] * diff[k];
        }
        double w = g * std::exp(-0.5 * s);
        double* gb = gBt.col(j).data();
        for (Index k = 0; k < d; ++k) {
          // dK/dA_ik = -K diff_k / l_k ; dK/dlog l_k = K diff_k^2
          double t = w * diff[k] * inv[k];
          ga[k] -= t;
          gb[k] += t;
          gl[k] += w * diff[k] * diff[k];
        }
      }
    }
    gBt_part[blk] = std::move(gBt);
    gl_part[blk] = std::move(gl);
  });

  KernelGrad out;
  out.log_ell = Vec::Zero(d);
  Mat gBt = Mat::Zero(d, b);
  for (Index blk = 0; blk < nb; ++blk) {
    gBt += gBt_part[blk];
    out.log_ell += gl_part[blk];
  }
  out.A = gAt.transpose();
  out.B = gBt.transpose();
  return out;
}

KernelGrad kernel_vjp(const Mat& A, const Mat& B, const Lengthscales& ls, const Mat& L,
                      const Mat& R, Index block_rows) {
  require(L.rows() == A.rows() && R.rows() == B.rows() && L.cols() == R.cols(),
          "kernel_vjp: cotangent shape mismatch");
  require(L.allFinite() && R.allFinite(), "kernel_vjp: non-finite cotangent");
  return kernel_vjp_weighted(
      A, B, ls, [&](Index r0, Index rows) -> Mat { return L.middleRows(r0, rows) * R.transpose(); },
      block_rows);
}

}  // namespace nytune
