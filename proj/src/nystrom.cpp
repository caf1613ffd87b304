#include "nytune/nystrom.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace nytune {

void HyperParams::validate() const {
  ls.validate();
  require(std::isfinite(log_lambda), "hyperparams: non-finite log lambda");
  require(Z.rows() >= 1, "hyperparams: need at least one inducing point");
  require(Z.cols() == ls.dim(), "hyperparams: Z dimension does not match lengthscales");
  require(Z.allFinite(), "hyperparams: non-finite inducing point");
}

Mat NystromFactor::L_inv_T(const Mat& V) const {
  return L.transpose().triangularView<Eigen::Upper>().solve(V);
}

Mat NystromFactor::L_inv(const Mat& V) const { return L.triangularView<Eigen::Lower>().solve(V); }

Mat NystromFactor::beta(const Mat& Y) const {
  return L_inv_T(solve_C(Phi.transpose() * Y));
}

Mat NystromFactor::fitted(const Mat& Y) const { return Phi * solve_C(Phi.transpose() * Y); }

Vec NystromFactor::hat_diag() const {
  const Index nn = n(), block = kDefaultBlockRows;
  Vec h(nn);
  Mat Lc = chol_C.matrixL();
  for (Index r0 = 0; r0 < nn; r0 += block) {
    Index rows = std::min(block, nn - r0);
    Mat T = Lc.triangularView<Eigen::Lower>().solve(Phi.middleRows(r0, rows).transpose());
    h.segment(r0, rows) = T.colwise().squaredNorm().transpose();
  }
  return h;
}

double NystromFactor::effective_dimension() const {
  Mat G = Phi.transpose() * Phi;
  return solve_C(G).trace();
}

double NystromFactor::trace_ktilde() const { return Phi.squaredNorm(); }

double NystromFactor::logdet_C() const {
  return 2.0 * chol_C.matrixLLT().diagonal().array().log().sum();
}

NystromFactor factorize(const Mat& X, const HyperParams& hp, double start_level) {
  hp.validate();
  require(X.rows() >= 1, "factorize: empty design");
  require(X.cols() == hp.Z.cols(), "factorize: dimension mismatch between X and Z");
  const double lambda = hp.lambda();
  require(lambda > 0 && std::isfinite(lambda), "factorize: lambda must be positive");

  NystromFactor F;
  F.A = kernel_matrix(X, hp.Z, hp.ls);
  F.mu = static_cast<double>(X.rows()) * lambda;
  const Mat Kmm = kernel_matrix_sym(hp.Z, hp.ls);
  const double md = Kmm.diagonal().mean();
  const Index m = Kmm.rows();

  double level = start_level;
  for (; level <= kJitterMax * (1 + 1e-9); level *= 10.0) {
    const double J = level * md;
    Mat S = Kmm;
    S.diagonal().array() += J;
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) continue;
    F.L = llt.matrixL();
    if (!F.L.diagonal().allFinite() || (F.L.diagonal().array() <= 0).any()) continue;
    F.Phi = F.A;
    F.L.transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(F.Phi);
    if (!F.Phi.allFinite()) continue;
    Mat C = F.Phi.transpose() * F.Phi;
    C.diagonal().array() += F.mu;
    F.chol_C.compute(C);
    if (F.chol_C.info() != Eigen::Success) continue;
    F.kmm_jitter = J;
    (void)m;
    return F;
  }
  std::ostringstream os;
  os << "factorization failed after jitter escalation; final jitter " << (level / 10.0) * md;
  throw SingularError(os.str(), (level / 10.0) * md);
}

CheckedFactor factorize_checked(const Mat& X, const Mat& Y, const HyperParams& hp,
                                double start_level) {
  require(X.rows() >= 1, "fit: empty dataset");
  require(Y.rows() == X.rows(), "fit: label rows do not match design rows");
  require(Y.allFinite(), "fit: non-finite labels");
  hp.validate();
  const Mat Kmm = kernel_matrix_sym(hp.Z, hp.ls);
  const double md = Kmm.diagonal().mean();

  require(start_level > 0 && start_level <= kJitterMax, "fit: jitter start level out of range");
  double level = start_level;
  double last_res = 0.0;
  while (level <= kJitterMax * (1 + 1e-9)) {
    CheckedFactor out;
    out.F = factorize(X, hp, level);
    const NystromFactor& F = out.F;
    level = F.kmm_jitter / md;
    out.beta = F.beta(Y);
    Mat rhs = F.A.transpose() * Y;
    // (K_nm^T K_nm + mu (K_mm + J I)) beta - K_nm^T Y
    Mat res = F.A.transpose() * (F.A * out.beta) +
              F.mu * (Kmm * out.beta + F.kmm_jitter * out.beta) - rhs;
    double rn = rhs.norm();
    last_res = rn > 0 ? res.norm() / rn : res.norm();
    if (out.beta.allFinite() && last_res <= kResidualTol) {
      out.residual = last_res;
      return out;
    }
    level *= 10.0;
  }
  std::ostringstream os;
  os << "fit: normal equations unsolved to tolerance (relative residual " << last_res
     << ") after jitter escalation; final jitter " << kJitterMax * md;
  throw SingularError(os.str(), kJitterMax * md);
}

NkrrModel fit(const Dataset& data, const HyperParams& hp) {
  require(data.n() >= 1, "fit: empty dataset");
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  NkrrModel model;
  model.beta = std::move(cf.beta);
  model.hp = hp;
  model.kmm_jitter = cf.F.kmm_jitter;
  model.jitter = cf.F.mu * cf.F.kmm_jitter;
  model.residual = cf.residual;
  return model;
}

Mat predict(const NkrrModel& model, const Mat& Xq) {
  require(Xq.rows() >= 1, "predict: empty query");
  require(Xq.cols() == model.hp.Z.cols(), "predict: dimension mismatch");
  return kernel_matrix(Xq, model.hp.Z, model.hp.ls) * model.beta;
}

Mat hat_apply(const Dataset& data, const HyperParams& hp, const Mat& V) {
  require(V.rows() == data.n(), "hat_apply: V rows must equal n");
  Dataset d{data.X, V, std::nullopt, std::nullopt};
  NkrrModel model = fit(d, hp);
  return predict(model, data.X);
}

Mat pinv_sqrt(const Mat& Kmm, double cutoff) {
  Eigen::SelfAdjointEigenSolver<Mat> es(Kmm);
  if (es.info() != Eigen::Success) throw NumericalError("pinv: eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  std::vector<Index> keep;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev[i] > cutoff * top) keep.push_back(i);
  Mat W(Kmm.rows(), static_cast<Index>(keep.size()));
  for (size_t c = 0; c < keep.size(); ++c)
    W.col(c) = es.eigenvectors().col(keep[c]) / std::sqrt(ev[keep[c]]);
  return W;
}

Mat pinv_sym(const Mat& M, double cutoff) {
  Eigen::SelfAdjointEigenSolver<Mat> es(M);
  if (es.info() != Eigen::Success) throw NumericalError("pinv: eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Vec inv = Vec::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev[i]) > cutoff * top) inv[i] = 1.0 / ev[i];
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

double check_kernel_equivalence(const Dataset& data, const HyperParams& hp) {
  hp.validate();
  require(data.n() <= 200, "check_kernel_equivalence: dense check limited to n <= 200");
  const Index n = data.n();
  const double mu = static_cast<double>(n) * hp.lambda();
  Mat A = kernel_matrix(data.X, hp.Z, hp.ls);
  Mat Kmm = kernel_matrix_sym(hp.Z, hp.ls);
  Mat AW = A * pinv_sqrt(Kmm);
  Mat Kt = AW * AW.transpose();
  Mat reg = Kt;
  reg.diagonal().array() += mu;
  Mat lhs = reg.llt().solve(Kt);
  Mat M = A.transpose() * A + mu * Kmm;
  Mat rhs = A * pinv_sym(M, 1e-13) * A.transpose();
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

Mat predict_projected_form(const Dataset& data, const HyperParams& hp, const Mat& Xq) {
  hp.validate();
  const double mu = static_cast<double>(data.n()) * hp.lambda();
  Mat A = kernel_matrix(data.X, hp.Z, hp.ls);
  // Orthonormal basis of span{k(z_j, .)}: V = sum_j W_j k(z_j, .)
  Mat W = pinv_sqrt(kernel_matrix_sym(hp.Z, hp.ls));
  Mat AW = A * W;  // Phi V
  Mat inner = AW.transpose() * AW;
  inner.diagonal().array() += mu;
  Mat c = inner.llt().solve(AW.transpose() * data.Y);
  return kernel_matrix(Xq, hp.Z, hp.ls) * (W * c);
}

}  // namespace nytune
