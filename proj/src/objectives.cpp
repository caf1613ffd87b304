#include "nytune/objectives.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace nytune {

std::string to_string(ObjectiveId id) {
  switch (id) {
    case ObjectiveId::HOLD_OUT: return "HOLD_OUT";
    case ObjectiveId::LOOCV: return "LOOCV";
    case ObjectiveId::GCV: return "GCV";
    case ObjectiveId::CREG: return "CREG";
    case ObjectiveId::SGPR: return "SGPR";
    case ObjectiveId::PROP: return "PROP";
  }
  return "?";
}

ObjectiveId objective_from_string(const std::string& s) {
  // case-insensitive, '-' accepted for '_'
  std::string u = s;
  for (char& c : u) c = c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (ObjectiveId id : kAllObjectives)
    if (to_string(id) == u) return id;
  throw ContractError("unknown objective '" + s + "'");
}

double recombine(const ObjectiveReport& r) {
  const ObjectiveTerms& t = r.terms;
  switch (r.id) {
    case ObjectiveId::HOLD_OUT:
    case ObjectiveId::LOOCV: return t.data_fit;
    case ObjectiveId::GCV: {
      double f = 1.0 - t.complexity / r.n;
      return t.data_fit / (f * f);
    }
    case ObjectiveId::CREG: return t.data_fit + t.complexity;
    case ObjectiveId::SGPR: return t.complexity + t.data_fit + t.trace_gap / (r.n * r.lambda);
    case ObjectiveId::PROP:
      return t.complexity + 2.0 * t.trace_gap * t.data_fit / (r.n * r.lambda) +
             2.0 * (t.data_fit - t.regularizer) + r.reg_factor * t.regularizer;
  }
  return 0.0;
}

namespace {

ObjectiveReport make_report(ObjectiveId id, double n, double lambda) {
  ObjectiveReport r;
  r.id = id;
  r.n = n;
  r.lambda = lambda;
  return r;
}

void check_finite(const ObjectiveReport& r) {
  if (!std::isfinite(r.value))
    throw NumericalError(to_string(r.id) + ": non-finite objective value");
}

// Exact Nystrom quantities through K_mm^+ = W W^T.
struct PinvParts {
  Mat Psi;  // K_nm W, n x r
  Index r = 0;
};

PinvParts pinv_parts(const Dataset& data, const HyperParams& hp) {
  hp.validate();
  require(data.X.cols() == hp.Z.cols(), "dimension mismatch between X and Z");
  PinvParts p;
  Mat W = pinv_sqrt(kernel_matrix_sym(hp.Z, hp.ls));
  p.Psi = kernel_matrix(data.X, hp.Z, hp.ls) * W;
  p.r = W.cols();
  return p;
}

}  // namespace

double effective_dimension(const Dataset& data, const HyperParams& hp) {
  return factorize_checked(data.X, data.Y, hp).F.effective_dimension();
}

double trace_gap(const Dataset& data, const HyperParams& hp) {
  PinvParts p = pinv_parts(data, hp);
  return static_cast<double>(data.n()) - p.Psi.squaredNorm();
}

RegularizedRisk regularized_risk(const Dataset& data, const HyperParams& hp) {
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  const double n = static_cast<double>(data.n());
  Mat e = data.Y - cf.F.fitted(data.Y);
  RegularizedRisk out;
  out.value = (data.Y.transpose() * e).trace() / n;
  out.mse = e.squaredNorm() / n;
  Mat Kmm = kernel_matrix_sym(hp.Z, hp.ls);
  out.penalty = hp.lambda() * (cf.beta.transpose() * Kmm * cf.beta).trace();
  return out;
}

ObjectiveReport eval_holdout(const Dataset& data, const HyperParams& hp) {
  require(data.split.has_value(), "HOLD_OUT: dataset carries no split");
  const Split& sp = *data.split;
  require(!sp.train_idx.empty(), "HOLD_OUT: empty training part");
  if (sp.val_idx.empty()) throw ContractError("HOLD_OUT: empty validation set");
  Dataset tr = data.subset(sp.train_idx);
  Dataset va = data.subset(sp.val_idx);
  NkrrModel model = fit(tr, hp);
  Mat pred = predict(model, va.X);
  ObjectiveReport r = make_report(ObjectiveId::HOLD_OUT, static_cast<double>(va.n()), hp.lambda());
  r.terms.data_fit = (pred - va.Y).squaredNorm() / static_cast<double>(va.n());
  r.value = r.terms.data_fit;
  check_finite(r);
  return r;
}

ObjectiveReport eval_loocv(const Dataset& data, const HyperParams& hp, const ObjectiveOptions& opt) {
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  const Index n = data.n();
  Mat e = data.Y - cf.F.fitted(data.Y);
  Vec h = cf.F.hat_diag();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (!(h[i] < 1.0 - opt.leverage_guard)) {
      std::ostringstream os;
      os << "LOOCV: degenerate leverage H_ii = " << h[i] << " at index " << i;
      throw DegenerateError(os.str());
    }
    double s = 1.0 - h[i];
    acc += e.row(i).squaredNorm() / (s * s);
  }
  ObjectiveReport r = make_report(ObjectiveId::LOOCV, static_cast<double>(n), hp.lambda());
  r.terms.data_fit = acc / static_cast<double>(n);
  r.value = r.terms.data_fit;
  check_finite(r);
  return r;
}

ObjectiveReport eval_gcv(const Dataset& data, const HyperParams& hp) {
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  const double n = static_cast<double>(data.n());
  Mat e = data.Y - cf.F.fitted(data.Y);
  double deff = cf.F.effective_dimension();
  double tr_res = n - deff;
  if (!(tr_res > 1e-12)) throw DegenerateError("GCV: tr(I - H) is not positive");
  ObjectiveReport r = make_report(ObjectiveId::GCV, n, hp.lambda());
  r.terms.data_fit = e.squaredNorm() / n;
  r.terms.complexity = deff;
  double f = tr_res / n;
  r.value = r.terms.data_fit / (f * f);
  check_finite(r);
  return r;
}

ObjectiveReport eval_creg(const Dataset& data, const HyperParams& hp, double sigma2) {
  require(sigma2 >= 0, "CREG: sigma2 must be non-negative");
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  const double n = static_cast<double>(data.n());
  Mat e = data.Y - cf.F.fitted(data.Y);
  ObjectiveReport r = make_report(ObjectiveId::CREG, n, hp.lambda());
  r.terms.data_fit = e.squaredNorm() / n;
  r.terms.complexity = 2.0 * sigma2 / n * cf.F.effective_dimension();
  r.terms.noise_scale = sigma2;
  r.value = r.terms.data_fit + r.terms.complexity;
  check_finite(r);
  return r;
}

ObjectiveReport eval_sgpr(const Dataset& data, const HyperParams& hp, const ObjectiveOptions& opt) {
  if (data.n() > opt.sgpr_max_n) {
    std::ostringstream os;
    os << "SGPR: exact log-determinant refused for n = " << data.n() << " > " << opt.sgpr_max_n;
    throw ContractError(os.str());
  }
  const double n = static_cast<double>(data.n());
  const double lambda = hp.lambda();
  const double mu = n * lambda;
  PinvParts p = pinv_parts(data, hp);
  // logdet(Psi Psi^T + mu I_n) = logdet(Psi^T Psi + mu I_r) + (n - r) log mu
  Mat inner = p.Psi.transpose() * p.Psi;
  inner.diagonal().array() += mu;
  Eigen::LLT<Mat> llt(inner);
  if (llt.info() != Eigen::Success) throw NumericalError("SGPR: inner factorization failed");
  double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum() +
                  (n - static_cast<double>(p.r)) * std::log(mu);
  Mat PtY = p.Psi.transpose() * data.Y;
  Mat sol = llt.solve(PtY);
  double quad = (data.Y.squaredNorm() - (PtY.transpose() * sol).trace()) / mu;

  ObjectiveReport r = make_report(ObjectiveId::SGPR, n, lambda);
  r.terms.complexity = logdet;
  r.terms.data_fit = quad;
  r.terms.trace_gap = n - p.Psi.squaredNorm();
  r.value = logdet + quad + r.terms.trace_gap / mu;
  check_finite(r);
  return r;
}

ObjectiveReport eval_prop(const Dataset& data, const HyperParams& hp, double sigma2,
                          const ObjectiveOptions& opt) {
  require(sigma2 >= 0, "PROP: sigma2 must be non-negative");
  require(opt.prop_reg_factor == 1.0 || opt.prop_reg_factor == 2.0,
          "PROP: prop-reg-factor must be 1 or 2");
  CheckedFactor cf = factorize_checked(data.X, data.Y, hp);
  const double n = static_cast<double>(data.n());
  const double lambda = hp.lambda();
  Mat e = data.Y - cf.F.fitted(data.Y);
  Mat Kmm = kernel_matrix_sym(hp.Z, hp.ls);

  ObjectiveReport r = make_report(ObjectiveId::PROP, n, lambda);
  r.reg_factor = opt.prop_reg_factor;
  r.terms.complexity = 2.0 * sigma2 / n * cf.F.effective_dimension();
  r.terms.trace_gap = trace_gap(data, hp);
  r.terms.data_fit = (data.Y.transpose() * e).trace() / n;  // n^{-1} Y^T (I - H) Y
  r.terms.regularizer = lambda * (cf.beta.transpose() * Kmm * cf.beta).trace();
  r.terms.noise_scale = sigma2;
  r.value = recombine(r);
  check_finite(r);
  return r;
}

ObjectiveReport evaluate(ObjectiveId id, const Dataset& data, const HyperParams& hp,
                         const ObjectiveOptions& opt) {
  switch (id) {
    case ObjectiveId::HOLD_OUT: return eval_holdout(data, hp);
    case ObjectiveId::LOOCV: return eval_loocv(data, hp, opt);
    case ObjectiveId::GCV: return eval_gcv(data, hp);
    case ObjectiveId::CREG: return eval_creg(data, hp, opt.sigma2);
    case ObjectiveId::SGPR: return eval_sgpr(data, hp, opt);
    case ObjectiveId::PROP: return eval_prop(data, hp, opt.sigma2, opt);
  }
  throw ContractError("evaluate: unknown objective");
}

}  // namespace nytune
