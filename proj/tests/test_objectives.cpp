#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

using namespace nytune;

namespace {

Dataset with_val_split(Dataset ds, std::uint64_t seed, double train_frac = 0.6) {
  Split sp = random_split(ds.n(), train_frac, seed);
  sp.val_idx.swap(sp.test_idx);
  ds.split = sp;
  return ds;
}

// Well-conditioned instance: inducing points drawn from the data rows.
HyperParams hp_from_rows(tu::Rng& r, const Dataset& ds, Index m, double lambda) {
  HyperParams hp = tu::make_hp(r, m, ds.d(), lambda);
  std::vector<Index> rows(static_cast<size_t>(ds.n()));
  std::iota(rows.begin(), rows.end(), Index{0});
  std::shuffle(rows.begin(), rows.end(), r.g);
  for (Index j = 0; j < m; ++j) hp.Z.row(j) = ds.X.row(rows[static_cast<size_t>(j)]);
  return hp;
}

// Leave-one-out by explicit refits. Each refit keeps the penalty matrix
// n lambda K_mm of the full problem, i.e. lambda' = n lambda / (n - 1).
double loocv_oracle(const Dataset& ds, const HyperParams& hp) {
  const Index n = ds.n();
  double acc = 0;
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> keep;
    for (Index j = 0; j < n; ++j)
      if (j != i) keep.push_back(j);
    Dataset sub = ds.subset(keep);
    sub.split.reset();
    HyperParams h = hp;
    h.log_lambda = std::log(hp.lambda() * static_cast<double>(n) / static_cast<double>(n - 1));
    Mat p = predict(fit(sub, h), ds.X.row(i));
    acc += (p - ds.Y.row(i)).squaredNorm();
  }
  return acc / static_cast<double>(n);
}

struct DenseNys {
  Mat Kt;  // K~
  Mat G;   // (K~ + mu I)^{-1}
  double mu;
};

DenseNys dense(const Dataset& ds, const HyperParams& hp) {
  DenseNys o;
  o.Kt = tu::dense_ktilde(ds, hp);
  o.mu = static_cast<double>(ds.n()) * hp.lambda();
  Mat M = o.Kt;
  M.diagonal().array() += o.mu;
  o.G = M.inverse();
  return o;
}

double logdet_spd(const Mat& M) { return 2.0 * Eigen::LLT<Mat>(M).matrixLLT().diagonal().array().log().sum(); }

// Points on a circle with Z = X: every kernel matrix is circulant.
Dataset circle(Index n, tu::Rng& r) {
  Dataset ds;
  ds.X.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    double a = 2 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    ds.X(i, 0) = std::cos(a);
    ds.X(i, 1) = std::sin(a);
  }
  ds.Y = r.normal(n, 1);
  return ds;
}

}  // namespace

TEST_CASE("objective names round trip") {
  for (ObjectiveId id : kAllObjectives) CHECK(objective_from_string(to_string(id)) == id);
  CHECK(objective_from_string("prop") == ObjectiveId::PROP);
  CHECK(objective_from_string("hold-out") == ObjectiveId::HOLD_OUT);
  CHECK_THROWS_AS(objective_from_string("kfold"), ContractError);
}

TEST_CASE("hold-out") {
  tu::Rng r(1);
  Dataset ds = with_val_split(tu::make_data(r, 40, 3), 5);
  HyperParams hp = tu::make_hp(r, 6, 3, 1e-3);
  ObjectiveReport rep = eval_holdout(ds, hp);

  Dataset tr = ds.subset(ds.split->train_idx);
  NkrrModel mdl = fit(tr, hp);
  double acc = 0;
  for (Index i : ds.split->val_idx) {
    double f = 0;
    for (Index j = 0; j < 6; ++j) f += mdl.beta(j, 0) * kernel_eval(ds.X.row(i).transpose(), hp.Z.row(j).transpose(), hp.ls);
    acc += (f - ds.Y(i, 0)) * (f - ds.Y(i, 0));
  }
  acc /= static_cast<double>(ds.split->val_idx.size());
  CHECK(std::abs(rep.value - acc) <= 1e-12);

  Dataset perfect = ds;
  Mat pv = predict(mdl, ds.subset(ds.split->val_idx).X);
  for (size_t k = 0; k < ds.split->val_idx.size(); ++k) perfect.Y(ds.split->val_idx[k], 0) = pv(static_cast<Index>(k), 0);
  CHECK(eval_holdout(perfect, hp).value <= 1e-28);

  HyperParams huge = hp;
  huge.log_lambda = std::log(1e12);
  double ms = ds.subset(ds.split->val_idx).Y.squaredNorm() / static_cast<double>(ds.split->val_idx.size());
  CHECK(tu::rel(eval_holdout(ds, huge).value, ms) <= 1e-6);

  Dataset nosplit = ds;
  nosplit.split.reset();
  CHECK_THROWS_AS(eval_holdout(nosplit, hp), ContractError);
  Dataset noval = ds;
  noval.split->val_idx.clear();
  CHECK_THROWS_AS(eval_holdout(noval, hp), ContractError);
}

TEST_CASE("LOOCV equals the n-refit oracle") {
  tu::Rng r(2);
  for (int trial = 0; trial < 6; ++trial) {
    Dataset ds = tu::make_data(r, 20, 2, trial % 2 + 1);
    HyperParams hp = tu::make_hp(r, 5, 2, std::pow(10.0, r.uniform(-4, -1)));
    hp.Z.array() += 0.01;  // disjoint from X almost surely anyway
    if (trial == 5) {
      ds.X.row(7) = ds.X.row(3);  // duplicated training point
      ds.Y.row(7) = ds.Y.row(3);
    }
    double a = eval_loocv(ds, hp).value;
    double b = loocv_oracle(ds, hp);
    CHECK(std::isfinite(a));
    CHECK(tu::rel(a, b) <= 1e-8);
  }
}

TEST_CASE("LOOCV and GCV limits") {
  tu::Rng r(3);
  Dataset ds = tu::make_data(r, 30, 2);
  HyperParams hp = tu::make_hp(r, 6, 2, 1e8);
  double my2 = ds.Y.squaredNorm() / 30;
  CHECK(tu::rel(eval_loocv(ds, hp).value, my2) <= 1e-3);
  CHECK(tu::rel(eval_gcv(ds, hp).value, my2) <= 1e-3);

  // constant leverage: GCV and LOOCV coincide
  Dataset c = circle(24, r);
  HyperParams hc = tu::make_hp(r, 1, 2, 1e-2);
  hc.ls = Lengthscales::constant(2, 0.6);
  hc.Z = c.X;
  Vec h = factorize(c.X, hc).hat_diag();
  CHECK(h.maxCoeff() - h.minCoeff() <= 1e-12);
  CHECK(tu::rel(eval_gcv(c, hc).value, eval_loocv(c, hc).value) <= 1e-10);
}

TEST_CASE("LOOCV and GCV degenerate inputs") {
  tu::Rng r(4);
  Dataset ds = tu::make_data(r, 12, 3);
  HyperParams hp = tu::make_hp(r, 1, 3, 1e-300);
  hp.Z = ds.X;
  try {
    eval_loocv(ds, hp);
    FAIL("expected degenerate leverage");
  } catch (const DegenerateError& e) {
    CHECK(std::string(e.what()).find("index") != std::string::npos);
  }
  CHECK_THROWS_AS(eval_gcv(ds, hp), DegenerateError);
}

TEST_CASE("GCV matches the dense hat matrix") {
  tu::Rng r(5);
  Dataset ds = tu::make_data(r, 30, 3, 2);
  HyperParams hp = tu::make_hp(r, 7, 3, 1e-3);
  NkrrModel mdl = fit(ds, hp);
  Mat H = tu::dense_hat(ds, hp, mdl.jitter);
  double n = 30;
  double f = (n - H.trace()) / n;
  double oracle = ((Mat::Identity(30, 30) - H) * ds.Y).squaredNorm() / n / (f * f);
  CHECK(std::abs(eval_gcv(ds, hp).value - oracle) <= 1e-10);
}

TEST_CASE("C-Reg") {
  tu::Rng r(6);
  Dataset ds = tu::make_data(r, 25, 2);
  HyperParams hp = tu::make_hp(r, 5, 2, 1e-2);
  ObjectiveReport z = eval_creg(ds, hp, 0.0);
  Mat e = predict(fit(ds, hp), ds.X) - ds.Y;
  CHECK(z.value == doctest::Approx(e.squaredNorm() / 25).epsilon(1e-12));
  CHECK(z.terms.complexity == 0.0);
  CHECK_THROWS_AS(eval_creg(ds, hp, -1.0), ContractError);

  // projector limit: m = n, lambda -> 0
  Dataset sm = tu::make_data(r, 10, 3);
  sm.X *= 2.0;
  HyperParams full = tu::make_hp(r, 1, 3, 1e-14, 0.5, 0.6);
  full.Z = sm.X;
  ObjectiveReport c = eval_creg(sm, full, 0.7);
  CHECK(c.terms.complexity == doctest::Approx(2 * 0.7).epsilon(1e-6));
}

TEST_CASE("SGPR") {
  tu::Rng r(7);
  SUBCASE("dense oracle") {
    Dataset ds = tu::make_data(r, 40, 3);
    HyperParams hp = tu::make_hp(r, 6, 3, 1e-2);
    DenseNys D = dense(ds, hp);
    Mat M = D.Kt;
    M.diagonal().array() += D.mu;
    double oracle = logdet_spd(M) + (ds.Y.transpose() * D.G * ds.Y)(0, 0) + (40 - D.Kt.trace()) / D.mu;
    ObjectiveReport rep = eval_sgpr(ds, hp);
    CHECK(tu::rel(rep.value, oracle) <= 1e-8);

    Dataset y0 = ds;
    y0.Y.setZero();
    ObjectiveReport z = eval_sgpr(y0, hp);
    CHECK(z.terms.data_fit == 0.0);
    CHECK(tu::rel(z.value, logdet_spd(M) + (40 - D.Kt.trace()) / D.mu) <= 1e-10);
  }
  SUBCASE("exact Nystrom has no trace gap") {
    Dataset ds = tu::make_data(r, 20, 3);
    HyperParams hp = tu::make_hp(r, 1, 3, 1e-2);
    hp.Z = ds.X;
    CHECK(std::abs(eval_sgpr(ds, hp).terms.trace_gap) <= 1e-6);
  }
  SUBCASE("size guard") {
    Dataset ds = tu::make_data(r, 30, 2);
    ObjectiveOptions opt;
    opt.sgpr_max_n = 29;
    CHECK_THROWS_AS(eval_sgpr(ds, tu::make_hp(r, 3, 2, 0.1), opt), ContractError);
  }
}

TEST_CASE("PROP") {
  tu::Rng r(8);
  SUBCASE("regularized risk identity and SGPR remark") {
    for (int trial = 0; trial < 5; ++trial) {
      Dataset ds = tu::make_data(r, 30, 3);
      HyperParams hp = hp_from_rows(r, ds, 6, std::pow(10.0, r.uniform(-4, 0)));
      RegularizedRisk rr = regularized_risk(ds, hp);
      CHECK(tu::rel(rr.value, rr.mse + rr.penalty) <= 1e-8);
      DenseNys D = dense(ds, hp);
      double lhs = (ds.Y.transpose() * D.G * ds.Y)(0, 0);
      CHECK(tu::rel(lhs, rr.value / hp.lambda()) <= 1e-8);
      ObjectiveReport p = eval_prop(ds, hp);
      CHECK(p.terms.data_fit == doctest::Approx(rr.value).epsilon(1e-12));
      CHECK(p.terms.regularizer == doctest::Approx(rr.penalty).epsilon(1e-12));
    }
  }
  SUBCASE("exact Nystrom") {
    Dataset ds = tu::make_data(r, 20, 3);
    HyperParams hp = tu::make_hp(r, 1, 3, 1e-2);
    hp.Z = ds.X;
    ObjectiveReport p = eval_prop(ds, hp);
    CHECK(std::abs(p.terms.trace_gap) <= 1e-6);
    double expect = 2 * effective_dimension(ds, hp) / 20 + 2 * regularized_risk(ds, hp).value;
    CHECK(tu::rel(p.value, expect) <= 1e-6);
  }
  SUBCASE("zero labels") {
    Dataset ds = tu::make_data(r, 20, 2);
    ds.Y.setZero();
    HyperParams hp = tu::make_hp(r, 4, 2, 1e-2);
    ObjectiveReport p = eval_prop(ds, hp);
    CHECK(p.terms.data_fit == 0.0);
    CHECK(p.value == doctest::Approx(2 * effective_dimension(ds, hp) / 20).epsilon(1e-14));
  }
  SUBCASE("regularizer factor") {
    Dataset ds = tu::make_data(r, 20, 2);
    HyperParams hp = tu::make_hp(r, 4, 2, 1e-2);
    ObjectiveOptions one;
    one.prop_reg_factor = 1.0;
    ObjectiveReport p2 = eval_prop(ds, hp), p1 = eval_prop(ds, hp, 1.0, one);
    CHECK(p2.value - p1.value == doctest::Approx(p2.terms.regularizer).epsilon(1e-10));
    one.prop_reg_factor = 3.0;
    CHECK_THROWS_AS(eval_prop(ds, hp, 1.0, one), ContractError);
  }
}

TEST_CASE("effective dimension") {
  tu::Rng r(9);
  Dataset ds = tu::make_data(r, 50, 3);
  HyperParams hp = hp_from_rows(r, ds, 8, 1e-3);
  DenseNys D = dense(ds, hp);
  CHECK(tu::rel(effective_dimension(ds, hp), (D.G * D.Kt).trace()) <= 1e-8);

  HyperParams big = hp;
  big.log_lambda = std::log(1e8);
  CHECK(effective_dimension(ds, big) <= 1e-6);

  Dataset small = tu::make_data(r, 30, 3);
  HyperParams tiny = hp_from_rows(r, small, 4, 1e-12);
  CHECK(std::abs(effective_dimension(small, tiny) - 4.0) <= 1e-3);
}

TEST_CASE("trace gap") {
  tu::Rng r(10);
  Dataset ds = tu::make_data(r, 40, 3);
  HyperParams hp = tu::make_hp(r, 6, 3, 1e-2);
  CHECK(tu::rel(trace_gap(ds, hp), 40 - tu::dense_ktilde(ds, hp).trace()) <= 1e-8);

  HyperParams one = tu::make_hp(r, 1, 3, 1e-2);
  Vec k = tu::loop_kernel(ds.X, one.Z, one.ls).col(0);
  CHECK(tu::rel(trace_gap(ds, one), 40 - k.squaredNorm()) <= 1e-12);

  Dataset s = tu::make_data(r, 20, 3);
  HyperParams zx = tu::make_hp(r, 1, 3, 1e-2);
  zx.Z = s.X;
  CHECK(std::abs(trace_gap(s, zx)) <= 1e-6);
}

TEST_CASE("property: ranges, monotonicity and term recombination") {
  tu::Rng r(11);
  for (int trial = 0; trial < 25; ++trial) {
    Index n = r.integer(10, 60), d = r.integer(1, 4), m = r.integer(1, 12), o = r.integer(1, 2);
    Dataset ds = with_val_split(tu::make_data(r, n, d, o), 40 + trial);
    HyperParams hp = tu::make_hp(r, m, d, std::pow(10.0, r.uniform(-5, 1)));
    if (trial % 4 == 0 && m > 1) hp.Z.row(1) = hp.Z.row(0);
    double de = effective_dimension(ds, hp);
    CHECK(de >= 0);
    CHECK(de <= static_cast<double>(std::min(m, n)) + 1e-9);
    CHECK(trace_gap(ds, hp) >= -1e-8 * static_cast<double>(n));

    ObjectiveOptions opt;
    opt.sigma2 = r.uniform(0, 2);
    opt.prop_reg_factor = trial % 2 ? 1.0 : 2.0;
    for (ObjectiveId id : kAllObjectives) {
      ObjectiveReport rep = evaluate(id, ds, hp, opt);
      INFO(to_string(id));
      CHECK(rep.id == id);
      CHECK(std::isfinite(rep.value));
      CHECK(tu::rel(recombine(rep), rep.value) <= 1e-10);
    }

    double prev = std::numeric_limits<double>::infinity();
    for (double ll = -6; ll <= 0; ll += 0.5) {
      HyperParams h = hp;
      h.log_lambda = ll * std::log(10.0);
      double v = effective_dimension(ds, h);
      CHECK(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("PROP upper-bounds the fixed-design test error") {
  // 500 noise draws on a fixed design with known f* and sigma
  SyntheticProblem sp = make_synthetic(50, 2, 0.3, 17);
  tu::Rng r(12);
  for (int setting = 0; setting < 3; ++setting) {
    HyperParams hp = tu::make_hp(r, 8, 2, std::pow(10.0, -3.0 + setting), 0.6, 1.2);
    ObjectiveOptions opt;
    opt.sigma2 = 0.09;
    std::vector<double> diff;
    for (int k = 0; k < 500; ++k) {
      Dataset ds = sp.data;
      ds.Y = draw_labels(sp.f_star, sp.sigma, 1000 + static_cast<std::uint64_t>(k));
      double prop = eval_prop(ds, hp, opt.sigma2, opt).value;
      double err = (predict(fit(ds, hp), ds.X).col(0) - sp.f_star).squaredNorm() / 50;
      diff.push_back(prop - err);
    }
    double mean = 0, var = 0;
    for (double v : diff) mean += v;
    mean /= 500;
    for (double v : diff) var += (v - mean) * (v - mean);
    double se = std::sqrt(var / 499 / 500);
    CHECK(mean >= -3 * se);
  }
}
