#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

using namespace nytune;

namespace {

struct Instance {
  Dataset data;
  HyperParams hp;
  ProbeSet probes;
};

Dataset with_val_split(Dataset ds, std::uint64_t seed) {
  Split sp = random_split(ds.n(), 0.6, seed);
  sp.val_idx.swap(sp.test_idx);
  ds.split = sp;
  return ds;
}

Instance make_instance(tu::Rng& r, int k, bool duplicate) {
  Instance in;
  Index n = r.integer(15, 40), d = r.integer(2, 4), m = r.integer(3, 6), o = r.integer(1, 2);
  in.data = with_val_split(tu::make_data(r, n, d, o), 100 + k);
  in.hp = tu::make_hp(r, m, d, std::pow(10.0, r.uniform(-4, -1)), 0.7, 1.5);
  if (duplicate) in.hp.Z.row(m - 1) = in.hp.Z.row(0);
  in.probes = make_probes(n, 7, k % 2 ? ProbeKind::GAUSSIAN : ProbeKind::RADEMACHER, 500 + k);
  return in;
}

GradOptions options(const Instance& in, bool ste, double jitter_start = kJitterStart) {
  GradOptions opt;
  opt.ste = ste;
  opt.probes = &in.probes;
  opt.jitter_start = jitter_start;
  return opt;
}

// Richardson-extrapolated central difference: removes the h^2 truncation term.
Vec richardson_fd(ObjectiveId id, const Dataset& data, const HyperParams& hp, const GradOptions& opt, double h) {
  Vec th = hp_to_vector(hp);
  const Index m = hp.m(), d = hp.Z.cols();
  auto f = [&](const Vec& t) { return value_objective(id, data, hp_from_vector(t, m, d), opt).value; };
  auto cd = [&](Index k, double s) {
    Vec p = th, q = th;
    p[k] += s;
    q[k] -= s;
    return (f(p) - f(q)) / (2 * s);
  };
  Vec g(th.size());
  for (Index k = 0; k < th.size(); ++k) g[k] = (4 * cd(k, h / 2) - cd(k, h)) / 3;
  return g;
}

}  // namespace

TEST_CASE("flat vector round trip") {
  tu::Rng r(1);
  HyperParams hp = tu::make_hp(r, 4, 3, 0.01);
  Vec v = hp_to_vector(hp);
  CHECK(v.size() == 1 + 3 + 12);
  CHECK(v[0] == hp.log_lambda);
  CHECK(v[1 + 3 + 1 * 3 + 2] == hp.Z(1, 2));
  HyperParams back = hp_from_vector(v, 4, 3);
  CHECK(back.log_lambda == hp.log_lambda);
  CHECK((back.ls.log_ell - hp.ls.log_ell).norm() == 0.0);
  CHECK((back.Z - hp.Z).norm() == 0.0);
  CHECK_THROWS_AS(hp_from_vector(v, 5, 3), ContractError);
}

TEST_CASE("prop gradient at n=60, m=8, d=3 matches central differences") {
  tu::Rng r(2);
  Dataset ds = tu::make_data(r, 60, 3);
  HyperParams hp = tu::make_hp(r, 8, 3, 1e-3);
  ProbeSet pr = make_probes(60, 10, ProbeKind::GAUSSIAN, 3);
  GradCheckReport ex = grad_check(ObjectiveId::PROP, ds, hp);
  CHECK(ex.passed);
  CHECK(ex.max_rel_err <= 1e-4);
  CHECK(ex.coord.size() == 1 + 3 + 24);
  GradOptions opt;
  opt.ste = true;
  opt.probes = &pr;
  GradCheckReport st = grad_check(ObjectiveId::PROP, ds, hp, 1e-5, 1e-4, opt);
  CHECK(st.passed);
  CHECK(st.max_rel_err <= 1e-4);
}

TEST_CASE("grad_check passes for every objective on well-conditioned instances") {
  tu::Rng r(11);
  for (int k = 0; k < 12; ++k) {
    Instance in = make_instance(r, k, false);
    for (ObjectiveId id : kAllObjectives)
      for (bool ste : {false, true}) {
        GradCheckReport rep = grad_check(id, in.data, in.hp, 1e-5, 1e-4, options(in, ste));
        INFO("instance " << k << " " << to_string(id) << (ste ? " ste" : " exact") << " max rel "
                         << rep.max_rel_err);
        CHECK(rep.passed);
      }
  }
}

TEST_CASE("duplicated inducing points: gradient is the derivative of the jittered surrogate") {
  // With Z rank-deficient the surrogate changes on the length scale
  // ell * sqrt(jitter) when a duplicate is moved apart. The truncation error of a
  // central difference therefore behaves like step^2 / jitter; extrapolating in
  // the step removes it and leaves the analytic gradient.
  tu::Rng r(12);
  for (int k = 0; k < 4; ++k) {
    Instance in = make_instance(r, k, true);
    for (ObjectiveId id : kAllObjectives)
      for (bool ste : {false, true}) {
        GradOptions opt = options(in, ste, 1e-4);
        GradResult g = grad_objective(id, in.data, in.hp, opt);
        Vec a = grad_to_vector(g.grad);
        Vec f = richardson_fd(id, in.data, in.hp, opt, 1e-5);
        double floor = 1e-6 * a.cwiseAbs().maxCoeff();
        double worst = 0;
        for (Index i = 0; i < a.size(); ++i)
          worst = std::max(worst, std::abs(a[i] - f[i]) / std::max({std::abs(a[i]), std::abs(f[i]), floor}));
        INFO("instance " << k << " " << to_string(id) << (ste ? " ste" : " exact"));
        CHECK(worst <= 1e-6);

        // the plain central-difference error falls as the jitter grows
        GradCheckReport c1 = grad_check(id, in.data, in.hp, 1e-5, 1e-4, options(in, ste, 1e-5));
        GradCheckReport c2 = grad_check(id, in.data, in.hp, 1e-5, 1e-4, options(in, ste, 1e-4));
        CHECK(c2.max_rel_err <= 0.2 * c1.max_rel_err);
      }
  }
}

TEST_CASE("exactly duplicated inducing points get identical gradient rows") {
  tu::Rng r(13);
  Dataset ds = tu::make_data(r, 30, 2);
  HyperParams hp = tu::make_hp(r, 5, 2, 1e-2);
  hp.Z.row(1) = hp.Z.row(0);
  for (ObjectiveId id : {ObjectiveId::GCV, ObjectiveId::CREG, ObjectiveId::SGPR, ObjectiveId::PROP,
                         ObjectiveId::LOOCV}) {
    GradResult g = grad_objective(id, ds, hp);
    CHECK((g.grad.d_Z.row(0) - g.grad.d_Z.row(1)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("zero labels give zero hold-out gradient in ell and Z") {
  tu::Rng r(14);
  Dataset ds = with_val_split(tu::make_data(r, 25, 2), 7);
  ds.Y.setZero();
  HyperParams hp = tu::make_hp(r, 4, 2, 1e-2);
  GradResult g = grad_objective(ObjectiveId::HOLD_OUT, ds, hp);
  CHECK(g.report.value == 0.0);
  CHECK(g.grad.d_Z.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad.d_log_ell.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.grad.d_log_lambda == 0.0);
}

TEST_CASE("linearity in the noise weight") {
  // CREG and PROP are affine in sigma^2, hence so are their gradients.
  tu::Rng r(15);
  Dataset ds = tu::make_data(r, 35, 3);
  HyperParams hp = tu::make_hp(r, 6, 3, 3e-3);
  for (ObjectiveId id : {ObjectiveId::CREG, ObjectiveId::PROP}) {
    Vec g[3];
    for (int s = 0; s < 3; ++s) {
      GradOptions opt;
      opt.obj.sigma2 = 0.5 * s;
      g[s] = grad_to_vector(grad_objective(id, ds, hp, opt).grad);
    }
    Vec lhs = g[0] + g[2], rhs = 2 * g[1];
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10 * rhs.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("values agree with the objectives module") {
  tu::Rng r(16);
  for (int k = 0; k < 6; ++k) {
    Instance in = make_instance(r, k, false);
    for (ObjectiveId id : kAllObjectives) {
      double a = value_objective(id, in.data, in.hp).value;
      double b = evaluate(id, in.data, in.hp).value;
      INFO(to_string(id));
      // the two differ only through the K_mm jitter versus the pseudo-inverse
      CHECK(tu::rel(a, b) <= 1e-6);
      GradResult g = grad_objective(id, in.data, in.hp);
      CHECK(g.report.value == a);
      CHECK(g.grad.all_finite());
    }
  }
}

TEST_CASE("ste values use the probe estimators") {
  tu::Rng r(17);
  Dataset ds = tu::make_data(r, 40, 2);
  HyperParams hp = tu::make_hp(r, 5, 2, 1e-2);
  ProbeSet pr = make_probes(40, 9, ProbeKind::RADEMACHER, 4);
  GradOptions opt;
  opt.ste = true;
  opt.probes = &pr;
  ObjectiveReport c = value_objective(ObjectiveId::CREG, ds, hp, opt);
  CHECK(c.terms.complexity == doctest::Approx(2.0 / 40 * ste_effective_dimension(ds, hp, pr)).epsilon(1e-10));
  ObjectiveReport p = value_objective(ObjectiveId::PROP, ds, hp, opt);
  CHECK(p.terms.trace_gap == doctest::Approx(40 - ste_trace_ktilde(ds, hp, pr)).epsilon(1e-9));
  // objectives without trace terms ignore the probes
  CHECK(value_objective(ObjectiveId::LOOCV, ds, hp, opt).value == value_objective(ObjectiveId::LOOCV, ds, hp).value);
}

TEST_CASE("error paths") {
  tu::Rng r(18);
  Dataset ds = tu::make_data(r, 20, 2);
  HyperParams hp = tu::make_hp(r, 3, 2, 1e-2);
  GradOptions opt;
  opt.ste = true;
  CHECK_THROWS_AS(grad_objective(ObjectiveId::PROP, ds, hp, opt), ContractError);
  ProbeSet wrong = make_probes(21, 3, ProbeKind::GAUSSIAN, 1);
  opt.probes = &wrong;
  CHECK_THROWS_AS(grad_objective(ObjectiveId::PROP, ds, hp, opt), ContractError);
  CHECK_THROWS_AS(grad_objective(ObjectiveId::HOLD_OUT, ds, hp), ContractError);
  Dataset big = ds;
  GradOptions small;
  small.obj.sgpr_max_n = 10;
  CHECK_THROWS_AS(grad_objective(ObjectiveId::SGPR, big, hp, small), ContractError);
}

TEST_CASE("large step is flagged as discretization dominated") {
  tu::Rng r(19);
  Dataset ds = tu::make_data(r, 30, 2);
  HyperParams hp = tu::make_hp(r, 4, 2, 1e-3);
  GradCheckReport rep = grad_check(ObjectiveId::PROP, ds, hp, 1e-1, 1e-4);
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_err > 1e-4);
  CHECK(rep.discretization_suspect);
  CHECK_FALSE(rep.flagged.empty());
  GradCheckReport ok = grad_check(ObjectiveId::PROP, ds, hp);
  CHECK(ok.passed);
  CHECK_FALSE(ok.discretization_suspect);
}

TEST_CASE("gradients do not depend on the thread count") {
  tu::Rng r(20);
  Dataset ds = tu::make_data(r, 300, 3);
  HyperParams hp = tu::make_hp(r, 12, 3, 1e-3);
  int saved = num_threads();
  set_num_threads(1);
  Vec g1 = grad_to_vector(grad_objective(ObjectiveId::PROP, ds, hp).grad);
  set_num_threads(4);
  Vec g4 = grad_to_vector(grad_objective(ObjectiveId::PROP, ds, hp).grad);
  set_num_threads(saved);
  CHECK((g1 - g4).cwiseAbs().maxCoeff() == 0.0);
}
