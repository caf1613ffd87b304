#include "nytune/hyperopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace nytune {

void OptConfig::validate() const {
  require(learning_rate > 0 && std::isfinite(learning_rate), "optimizer: learning rate must be positive");
  require(epochs >= 0, "optimizer: epochs must be non-negative");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "optimizer: Adam betas in [0, 1)");
  require(adam_eps > 0, "optimizer: Adam eps must be positive");
  require(early_stop_patience >= 0, "optimizer: patience must be non-negative");
  require(t >= 1, "optimizer: probe count must be positive");
  require(sigma2 >= 0, "optimizer: sigma2 must be non-negative");
  require(prop_reg_factor == 1.0 || prop_reg_factor == 2.0, "optimizer: prop-reg-factor must be 1 or 2");
  require(val_frac > 0 && val_frac < 1, "optimizer: validation fraction must be in (0, 1)");
}

namespace {

struct Adam {
  Vec m, v;
  Index t = 0;
  void step(Vec& x, const Vec& g, const OptConfig& c) {
    if (m.size() == 0) {
      m = Vec::Zero(x.size());
      v = Vec::Zero(x.size());
    }
    ++t;
    m = c.adam_beta1 * m + (1 - c.adam_beta1) * g;
    v = c.adam_beta2 * v + (1 - c.adam_beta2) * g.cwiseProduct(g);
    double b1 = 1 - std::pow(c.adam_beta1, static_cast<double>(t));
    double b2 = 1 - std::pow(c.adam_beta2, static_cast<double>(t));
    x.array() -= c.learning_rate * (m.array() / b1) / ((v.array() / b2).sqrt() + c.adam_eps);
  }
};

// Counts consecutive increases of the monitored value.
struct EarlyStop {
  Index patience;
  Index rises = 0;
  double prev = std::numeric_limits<double>::infinity();
  bool update(double v) {
    rises = v > prev ? rises + 1 : 0;
    prev = v;
    return patience > 0 && rises >= patience;
  }
};

}  // namespace

FlatResult adam_minimize(const FlatObjective& f, const Vec& x0, const OptConfig& cfg) {
  cfg.validate();
  FlatResult r;
  r.best = x0;
  r.best_value = std::numeric_limits<double>::infinity();
  Vec x = x0;
  Adam adam;
  EarlyStop es{cfg.early_stop_patience};
  for (Index k = 0; k < cfg.epochs; ++k) {
    auto [val, g] = f(x);
    if (!std::isfinite(val) || !g.allFinite()) break;
    r.values.push_back(val);
    r.steps = k + 1;
    if (val < r.best_value) {
      r.best_value = val;
      r.best = x;
    }
    if (es.update(val)) break;
    adam.step(x, g, cfg);
  }
  return r;
}

double median_heuristic(const Mat& X, std::uint64_t seed, Index max_points) {
  require(X.rows() >= 2, "median heuristic: need at least two points");
  std::vector<Index> idx(static_cast<size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (X.rows() > max_points) {
    std::mt19937_64 rng(seed);
    for (Index i = 0; i < max_points; ++i) {
      std::uniform_int_distribution<Index> ud(i, X.rows() - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(ud(rng))]);
    }
    idx.resize(static_cast<size_t>(max_points));
  }
  std::vector<double> dist;
  dist.reserve(idx.size() * (idx.size() - 1) / 2);
  for (size_t i = 0; i < idx.size(); ++i)
    for (size_t j = i + 1; j < idx.size(); ++j) dist.push_back((X.row(idx[i]) - X.row(idx[j])).norm());
  size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double med = dist[mid];
  if (dist.size() % 2 == 0) {
    double lo = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lo);
  }
  require(med > 0, "median heuristic: median pairwise distance is zero");
  return med;
}

HyperParams init_hyperparams(const Dataset& data, Index m, std::uint64_t seed) {
  const Index n = data.n();
  require(m >= 1, "init: m must be positive");
  if (m > n) throw ContractError("init: m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
  HyperParams hp;
  hp.log_lambda = -std::log(static_cast<double>(n));
  hp.ls = Lengthscales::constant(data.d(), median_heuristic(data.X, seed));
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::mt19937_64 rng(seed + 1);
  for (Index i = 0; i < m; ++i) {
    std::uniform_int_distribution<Index> ud(i, n - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(ud(rng))]);
  }
  hp.Z.resize(m, data.d());
  for (Index i = 0; i < m; ++i) hp.Z.row(i) = data.X.row(idx[static_cast<size_t>(i)]);
  return hp;
}

OptResult optimize(ObjectiveId id, const Dataset& data_in, const OptConfig& cfg, const HyperParams& hp0,
                   const TestEval& test) {
  cfg.validate();
  hp0.validate();
  OptResult res;
  res.hp = hp0;
  if (cfg.epochs == 0) return res;

  Dataset data = data_in;
  if (id == ObjectiveId::HOLD_OUT && (!data.split || data.split->val_idx.empty())) {
    Split s = random_split(data.n(), 1.0 - cfg.val_frac, cfg.seed);
    Split hs;
    hs.train_idx = s.train_idx;
    hs.val_idx = s.test_idx;
    data.split = hs;
  }

  const bool uses_probes = cfg.ste_mode && id != ObjectiveId::HOLD_OUT && id != ObjectiveId::LOOCV;
  ProbeSet probes;
  if (uses_probes) probes = make_probes(data.n(), cfg.t, cfg.probe_kind, cfg.seed);

  GradOptions gopt;
  gopt.obj.sigma2 = cfg.sigma2;
  gopt.obj.prop_reg_factor = cfg.prop_reg_factor;
  gopt.ste = uses_probes;
  gopt.probes = uses_probes ? &probes : nullptr;
  GradOptions exact_opt = gopt;
  exact_opt.ste = false;
  exact_opt.probes = nullptr;

  const Index m = hp0.m(), d = hp0.ls.dim();
  Vec theta = hp_to_vector(hp0);
  Vec best = theta, last_good = theta;
  double best_val = std::numeric_limits<double>::infinity();
  Adam adam;
  EarlyStop es{cfg.early_stop_patience};

  for (Index k = 1; k <= cfg.epochs; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    HyperParams hp = hp_from_vector(theta, m, d);
    TrajectoryRecord rec;
    rec.step = k;
    rec.lambda = hp.lambda();
    Vec ell = hp.ls.ell();
    rec.ell_min = ell.minCoeff();
    rec.ell_mean = ell.mean();
    rec.ell_max = ell.maxCoeff();
    if (uses_probes && cfg.redraw_probes)
      probes = make_probes(data.n(), cfg.t, cfg.probe_kind, cfg.seed + static_cast<std::uint64_t>(k));

    GradResult gr;
    try {
      gr = grad_objective(id, data, hp, gopt);
      if (!std::isfinite(gr.report.value) || !gr.grad.all_finite())
        throw NumericalError("non-finite objective or gradient");
      if (cfg.track_exact) rec.exact_value = value_objective(id, data, hp, exact_opt).value;
      if (test.test) {
        Dataset fitset{data.X, data.Y, std::nullopt, std::nullopt};
        NkrrModel model = fit(fitset, hp);
        rec.test_metric = metric(test.kind, predict(model, test.test->X), test.test->Y).value;
      }
    } catch (const Error& e) {
      rec.diverged = true;
      rec.value = std::numeric_limits<double>::quiet_NaN();
      rec.message = e.what();
      rec.seconds = elapsed();
      res.trajectory.records.push_back(rec);
      res.diverged = true;
      res.diagnostic = "step " + std::to_string(k) + ": " + e.what();
      res.hp = hp_from_vector(last_good, m, d);
      return res;
    }
    rec.value = gr.report.value;
    rec.terms = gr.report.terms;
    rec.seconds = elapsed();
    res.trajectory.records.push_back(rec);
    last_good = theta;
    if (rec.value < best_val) {
      best_val = rec.value;
      best = theta;
      res.best_step = k;
    }
    if (es.update(rec.value)) {
      res.early_stopped = true;
      break;
    }
    adam.step(theta, grad_to_vector(gr.grad), cfg);
  }
  res.hp = hp_from_vector(best, m, d);
  return res;
}

Vec logspace(double lo, double hi, Index count) {
  require(count >= 1 && lo > 0 && hi > 0, "logspace: positive bounds and count required");
  Vec v(count);
  if (count == 1) {
    v[0] = lo;
    return v;
  }
  double a = std::log10(lo), b = std::log10(hi);
  for (Index i = 0; i < count; ++i) v[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return v;
}

GridResult grid_search(ObjectiveId id, const Dataset& data, const Vec& lambda_grid, const Vec& ell_grid,
                       const Mat& Z, const ObjectiveOptions& opt, const TestEval& test) {
  require(lambda_grid.size() >= 1 && ell_grid.size() >= 1, "grid: grids must be nonempty");
  GridResult g;
  g.id = id;
  g.n_lambda = lambda_grid.size();
  g.n_ell = ell_grid.size();
  g.cells.resize(static_cast<size_t>(g.n_lambda * g.n_ell));
  parallel_blocks(g.n_lambda * g.n_ell, [&](Index c) {
    GridCell& cell = g.cells[static_cast<size_t>(c)];
    cell.lambda = lambda_grid[c / g.n_ell];
    cell.ell = ell_grid[c % g.n_ell];
    try {
      HyperParams hp;
      hp.log_lambda = std::log(cell.lambda);
      hp.ls = Lengthscales::constant(data.d(), cell.ell);
      hp.Z = Z;
      cell.report = evaluate(id, data, hp, opt);
      cell.ok = std::isfinite(cell.report.value);
      if (test.test) {
        Dataset fitset{data.X, data.Y, std::nullopt, std::nullopt};
        NkrrModel model = fit(fitset, hp);
        cell.test_error = metric(test.kind, predict(model, test.test->X), test.test->Y).value;
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });
  double best = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < g.cells.size(); ++c)
    if (g.cells[c].ok && g.cells[c].report.value < best) {
      best = g.cells[c].report.value;
      g.argmin = static_cast<Index>(c);
    }
  return g;
}

}  // namespace nytune
