#include "cli.hpp"

#include "nytune/data_io.hpp"
#include "nytune/hyperopt.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace nytune {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr int kExitOk = 0, kExitUsage = 2, kExitNumerical = 3, kExitIo = 4;

// Every flag of every command. The manifest stores the whole struct, so a
// rerun only needs the command name and this snapshot.
struct Config {
  // data
  std::string data;
  std::string format = "delimited";
  std::string delimiter = ",";
  bool header = false;
  std::vector<long> label_cols = {-1};
  long n_features = 0;
  std::string task = "regression";
  double train_frac = 0.7;
  std::string metric;  // empty: RMSE for regression, CERROR otherwise
  std::uint64_t seed = 0;
  std::string out = "nytune_out";
  // optimize / ste-study
  std::string objective = "PROP";
  long m = 100;
  long epochs = 200;
  double lr = 0.05;
  bool ste = false;
  long t = 20;
  std::string probe = "gaussian";
  bool redraw_probes = false;
  double sigma2 = 1.0;
  double prop_reg_factor = 2.0;
  long patience = 1;
  double val_frac = 0.6;
  // grid
  std::vector<std::string> objectives = {"CREG", "GCV"};
  std::vector<double> lambda_grid = {1e-6, 1.0, 7};
  std::vector<double> ell_grid;  // empty: median heuristic times [1/4, 4], 7 points
  // ste-study
  std::vector<long> ts = {10, 20, 100};
  // make-data
  long n = 1000;
  long d = 2;
  double sigma = 0.5;
  double bayes_error = 0.0;  // > 0 makes a binary task with this Bayes error
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, data, format, delimiter, header, label_cols, n_features,
                                                task, train_frac, metric, seed, out, objective, m, epochs, lr, ste,
                                                t, probe, redraw_probes, sigma2, prop_reg_factor, patience, val_frac, objectives,
                                                lambda_grid, ell_grid, ts, n, d, sigma, bayes_error)

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  f.close();
  if (!f) throw IoError("cannot write " + p.string());
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Task parse_task(const std::string& s) {
  if (s == "regression") return Task::REGRESSION;
  if (s == "binary") return Task::BINARY;
  if (s == "multiclass") return Task::MULTICLASS;
  throw ContractError("unknown task '" + s + "' (regression, binary, multiclass)");
}

MetricKind parse_metric(const Config& c) {
  if (c.metric.empty()) return c.task == "regression" ? MetricKind::RMSE : MetricKind::CERROR;
  for (MetricKind k : {MetricKind::RMSE, MetricKind::NRMSE, MetricKind::CERROR, MetricKind::AUC}) {
    std::string name = to_string(k);
    if (std::equal(name.begin(), name.end(), c.metric.begin(), c.metric.end(),
                   [](char a, char b) { return a == std::toupper(static_cast<unsigned char>(b)); }))
      return k;
  }
  throw ContractError("unknown metric '" + c.metric + "' (rmse, nrmse, cerror, auc)");
}

ProbeKind parse_probe(const std::string& s) {
  if (s == "gaussian") return ProbeKind::GAUSSIAN;
  if (s == "rademacher") return ProbeKind::RADEMACHER;
  throw ContractError("unknown probe kind '" + s + "' (gaussian, rademacher)");
}

struct Prepared {
  Dataset train, test;
  json info;
  double seconds = 0.0;
};

Prepared prepare(const Config& c) {
  auto t0 = Clock::now();
  require(!c.data.empty(), "--data is required");
  require(c.train_frac > 0 && c.train_frac <= 1, "--train-frac must be in (0, 1]");
  Schema sc;
  require(!c.delimiter.empty(), "--delimiter must not be empty");
  sc.delimiter = c.delimiter == "tab" || c.delimiter == "\\t" ? '\t' : c.delimiter[0];
  sc.header = c.header;
  sc.label_cols.assign(c.label_cols.begin(), c.label_cols.end());
  sc.n_features = c.n_features;
  Format fmt;
  if (c.format == "delimited")
    fmt = Format::DELIMITED;
  else if (c.format == "sparse")
    fmt = Format::SPARSE_INDEX_VALUE;
  else
    throw ContractError("unknown format '" + c.format + "' (delimited, sparse)");
  Dataset raw = load_dataset(c.data, fmt, sc);
  SplitSpec spec;
  spec.train_frac = c.train_frac;
  Dataset pre = preprocess(raw, parse_task(c.task), c.seed, spec);
  Prepared p;
  p.train = pre.subset(pre.split->train_idx);
  p.test = pre.subset(pre.split->test_idx);
  p.info = {{"path", c.data},
            {"n", raw.n()},
            {"d", raw.d()},
            {"o", raw.o()},
            {"hash", hex64(dataset_hash(raw))},
            {"n_train", p.train.n()},
            {"n_test", p.test.n()},
            {"preprocess", json::parse(preprocess_record_json(*pre.prep))}};
  p.seconds = seconds_since(t0);
  return p;
}

json hp_json(const HyperParams& hp) {
  json z = json::array();
  for (Index i = 0; i < hp.Z.rows(); ++i) z.push_back(vec_json(hp.Z.row(i).transpose()));
  return {{"lambda", hp.lambda()}, {"log_lambda", hp.log_lambda}, {"lengthscales", vec_json(hp.ls.ell())},
          {"m", hp.m()},           {"d", hp.ls.dim()},           {"Z", z}};
}

json record_json(const TrajectoryRecord& r) {
  json j = {{"step", r.step},
            {"value", r.value},
            {"terms",
             {{"data_fit", r.terms.data_fit},
              {"complexity", r.terms.complexity},
              {"trace_gap", r.terms.trace_gap},
              {"regularizer", r.terms.regularizer},
              {"noise_scale", r.terms.noise_scale}}},
            {"lambda", r.lambda},
            {"ell_min", r.ell_min},
            {"ell_mean", r.ell_mean},
            {"ell_max", r.ell_max},
            {"diverged", r.diverged}};
  if (r.test_metric) j["test_metric"] = *r.test_metric;
  if (r.exact_value) j["exact_value"] = *r.exact_value;
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

std::string trajectory_jsonl(const Trajectory& tr) {
  std::string s;
  for (const auto& r : tr.records) s += record_json(r).dump() + "\n";
  return s;
}

OptConfig opt_config(const Config& c, bool ste, long t) {
  OptConfig o;
  o.learning_rate = c.lr;
  o.epochs = c.epochs;
  o.early_stop_patience = c.patience;
  o.seed = c.seed;
  o.ste_mode = ste;
  o.t = t;
  o.probe_kind = parse_probe(c.probe);
  o.redraw_probes = c.redraw_probes;
  o.sigma2 = c.sigma2;
  o.prop_reg_factor = c.prop_reg_factor;
  o.val_frac = c.val_frac;
  o.track_exact = ste;
  o.validate();
  return o;
}

std::optional<double> test_metric(const Prepared& p, const HyperParams& hp, MetricKind k) {
  if (p.test.n() == 0) return std::nullopt;
  NkrrModel model = fit(p.train, hp);
  return metric(k, predict(model, p.test.X), p.test.Y).value;
}

json opt_json(const json& v) { return v; }
json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct RunOutput {
  json manifest;
  int code = kExitOk;
};

json base_manifest(const std::string& command, const Config& c) {
  return {{"command", command},
          {"config", c},
          {"seeds", {{"split", c.seed}, {"init", c.seed}, {"probes", c.seed}, {"val_split", c.seed}}},
          {"threads", num_threads()},
          {"artifacts", json::object()},
          {"timings", json::object()}};
}

json epoch_seconds(const Trajectory& tr) {
  json a = json::array();
  for (const auto& r : tr.records) a.push_back(r.seconds);
  return a;
}

RunOutput cmd_optimize(const Config& c) {
  auto t0 = Clock::now();
  ObjectiveId id = objective_from_string(c.objective);
  MetricKind mk = parse_metric(c);
  OptConfig oc = opt_config(c, c.ste, c.t);
  Prepared p = prepare(c);
  fs::path out(c.out);
  fs::create_directories(out);

  double med = median_heuristic(p.train.X, c.seed);
  HyperParams hp0 = init_hyperparams(p.train, c.m, c.seed);
  TestEval te{p.test.n() ? &p.test : nullptr, mk};
  OptResult res = optimize(id, p.train, oc, hp0, te);

  RunOutput ro;
  ro.code = res.diverged ? kExitNumerical : kExitOk;
  write_text(out / "trajectory.jsonl", trajectory_jsonl(res.trajectory));
  write_text(out / "hp.json", hp_json(res.hp).dump(2) + "\n");
  json summary = {{"objective", to_string(id)},
                  {"mode", c.ste ? "ste" : "exact"},
                  {"metric", to_string(mk)},
                  {"initial_test_metric", opt_json(test_metric(p, hp0, mk))},
                  {"final_test_metric", opt_json(res.diverged && res.trajectory.records.size() <= 1
                                                     ? std::nullopt
                                                     : test_metric(p, res.hp, mk))},
                  {"epochs_run", res.trajectory.records.size()},
                  {"best_step", res.best_step},
                  {"early_stopped", res.early_stopped},
                  {"diverged", res.diverged},
                  {"diagnostic", res.diagnostic}};
  write_text(out / "summary.json", summary.dump(2) + "\n");

  json& m = ro.manifest = base_manifest("optimize", c);
  m["dataset"] = p.info;
  m["resolved"] = {{"objective", to_string(id)},
                   {"m", hp0.m()},
                   {"lambda0", hp0.lambda()},
                   {"n_train", p.train.n()},
                   {"median_heuristic", med},
                   {"ell0", vec_json(hp0.ls.ell())},
                   {"learning_rate", oc.learning_rate},
                   {"epochs", oc.epochs},
                   {"ste", oc.ste_mode},
                   {"t", oc.t},
                   {"sigma2", oc.sigma2},
                   {"patience", oc.early_stop_patience},
                   {"val_frac", oc.val_frac},
                   {"metric", to_string(mk)}};
  m["artifacts"] = {{"trajectory", (out / "trajectory.jsonl").string()},
                    {"hp", (out / "hp.json").string()},
                    {"summary", (out / "summary.json").string()}};
  m["timings"] = {{"load_seconds", p.seconds},
                  {"epoch_seconds", epoch_seconds(res.trajectory)},
                  {"total_seconds", seconds_since(t0)}};
  m["status"] = res.diverged ? "diverged" : "ok";
  if (res.diverged) std::cerr << "nytune: optimization diverged at " << res.diagnostic << "\n";
  std::cout << "optimize " << to_string(id) << ": " << res.trajectory.records.size() << " epochs, test "
            << to_string(mk) << " " << summary["final_test_metric"].dump() << "\n";
  return ro;
}

RunOutput cmd_grid(const Config& c) {
  auto t0 = Clock::now();
  require(!c.objectives.empty(), "--objectives must name at least one objective");
  require(c.lambda_grid.size() == 3, "--lambda-grid takes min,max,count");
  require(c.ell_grid.empty() || c.ell_grid.size() == 3, "--ell-grid takes min,max,count");
  std::vector<ObjectiveId> ids;
  for (const auto& s : c.objectives) ids.push_back(objective_from_string(s));
  MetricKind mk = parse_metric(c);
  Prepared p = prepare(c);
  fs::path out(c.out);
  fs::create_directories(out);

  auto count = [](double v) {
    require(v >= 1 && v == std::floor(v), "grid count must be a positive integer");
    return static_cast<Index>(v);
  };
  Vec lg = logspace(c.lambda_grid[0], c.lambda_grid[1], count(c.lambda_grid[2]));
  double med = median_heuristic(p.train.X, c.seed);
  Vec eg = c.ell_grid.empty() ? logspace(0.25 * med, 4.0 * med, 7)
                              : logspace(c.ell_grid[0], c.ell_grid[1], count(c.ell_grid[2]));
  Mat Z = init_hyperparams(p.train, c.m, c.seed).Z;

  ObjectiveOptions oo;
  oo.sigma2 = c.sigma2;
  oo.prop_reg_factor = c.prop_reg_factor;
  // HOLD_OUT validates on a share of the training data, split as in optimize
  Dataset held = p.train;
  {
    Split s = random_split(held.n(), 1.0 - c.val_frac, c.seed);
    held.split = Split{s.train_idx, s.test_idx, {}};
  }
  TestEval te{p.test.n() ? &p.test : nullptr, mk};
  std::vector<GridResult> results;
  for (size_t k = 0; k < ids.size(); ++k)
    results.push_back(grid_search(ids[k], ids[k] == ObjectiveId::HOLD_OUT ? held : p.train, lg, eg, Z, oo,
                                  k == 0 ? te : TestEval{}));

  std::ostringstream csv;
  csv << "lambda,ell";
  for (ObjectiveId id : ids) csv << "," << to_string(id);
  csv << ",test_error\n";
  const auto& cells0 = results[0].cells;
  for (size_t i = 0; i < cells0.size(); ++i) {
    csv << num(cells0[i].lambda) << "," << num(cells0[i].ell);
    for (const auto& r : results) csv << "," << num(r.cells[i].ok ? r.cells[i].report.value : NAN);
    csv << "," << num(cells0[i].test_error) << "\n";
  }
  write_text(out / "grid.csv", csv.str());

  json argmin = json::object(), failures = json::object();
  for (const auto& r : results) {
    std::string name = to_string(r.id);
    if (r.argmin < 0) {
      argmin[name] = nullptr;
    } else {
      const GridCell& g = r.cells[static_cast<size_t>(r.argmin)];
      argmin[name] = {{"cell", r.argmin},
                      {"lambda_index", r.argmin / r.n_ell},
                      {"ell_index", r.argmin % r.n_ell},
                      {"lambda", g.lambda},
                      {"ell", g.ell},
                      {"value", g.report.value},
                      {"test_error", opt_json(std::isnan(cells0[static_cast<size_t>(r.argmin)].test_error)
                                                  ? std::nullopt
                                                  : std::optional<double>(cells0[static_cast<size_t>(r.argmin)].test_error))}};
    }
    json f = json::array();
    for (size_t i = 0; i < r.cells.size(); ++i)
      if (!r.cells[i].ok) f.push_back({{"cell", i}, {"error", r.cells[i].error}});
    failures[name] = f;
  }
  write_text(out / "grid_argmin.json", json({{"argmin", argmin}, {"failed_cells", failures}}).dump(2) + "\n");

  RunOutput ro;
  json& m = ro.manifest = base_manifest("grid", c);
  m["dataset"] = p.info;
  m["resolved"] = {{"lambda_grid", vec_json(lg)}, {"ell_grid", vec_json(eg)}, {"median_heuristic", med},
                   {"m", Z.rows()},               {"metric", to_string(mk)}};
  m["artifacts"] = {{"grid", (out / "grid.csv").string()}, {"argmin", (out / "grid_argmin.json").string()}};
  m["timings"] = {{"load_seconds", p.seconds}, {"total_seconds", seconds_since(t0)}};
  m["status"] = "ok";
  std::cout << "grid " << lg.size() << "x" << eg.size() << ", " << ids.size() << " objective(s)\n";
  return ro;
}

double rel_gap(double a, double ref) { return std::abs(a - ref) / std::max(std::abs(ref), 1e-300); }

RunOutput cmd_ste_study(const Config& c) {
  auto t0 = Clock::now();
  require(!c.ts.empty(), "--ts must list at least one probe count");
  ObjectiveId id = objective_from_string(c.objective);
  MetricKind mk = parse_metric(c);
  Prepared p = prepare(c);
  fs::path out(c.out);
  fs::create_directories(out);
  HyperParams hp0 = init_hyperparams(p.train, c.m, c.seed);
  TestEval te{p.test.n() ? &p.test : nullptr, mk};

  RunOutput ro;
  json& m = ro.manifest = base_manifest("ste-study", c);
  json runs = json::array(), timings = json::object();

  OptResult exact = optimize(id, p.train, opt_config(c, false, c.t), hp0, te);
  write_text(out / "trajectory_exact.jsonl", trajectory_jsonl(exact.trajectory));
  m["artifacts"]["exact"] = (out / "trajectory_exact.jsonl").string();
  timings["exact"] = epoch_seconds(exact.trajectory);
  runs.push_back({{"name", "exact"},
                  {"epochs_run", exact.trajectory.records.size()},
                  {"final_value", exact.trajectory.records.empty() ? json(nullptr)
                                                                   : json(exact.trajectory.records.back().value)},
                  {"diverged", exact.diverged},
                  {"diagnostic", exact.diagnostic}});
  if (exact.diverged) ro.code = kExitNumerical;

  for (long t : c.ts) {
    OptResult r = optimize(id, p.train, opt_config(c, true, t), hp0, te);
    std::string name = "t" + std::to_string(t);
    fs::path path = out / ("trajectory_" + name + ".jsonl");
    write_text(path, trajectory_jsonl(r.trajectory));
    m["artifacts"][name] = path.string();
    timings[name] = epoch_seconds(r.trajectory);
    // gap between this run's objective and the exact run's curve, epoch by epoch
    const auto& a = r.trajectory.records;
    const auto& b = exact.trajectory.records;
    size_t common = std::min(a.size(), b.size());
    double max_gap = 0, sum_gap = 0;
    size_t within = 0, counted = 0;
    for (size_t k = 0; k < common; ++k) {
      if (a[k].diverged || b[k].diverged) continue;
      double g = rel_gap(a[k].value, b[k].value);
      max_gap = std::max(max_gap, g);
      sum_gap += g;
      within += g <= 0.05;
      ++counted;
    }
    runs.push_back({{"name", name},
                    {"t", t},
                    {"epochs_run", a.size()},
                    {"final_value", a.empty() ? json(nullptr) : json(a.back().value)},
                    {"final_exact_value", a.empty() || !a.back().exact_value ? json(nullptr)
                                                                             : json(*a.back().exact_value)},
                    {"diverged", r.diverged},
                    {"diagnostic", r.diagnostic},
                    {"epochs_compared", counted},
                    {"max_rel_gap", counted ? json(max_gap) : json(nullptr)},
                    {"mean_rel_gap", counted ? json(sum_gap / static_cast<double>(counted)) : json(nullptr)},
                    {"frac_within_5pct", counted ? json(static_cast<double>(within) / static_cast<double>(counted))
                                                 : json(nullptr)}});
  }
  write_text(out / "study_summary.json", json({{"objective", to_string(id)}, {"runs", runs}}).dump(2) + "\n");

  m["artifacts"]["summary"] = (out / "study_summary.json").string();
  m["dataset"] = p.info;
  m["resolved"] = {{"objective", to_string(id)}, {"lambda0", hp0.lambda()}, {"ell0", vec_json(hp0.ls.ell())},
                   {"m", hp0.m()},               {"ts", c.ts},              {"metric", to_string(mk)}};
  m["timings"] = {{"load_seconds", p.seconds}, {"epoch_seconds", timings}, {"total_seconds", seconds_since(t0)}};
  m["status"] = ro.code == kExitOk ? "ok" : "diverged";
  std::cout << "ste-study " << to_string(id) << ": exact + " << c.ts.size() << " STE run(s)\n";
  return ro;
}

RunOutput cmd_make_data(const Config& c) {
  auto t0 = Clock::now();
  require(c.n >= 2 && c.d >= 1, "make-data: need n >= 2 and d >= 1");
  fs::path out(c.out);
  fs::create_directories(out);
  Dataset ds;
  json info;
  if (c.bayes_error > 0) {
    SyntheticBinary sb = make_synthetic_binary(c.n, c.d, c.bayes_error, c.seed);
    ds = sb.data;
    info = {{"kind", "binary"}, {"bayes_error", sb.bayes_error}, {"noise_scale", sb.noise_scale}};
  } else {
    SyntheticProblem sp = make_synthetic(c.n, c.d, c.sigma, c.seed);
    ds = sp.data;
    info = {{"kind", "regression"}, {"sigma", sp.sigma}};
  }
  save_delimited((out / "data.csv").string(), ds);
  RunOutput ro;
  json& m = ro.manifest = base_manifest("make-data", c);
  m["dataset"] = {{"n", ds.n()}, {"d", ds.d()}, {"o", ds.o()}, {"hash", hex64(dataset_hash(ds))}};
  m["resolved"] = info;
  m["artifacts"] = {{"data", (out / "data.csv").string()}};
  m["timings"] = {{"total_seconds", seconds_since(t0)}};
  m["status"] = "ok";
  std::cout << "wrote " << (out / "data.csv").string() << "\n";
  return ro;
}

RunOutput dispatch(const std::string& command, const Config& c) {
  if (command == "optimize") return cmd_optimize(c);
  if (command == "grid") return cmd_grid(c);
  if (command == "ste-study") return cmd_ste_study(c);
  if (command == "make-data") return cmd_make_data(c);
  throw ContractError("unknown command '" + command + "'");
}

void add_data_flags(CLI::App* a, Config& c) {
  a->add_option("--data", c.data, "Input dataset path")->required();
  a->add_option("--format", c.format, "delimited or sparse (index:value)")->capture_default_str();
  a->add_option("--delimiter", c.delimiter, "Field delimiter ('tab' for tabs)")->capture_default_str();
  a->add_flag("--header", c.header, "First line is a header");
  a->add_option("--label-col", c.label_cols, "Label column(s); negative counts from the end")->capture_default_str();
  a->add_option("--n-features", c.n_features, "Feature count for sparse input (0 = infer)");
  a->add_option("--task", c.task, "regression, binary or multiclass")->capture_default_str();
  a->add_option("--train-frac", c.train_frac, "Training share; the rest is the test set")->capture_default_str();
  a->add_option("--metric", c.metric, "Test metric: rmse, nrmse, cerror, auc");
  a->add_option("--seed", c.seed, "Seed for split, initialization and probes")->capture_default_str();
  a->add_option("--out", c.out, "Output directory")->capture_default_str();
  a->add_option("--m", c.m, "Number of Nystrom centers")->capture_default_str()->check(CLI::PositiveNumber);
  a->add_option("--sigma2", c.sigma2, "Noise variance estimate")->capture_default_str()->check(CLI::NonNegativeNumber);
  a->add_option("--prop-reg-factor", c.prop_reg_factor, "Factor on lambda ||f||^2 in PROP (1 or 2)")
      ->capture_default_str();
  a->add_option("--val-frac", c.val_frac, "HOLD_OUT validation share of the training data")->capture_default_str();
}

void add_opt_flags(CLI::App* a, Config& c) {
  a->add_option("--objective", c.objective, "HOLD_OUT, LOOCV, GCV, CREG, SGPR or PROP")->capture_default_str();
  a->add_option("--epochs", c.epochs, "Adam epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
  a->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  a->add_option("--t", c.t, "Probe vectors for stochastic trace estimation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  a->add_option("--probe", c.probe, "gaussian or rademacher")->capture_default_str();
  a->add_flag("--redraw-probes", c.redraw_probes, "Fresh probes every epoch instead of one fixed set");
  a->add_option("--patience", c.patience, "Consecutive increases before stopping (0 = never)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Nystrom kernel ridge regression hyperparameter tuning"};
  app.require_subcommand(1);
  Config c;

  CLI::App* opt = app.add_subcommand("optimize", "Gradient-based tuning of lambda, lengthscales and centers");
  add_data_flags(opt, c);
  add_opt_flags(opt, c);
  opt->add_flag("--ste,!--exact", c.ste, "Use stochastic trace estimation (default exact)");

  CLI::App* grid = app.add_subcommand("grid", "Evaluate objectives on a lambda x lengthscale grid");
  add_data_flags(grid, c);
  grid->add_option("--objectives", c.objectives, "Objectives to evaluate")->delimiter(',')->capture_default_str();
  grid->add_option("--lambda-grid", c.lambda_grid, "min,max,count (log-spaced)")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  grid->add_option("--ell-grid", c.ell_grid, "min,max,count (default: median heuristic x [1/4, 4], 7)")
      ->delimiter(',')
      ->expected(3);

  CLI::App* study = app.add_subcommand("ste-study", "Exact run plus one STE run per probe count");
  add_data_flags(study, c);
  add_opt_flags(study, c);
  study->add_option("--ts", c.ts, "Probe counts")->delimiter(',')->capture_default_str();

  CLI::App* mk = app.add_subcommand("make-data", "Write a synthetic dataset");
  mk->add_option("--n", c.n, "Rows")->capture_default_str();
  mk->add_option("--d", c.d, "Features")->capture_default_str();
  mk->add_option("--sigma", c.sigma, "Label noise (regression)")->capture_default_str();
  mk->add_option("--bayes-error", c.bayes_error, "Binary task with this Bayes error");
  mk->add_option("--seed", c.seed)->capture_default_str();
  mk->add_option("--out", c.out, "Output directory")->capture_default_str();

  std::string manifest_path, rerun_out;
  CLI::App* rerun = app.add_subcommand("rerun", "Repeat a run from its manifest");
  rerun->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();
  rerun->add_option("--out", rerun_out, "Output directory (default: the original one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    std::string command;
    json prior;
    if (rerun->parsed()) {
      std::ifstream f(manifest_path);
      if (!f) throw IoError("cannot read manifest " + manifest_path);
      prior = json::parse(f);
      command = prior.at("command").get<std::string>();
      c = prior.at("config").get<Config>();
      if (!rerun_out.empty()) c.out = rerun_out;
    } else {
      command = app.get_subcommands().front()->get_name();
    }
    RunOutput ro = dispatch(command, c);
    if (!prior.is_null() && prior.contains("dataset") && prior["dataset"].contains("hash") &&
        ro.manifest["dataset"]["hash"] != prior["dataset"]["hash"])
      throw IoError("dataset content differs from the one recorded in " + manifest_path);
    ro.manifest["exit_code"] = ro.code;
    fs::path mp = fs::path(c.out) / "manifest.json";
    ro.manifest["artifacts"]["manifest"] = mp.string();
    write_text(mp, ro.manifest.dump(2) + "\n");
    return ro.code;
  } catch (const ContractError& e) {
    std::cerr << "nytune: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "nytune: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "nytune: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "nytune: " << e.what() << "\n";
    return kExitIo;
  } catch (const json::exception& e) {
    std::cerr << "nytune: bad manifest: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "nytune: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace nytune
