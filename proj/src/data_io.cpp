#include "nytune/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nytune {

void Dataset::validate() const {
  require(X.rows() == Y.rows(), "dataset: X and Y row counts differ");
  require(X.allFinite() && Y.allFinite(), "dataset: NaN or Inf entry");
  if (split) {
    std::vector<char> seen(static_cast<size_t>(n()), 0);
    for (const auto* part : {&split->train_idx, &split->val_idx, &split->test_idx}) {
      for (Index i : *part) {
        require(i >= 0 && i < n(), "dataset: split index out of range");
        require(!seen[static_cast<size_t>(i)], "dataset: split parts overlap");
        seen[static_cast<size_t>(i)] = 1;
      }
    }
  }
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.X.resize(static_cast<Index>(rows.size()), d());
  out.Y.resize(static_cast<Index>(rows.size()), o());
  for (size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < n(), "subset: row index out of range");
    out.X.row(static_cast<Index>(r)) = X.row(rows[r]);
    out.Y.row(static_cast<Index>(r)) = Y.row(rows[r]);
  }
  out.prep = prep;
  return out;
}

namespace {

std::string where(const std::string& path, size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

bool parse_double(const std::string& tok, double& v) {
  if (tok.empty()) return false;
  char* end = nullptr;
  v = std::strtod(tok.c_str(), &end);
  while (end && *end && std::isspace(static_cast<unsigned char>(*end))) ++end;
  return end && *end == '\0' && std::isfinite(v);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Dataset load_delimited(std::istream& in, const std::string& path, const Schema& schema) {
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t lineno = 0;
  size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (schema.header && lineno == 1) continue;
    std::string t = trim(line);
    if (t.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(t);
    std::string tok;
    while (std::getline(ss, tok, schema.delimiter)) {
      double v;
      if (!parse_double(trim(tok), v)) throw IoError(where(path, lineno) + "malformed field '" + tok + "'");
      vals.push_back(v);
    }
    if (!t.empty() && t.back() == schema.delimiter)
      throw IoError(where(path, lineno) + "trailing delimiter");
    if (width == 0) width = vals.size();
    if (vals.size() != width)
      throw IoError(where(path, lineno) + "expected " + std::to_string(width) + " fields, got " +
                    std::to_string(vals.size()));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError(path + ": empty file");

  std::vector<Index> lab;
  for (Index c : schema.label_cols) {
    Index cc = c < 0 ? static_cast<Index>(width) + c : c;
    if (cc < 0 || cc >= static_cast<Index>(width)) throw IoError(path + ": label column out of range");
    lab.push_back(cc);
  }
  std::set<Index> labset(lab.begin(), lab.end());
  if (labset.size() != lab.size() || lab.size() >= width)
    throw IoError(path + ": schema leaves no feature columns");

  Dataset ds;
  const Index n = static_cast<Index>(rows.size());
  ds.X.resize(n, static_cast<Index>(width - lab.size()));
  ds.Y.resize(n, static_cast<Index>(lab.size()));
  for (Index i = 0; i < n; ++i) {
    Index fx = 0;
    for (Index c = 0; c < static_cast<Index>(width); ++c)
      if (!labset.count(c)) ds.X(i, fx++) = rows[static_cast<size_t>(i)][static_cast<size_t>(c)];
    for (size_t k = 0; k < lab.size(); ++k)
      ds.Y(i, static_cast<Index>(k)) = rows[static_cast<size_t>(i)][static_cast<size_t>(lab[k])];
  }
  return ds;
}

Dataset load_sparse(std::istream& in, const std::string& path, const Schema& schema) {
  struct Row {
    double label;
    std::vector<std::pair<Index, double>> entries;
  };
  std::vector<Row> rows;
  std::string line;
  size_t lineno = 0;
  Index maxidx = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    std::stringstream ss(t);
    std::string tok;
    Row r;
    ss >> tok;
    if (!parse_double(tok, r.label)) throw IoError(where(path, lineno) + "malformed label '" + tok + "'");
    std::set<Index> used;
    while (ss >> tok) {
      size_t colon = tok.find(':');
      if (colon == std::string::npos) throw IoError(where(path, lineno) + "expected idx:val, got '" + tok + "'");
      std::string is = tok.substr(0, colon), vs = tok.substr(colon + 1);
      char* end = nullptr;
      long long idx = std::strtoll(is.c_str(), &end, 10);
      double v;
      if (is.empty() || *end != '\0' || idx < 1) throw IoError(where(path, lineno) + "bad index '" + is + "'");
      if (!parse_double(vs, v)) throw IoError(where(path, lineno) + "bad value '" + vs + "'");
      if (!used.insert(static_cast<Index>(idx)).second)
        throw IoError(where(path, lineno) + "duplicate index " + is);
      if (schema.n_features > 0 && idx > schema.n_features)
        throw IoError(where(path, lineno) + "index " + is + " exceeds feature count");
      maxidx = std::max<Index>(maxidx, static_cast<Index>(idx));
      r.entries.emplace_back(static_cast<Index>(idx - 1), v);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw IoError(path + ": empty file");
  Index d = schema.n_features > 0 ? schema.n_features : maxidx;
  if (d < 1) throw IoError(path + ": no features");
  Dataset ds;
  ds.X = Mat::Zero(static_cast<Index>(rows.size()), d);
  ds.Y.resize(static_cast<Index>(rows.size()), 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    ds.Y(static_cast<Index>(i), 0) = rows[i].label;
    for (auto [j, v] : rows[i].entries) ds.X(static_cast<Index>(i), j) = v;
  }
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& path, Format format, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open file");
  return format == Format::DELIMITED ? load_delimited(in, path, schema) : load_sparse(in, path, schema);
}

void save_delimited(const std::string& path, const Dataset& ds, char delimiter) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << std::setprecision(17);
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index j = 0; j < ds.d(); ++j) out << (j ? std::string(1, delimiter) : "") << ds.X(i, j);
    for (Index k = 0; k < ds.o(); ++k) out << delimiter << ds.Y(i, k);
    out << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

Split random_split(Index n, double train_frac, std::uint64_t seed) {
  require(n >= 1, "split: empty dataset");
  require(train_frac > 0 && train_frac <= 1, "split: train fraction must be in (0, 1]");
  std::vector<Index> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> ud(0, i);
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(ud(rng))]);
  }
  Index ntr = static_cast<Index>(std::llround(train_frac * static_cast<double>(n)));
  ntr = std::clamp<Index>(ntr, 1, n);
  Split sp;
  sp.train_idx.assign(perm.begin(), perm.begin() + ntr);
  sp.test_idx.assign(perm.begin() + ntr, perm.end());
  std::sort(sp.train_idx.begin(), sp.train_idx.end());
  std::sort(sp.test_idx.begin(), sp.test_idx.end());
  return sp;
}

Dataset preprocess(const Dataset& ds, Task task, std::uint64_t seed, const SplitSpec& spec) {
  ds.validate();
  require(ds.n() >= 1 && ds.d() >= 1 && ds.o() >= 1, "preprocess: empty dataset");
  Split sp = spec.fixed ? *spec.fixed : random_split(ds.n(), spec.train_frac, seed);
  {
    Dataset chk{ds.X, ds.Y, sp, std::nullopt};
    chk.validate();
  }
  require(!sp.train_idx.empty(), "preprocess: empty training part");
  const double ntr = static_cast<double>(sp.train_idx.size());

  PreprocessRecord rec;
  rec.task = task;
  std::vector<double> means, stds;
  for (Index j = 0; j < ds.d(); ++j) {
    double mean = 0.0;
    for (Index i : sp.train_idx) mean += ds.X(i, j);
    mean /= ntr;
    double var = 0.0;
    for (Index i : sp.train_idx) var += (ds.X(i, j) - mean) * (ds.X(i, j) - mean);
    double sd = std::sqrt(var / ntr);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      rec.dropped_features.push_back(j);
      rec.warnings.push_back("feature " + std::to_string(j) + " has zero variance on the training part; dropped");
      continue;
    }
    rec.kept_features.push_back(j);
    means.push_back(mean);
    stds.push_back(sd);
  }
  require(!rec.kept_features.empty(), "preprocess: every feature has zero variance");
  const Index dk = static_cast<Index>(rec.kept_features.size());
  rec.feature_mean = Eigen::Map<Vec>(means.data(), dk);
  rec.feature_std = Eigen::Map<Vec>(stds.data(), dk);

  Dataset out;
  out.X.resize(ds.n(), dk);
  for (Index c = 0; c < dk; ++c)
    out.X.col(c) = (ds.X.col(rec.kept_features[static_cast<size_t>(c)]).array() - means[static_cast<size_t>(c)]) /
                   stds[static_cast<size_t>(c)];

  switch (task) {
    case Task::REGRESSION: {
      require(ds.o() == 1, "preprocess: regression expects a single label column");
      double mean = 0.0;
      for (Index i : sp.train_idx) mean += ds.Y(i, 0);
      mean /= ntr;
      double var = 0.0;
      for (Index i : sp.train_idx) var += (ds.Y(i, 0) - mean) * (ds.Y(i, 0) - mean);
      double sd = std::sqrt(var / ntr);
      require(sd > 0, "preprocess: regression labels are constant on the training part");
      rec.label_mean = mean;
      rec.label_std = sd;
      out.Y = (ds.Y.array() - mean) / sd;
      break;
    }
    case Task::BINARY: {
      require(ds.o() == 1, "preprocess: binary task expects a single label column");
      std::set<double> cls(ds.Y.data(), ds.Y.data() + ds.n());
      require(cls.size() >= 2, "preprocess: single-class labels");
      require(cls.size() == 2, "preprocess: binary task with more than two label values");
      rec.classes.assign(cls.begin(), cls.end());
      out.Y.resize(ds.n(), 1);
      for (Index i = 0; i < ds.n(); ++i) out.Y(i, 0) = ds.Y(i, 0) == rec.classes[0] ? -1.0 : 1.0;
      break;
    }
    case Task::MULTICLASS: {
      if (ds.o() > 1) {
        // Already one-hot: validate and keep.
        for (Index i = 0; i < ds.n(); ++i) {
          bool ok = std::abs(ds.Y.row(i).sum() - 1.0) < 1e-12 &&
                    ((ds.Y.row(i).array() == 0.0) || (ds.Y.row(i).array() == 1.0)).all();
          require(ok, "preprocess: multi-column labels are not one-hot");
        }
        for (Index k = 0; k < ds.o(); ++k) rec.classes.push_back(static_cast<double>(k));
        out.Y = ds.Y;
        break;
      }
      std::set<double> cls(ds.Y.data(), ds.Y.data() + ds.n());
      require(cls.size() >= 2, "preprocess: single-class labels");
      rec.classes.assign(cls.begin(), cls.end());
      std::map<double, Index> pos;
      for (size_t k = 0; k < rec.classes.size(); ++k) pos[rec.classes[k]] = static_cast<Index>(k);
      out.Y = Mat::Zero(ds.n(), static_cast<Index>(cls.size()));
      for (Index i = 0; i < ds.n(); ++i) out.Y(i, pos[ds.Y(i, 0)]) = 1.0;
      break;
    }
  }
  out.split = sp;
  out.prep = rec;
  return out;
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::RMSE: return "RMSE";
    case MetricKind::NRMSE: return "NRMSE";
    case MetricKind::CERROR: return "CERROR";
    case MetricKind::AUC: return "AUC";
  }
  return "?";
}

std::string to_string(Task t) {
  switch (t) {
    case Task::REGRESSION: return "REGRESSION";
    case Task::BINARY: return "BINARY";
    case Task::MULTICLASS: return "MULTICLASS";
  }
  return "?";
}

MetricValue metric(MetricKind kind, const Mat& pred, const Mat& tgt) {
  require(pred.rows() == tgt.rows() && pred.cols() == tgt.cols(), "metric: shape mismatch");
  require(pred.rows() >= 1, "metric: empty input");
  const double n = static_cast<double>(pred.rows());
  switch (kind) {
    case MetricKind::RMSE: return {kind, std::sqrt((pred - tgt).squaredNorm() / n)};
    case MetricKind::NRMSE: {
      double mean = tgt.mean();
      if (std::abs(mean) <= 1e-12 * tgt.cwiseAbs().maxCoeff()) throw DegenerateError("NRMSE: mean target is zero");
      double rmse = std::sqrt((pred - tgt).squaredNorm() / n);
      return {kind, std::abs(rmse / mean)};
    }
    case MetricKind::CERROR: {
      Index wrong = 0;
      for (Index i = 0; i < pred.rows(); ++i) {
        if (pred.cols() == 1) {
          bool p = pred(i, 0) >= 0.0, t = tgt(i, 0) >= 0.0;
          wrong += p != t;
        } else {
          Index pi, ti;
          pred.row(i).maxCoeff(&pi);
          tgt.row(i).maxCoeff(&ti);
          wrong += pi != ti;
        }
      }
      return {kind, static_cast<double>(wrong) / n};
    }
    case MetricKind::AUC: {
      require(pred.cols() == 1, "AUC: expects a single score column");
      const Index N = pred.rows();
      std::vector<Index> ord(static_cast<size_t>(N));
      std::iota(ord.begin(), ord.end(), Index{0});
      std::sort(ord.begin(), ord.end(), [&](Index a, Index b) { return pred(a, 0) < pred(b, 0); });
      // Average ranks over ties (1-based).
      std::vector<double> rank(static_cast<size_t>(N));
      for (Index i = 0; i < N;) {
        Index j = i;
        while (j + 1 < N && pred(ord[static_cast<size_t>(j + 1)], 0) == pred(ord[static_cast<size_t>(i)], 0)) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Index k = i; k <= j; ++k) rank[static_cast<size_t>(ord[static_cast<size_t>(k)])] = r;
        i = j + 1;
      }
      double npos = 0, rsum = 0;
      for (Index i = 0; i < N; ++i)
        if (tgt(i, 0) > 0) {
          npos += 1;
          rsum += rank[static_cast<size_t>(i)];
        }
      double nneg = static_cast<double>(N) - npos;
      if (npos == 0 || nneg == 0) throw DegenerateError("AUC: targets contain a single class");
      return {kind, (rsum - npos * (npos + 1) / 2.0) / (npos * nneg)};
    }
  }
  throw ContractError("metric: unknown kind");
}

Vec SyntheticTarget::eval(const Mat& X) const { return kernel_matrix(X, Z, ls) * beta; }

namespace {

SyntheticTarget random_target(std::mt19937_64& rng, Index d, Index m_star, double ell_star) {
  std::normal_distribution<double> nd(0.0, 1.0);
  SyntheticTarget t;
  t.Z.resize(m_star, d);
  for (Index i = 0; i < m_star; ++i)
    for (Index j = 0; j < d; ++j) t.Z(i, j) = nd(rng);
  t.beta.resize(m_star);
  for (Index i = 0; i < m_star; ++i) t.beta[i] = nd(rng);
  t.ls = Lengthscales::constant(d, ell_star);
  return t;
}

Mat gaussian_design(std::mt19937_64& rng, Index n, Index d) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat X(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) X(i, j) = nd(rng);
  return X;
}

}  // namespace

SyntheticProblem make_synthetic(Index n, Index d, double sigma, std::uint64_t seed, Index m_star,
                                double ell_star) {
  require(n >= 1 && d >= 1 && m_star >= 1, "synthetic: sizes must be positive");
  require(sigma >= 0, "synthetic: sigma must be non-negative");
  std::mt19937_64 rng(seed);
  SyntheticProblem p;
  p.data.X = gaussian_design(rng, n, d);
  p.target = random_target(rng, d, m_star, ell_star);
  p.f_star = p.target.eval(p.data.X);
  p.sigma = sigma;
  p.data.Y = draw_labels(p.f_star, sigma, seed ^ 0x9e3779b97f4a7c15ULL);
  return p;
}

Mat draw_labels(const Vec& f_star, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat Y(f_star.size(), 1);
  for (Index i = 0; i < f_star.size(); ++i) Y(i, 0) = f_star[i] + sigma * nd(rng);
  return Y;
}

SyntheticBinary make_synthetic_binary(Index n, Index d, double bayes_error, std::uint64_t seed,
                                      Index m_star, double ell_star) {
  require(bayes_error > 0 && bayes_error < 0.5, "synthetic binary: Bayes error must be in (0, 0.5)");
  std::mt19937_64 rng(seed);
  SyntheticBinary b;
  b.data.X = gaussian_design(rng, n, d);
  b.target = random_target(rng, d, m_star, ell_star);
  Vec f = b.target.eval(b.data.X);
  auto err_at = [&](double s) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += 0.5 * std::erfc(std::abs(f[i]) / (s * std::sqrt(2.0)));
    return acc / static_cast<double>(n);
  };
  double lo = 1e-8, hi = 1.0;
  while (err_at(hi) < bayes_error) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (err_at(mid) < bayes_error ? lo : hi) = mid;
  }
  b.noise_scale = 0.5 * (lo + hi);
  b.bayes_error = err_at(b.noise_scale);
  std::normal_distribution<double> nd(0.0, 1.0);
  b.data.Y.resize(n, 1);
  for (Index i = 0; i < n; ++i) b.data.Y(i, 0) = f[i] + b.noise_scale * nd(rng) >= 0 ? 1.0 : -1.0;
  return b;
}

std::string preprocess_record_json(const PreprocessRecord& rec) {
  nlohmann::json j;
  j["task"] = to_string(rec.task);
  j["kept_features"] = rec.kept_features;
  j["dropped_features"] = rec.dropped_features;
  j["feature_mean"] = std::vector<double>(rec.feature_mean.data(), rec.feature_mean.data() + rec.feature_mean.size());
  j["feature_std"] = std::vector<double>(rec.feature_std.data(), rec.feature_std.data() + rec.feature_std.size());
  j["label_mean"] = rec.label_mean;
  j["label_std"] = rec.label_std;
  j["classes"] = rec.classes;
  j["warnings"] = rec.warnings;
  return j.dump(2);
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, size_t len) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < len; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  Index dims[4] = {ds.X.rows(), ds.X.cols(), ds.Y.rows(), ds.Y.cols()};
  mix(dims, sizeof(dims));
  mix(ds.X.data(), sizeof(double) * static_cast<size_t>(ds.X.size()));
  mix(ds.Y.data(), sizeof(double) * static_cast<size_t>(ds.Y.size()));
  return h;
}

}  // namespace nytune
