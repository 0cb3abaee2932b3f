#include "drtep/uncertainty.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "drtep/rng.hpp"
#include "drtep/stats.hpp"

namespace drtep {

void AmbiguityConfig::validate() const {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("risk level must be in (0,1)");
  if (!(theta > 0.0)) throw std::invalid_argument("ambiguity radius must be positive");
  if (n < 1) throw std::invalid_argument("need at least one training sample");
}

namespace {

constexpr int kGridPoints = 4097;

void build_cdf_grid(CopulaModel::Marginal& m) {
  if (m.bandwidth == 0) return;  // point mass needs no table
  double lo = m.points.front() - 10 * m.bandwidth;
  double hi = m.points.back() + 10 * m.bandwidth;
  m.grid_x.resize(kGridPoints);
  m.grid_F.resize(kGridPoints);
  for (int g = 0; g < kGridPoints; ++g) {
    double x = lo + (hi - lo) * double(g) / double(kGridPoints - 1);
    double F = 0;
    for (double p : m.points) F += Rng::normal_cdf((x - p) / m.bandwidth);
    m.grid_x[size_t(g)] = x;
    m.grid_F[size_t(g)] = F / double(m.points.size());
  }
}

}  // namespace

CopulaModel fit_copula(const std::vector<std::vector<double>>& history_rows) {
  const size_t n = history_rows.size();
  if (n < 20) throw std::invalid_argument("copula fit needs at least 20 history rows");
  const size_t dim = history_rows.front().size();
  if (dim == 0) throw std::invalid_argument("copula fit needs at least one coordinate");
  for (const auto& r : history_rows)
    if (r.size() != dim) throw std::invalid_argument("ragged history table");

  CopulaModel model;
  model.marginals.resize(dim);
  std::vector<std::vector<double>> cols(dim, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i)
    for (size_t d = 0; d < dim; ++d) {
      double v = history_rows[i][d];
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite history entry");
      cols[d][i] = v;
    }

  for (size_t d = 0; d < dim; ++d) {
    auto& m = model.marginals[d];
    m.points = cols[d];
    std::sort(m.points.begin(), m.points.end());
    double sd = stddev(m.points);
    double iqr_scaled = interquartile_range(m.points) / 1.34;
    double scale = iqr_scaled > 0 ? std::min(sd, iqr_scaled) : sd;
    m.bandwidth = scale > 0 ? 0.9 * scale * std::pow(double(n), -0.2) : 0.0;
    build_cdf_grid(m);
  }

  // normal scores: average ranks -> uniform -> standard normal, then plain correlation
  std::vector<std::vector<double>> z(dim);
  std::vector<char> degenerate(dim, 0);
  for (size_t d = 0; d < dim; ++d) {
    if (model.marginals[d].bandwidth == 0) {
      degenerate[d] = 1;
      continue;
    }
    auto ranks = average_ranks(cols[d]);
    z[d].resize(n);
    for (size_t i = 0; i < n; ++i)
      z[d][i] = Rng::inverse_normal_cdf(ranks[i] / double(n + 1));
  }

  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(int(dim), int(dim));
  for (size_t a = 0; a < dim; ++a)
    for (size_t b = a + 1; b < dim; ++b) {
      double rho = (degenerate[a] || degenerate[b]) ? 0.0 : pearson(z[a], z[b]);
      R(int(a), int(b)) = rho;
      R(int(b), int(a)) = rho;
    }

  // eigenvalue floor keeps the table usable even when the empirical estimate is rank
  // deficient (duplicated farms give exactly correlated scores)
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
  Eigen::MatrixXd Rp = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  for (int a = 0; a < int(dim); ++a) {
    double da = std::sqrt(Rp(a, a));
    for (int b = 0; b < int(dim); ++b) Rp(a, b) /= da * std::sqrt(Rp(b, b));
  }
  for (int a = 0; a < int(dim); ++a) Rp(a, a) = 1.0;

  Eigen::LLT<Eigen::MatrixXd> llt(Rp);
  if (llt.info() != Eigen::Success) {
    Rp += 1e-8 * Eigen::MatrixXd::Identity(int(dim), int(dim));
    llt.compute(Rp);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("correlation table could not be factorized");
  }
  Eigen::MatrixXd L = llt.matrixL();

  model.correlation.assign(dim * dim, 0.0);
  model.chol.assign(dim * dim, 0.0);
  for (size_t a = 0; a < dim; ++a)
    for (size_t b = 0; b < dim; ++b) {
      model.correlation[a * dim + b] = R(int(a), int(b));
      model.chol[a * dim + b] = L(int(a), int(b));
    }
  return model;
}

double marginal_cdf(const CopulaModel& model, int coord, double x) {
  const auto& m = model.marginals[size_t(coord)];
  if (m.bandwidth == 0) return x < m.points.front() ? 0.0 : 1.0;
  double F = 0;
  for (double p : m.points) F += Rng::normal_cdf((x - p) / m.bandwidth);
  return F / double(m.points.size());
}

double marginal_quantile(const CopulaModel& model, int coord, double u) {
  const auto& m = model.marginals[size_t(coord)];
  if (m.bandwidth == 0) return m.points.front();
  if (u <= m.grid_F.front()) return m.grid_x.front();
  if (u >= m.grid_F.back()) return m.grid_x.back();
  auto it = std::lower_bound(m.grid_F.begin(), m.grid_F.end(), u);
  size_t hi = size_t(it - m.grid_F.begin());
  size_t lo = hi - 1;
  double f0 = m.grid_F[lo], f1 = m.grid_F[hi];
  double w = f1 > f0 ? (u - f0) / (f1 - f0) : 0.5;
  return m.grid_x[lo] + w * (m.grid_x[hi] - m.grid_x[lo]);
}

std::vector<std::vector<double>> sample_rows(const CopulaModel& m, int count,
                                             std::uint64_t seed) {
  const int dim = m.dim();
  Rng rng(seed);
  std::vector<std::vector<double>> rows(static_cast<size_t>(count), std::vector<double>(static_cast<size_t>(dim)));
  std::vector<double> iid(static_cast<size_t>(dim));
  for (int i = 0; i < count; ++i) {
    for (int d = 0; d < dim; ++d) iid[size_t(d)] = rng.normal();
    for (int d = 0; d < dim; ++d) {
      double zd = 0;
      for (int k = 0; k <= d; ++k) zd += m.chol[size_t(d) * dim + size_t(k)] * iid[size_t(k)];
      rows[size_t(i)][size_t(d)] = marginal_quantile(m, d, Rng::normal_cdf(zd));
    }
  }
  return rows;
}

namespace {

std::vector<const Participant*> wind_farms(const NetworkCase& c) {
  std::vector<const Participant*> farms;
  for (const auto& p : c.participants)
    if (p.kind == ParticipantKind::WindFarm) farms.push_back(&p);
  return farms;
}

}  // namespace

ErrorSampleSet sample_error_set(const CopulaModel& m, const NetworkCase& c, int count,
                                std::uint64_t seed, const std::string& role) {
  auto farms = wind_farms(c);
  if (int(farms.size()) != m.dim())
    throw std::invalid_argument("dependence model does not match the case's wind farms");
  const int T = c.horizon.periods, S = c.horizon.operating_conditions;
  const int F = int(farms.size());

  ErrorSampleSet set;
  set.role = role;
  set.seed = seed;
  set.periods = T;
  set.conditions = S;
  for (auto* f : farms) set.farm_ids.push_back(f->id);
  set.values.assign(size_t(count) * size_t(T) * size_t(S) * size_t(F), 0.0);

  Rng rng(seed_stream(seed, "errors:" + role));
  std::vector<double> iid(static_cast<size_t>(F));
  size_t pos = 0;
  for (int i = 0; i < count; ++i)
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s) {
        for (int d = 0; d < F; ++d) iid[size_t(d)] = rng.normal();
        for (int d = 0; d < F; ++d) {
          double zd = 0;
          for (int k = 0; k <= d; ++k) zd += m.chol[size_t(d) * F + size_t(k)] * iid[size_t(k)];
          double frac = marginal_quantile(m, d, Rng::normal_cdf(zd));
          double cap = farms[size_t(d)]->qty_max_mw;
          double fore = farms[size_t(d)]->forecast_mw[size_t(t)][size_t(s)];
          double e = frac * cap;
          e = std::clamp(e, -fore, cap - fore);
          set.values[pos++] = e;
        }
      }
  return set;
}

void clip_errors(ErrorSampleSet& set, const NetworkCase& c) {
  auto farms = wind_farms(c);
  if (int(farms.size()) != int(set.farm_ids.size()))
    throw std::invalid_argument("sample set does not match the case's wind farms");
  const int N = set.count(), T = set.periods, S = set.conditions, F = int(set.farm_ids.size());
  size_t pos = 0;
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s)
        for (int d = 0; d < F; ++d) {
          double cap = farms[size_t(d)]->qty_max_mw;
          double fore = farms[size_t(d)]->forecast_mw[size_t(t)][size_t(s)];
          set.values[pos] = std::clamp(set.values[pos], -fore, cap - fore);
          ++pos;
        }
}

AggregatedErrors aggregate_line_errors(const ErrorSampleSet& set, const NetworkCase& c,
                                       const Configuration& cfg) {
  if (!cfg.valid) throw std::invalid_argument("cannot aggregate under an invalid configuration");
  auto farms = wind_farms(c);
  if (int(farms.size()) != int(set.farm_ids.size()))
    throw std::invalid_argument("sample set does not match the case's wind farms");
  const int N = set.count(), T = set.periods, S = set.conditions;
  const int L = int(c.lines.size()), F = int(farms.size());

  AggregatedErrors agg;
  agg.periods = T;
  agg.conditions = S;
  agg.n_lines = L;
  agg.count = N;
  agg.values.assign(size_t(T) * size_t(S) * size_t(L) * size_t(N), 0.0);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s)
      for (int l = 0; l < L; ++l) {
        double* out = agg.values.data() + ((size_t(t) * S + s) * L + l) * N;
        for (int d = 0; d < F; ++d) {
          double sf = cfg.s(farms[size_t(d)]->bus, l, L);
          if (sf == 0.0) continue;
          for (int i = 0; i < N; ++i) out[i] += sf * set.at(i, t, s, d);
        }
      }
  return agg;
}

QTables precompute_Q(const ErrorSampleSet& set, const NetworkCase& c,
                     const std::vector<Configuration>& cfgs, double eps) {
  const int T = set.periods, S = set.conditions;
  const int L = int(c.lines.size()), C = int(cfgs.size()), N = set.count();
  QTables q;
  q.periods = T;
  q.conditions = S;
  q.n_lines = L;
  q.n_configs = C;
  q.qmax.assign(size_t(T) * size_t(S) * size_t(L) * size_t(C), 0.0);
  q.qmin.assign(q.qmax.size(), 0.0);

  std::vector<double> neg(static_cast<size_t>(N));
  for (int cix = 0; cix < C; ++cix) {
    if (!cfgs[size_t(cix)].valid) continue;
    auto agg = aggregate_line_errors(set, c, cfgs[size_t(cix)]);
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s)
        for (int l = 0; l < L; ++l) {
          auto xi = agg.line_series(t, s, l);
          for (int i = 0; i < N; ++i) neg[size_t(i)] = -xi[size_t(i)];
          size_t slot = ((size_t(t) * S + s) * L + l) * C + size_t(cix);
          q.qmax[slot] = order_statistic_q(neg, eps);
          q.qmin[slot] = order_statistic_q(xi, eps);
        }
  }
  return q;
}

std::string samples_to_csv(const ErrorSampleSet& set) {
  std::string out = "sample_id,t,s,farm_id,error_mw\n";
  char buf[64];
  const int N = set.count(), F = int(set.farm_ids.size());
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < set.periods; ++t)
      for (int s = 0; s < set.conditions; ++s)
        for (int d = 0; d < F; ++d) {
          std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.12g\n", i, t, s, set.farm_ids[size_t(d)],
                        set.at(i, t, s, d));
          out += buf;
        }
  return out;
}

ErrorSampleSet samples_from_csv(const std::string& text, const std::string& role) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,t,s,farm_id,error_mw", 0) != 0)
    throw std::runtime_error("sample CSV must start with header sample_id,t,s,farm_id,error_mw");

  struct Key {
    int i, t, s, f;
    bool operator<(const Key& o) const {
      return std::tie(i, t, s, f) < std::tie(o.i, o.t, o.s, o.f);
    }
  };
  std::map<Key, double> cells;
  int max_i = -1, max_t = -1, max_s = -1;
  std::vector<int> farm_ids;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Key k;
    double v;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf", &k.i, &k.t, &k.s, &k.f, &v) != 5)
      throw std::runtime_error("bad sample CSV row at line " + std::to_string(lineno));
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite error value at line " + std::to_string(lineno));
    if (k.i < 0 || k.t < 0 || k.s < 0)
      throw std::runtime_error("negative index at line " + std::to_string(lineno));
    if (!cells.emplace(k, v).second)
      throw std::runtime_error("duplicate sample cell at line " + std::to_string(lineno));
    max_i = std::max(max_i, k.i);
    max_t = std::max(max_t, k.t);
    max_s = std::max(max_s, k.s);
    if (std::find(farm_ids.begin(), farm_ids.end(), k.f) == farm_ids.end())
      farm_ids.push_back(k.f);
  }
  if (max_i < 0) throw std::runtime_error("sample CSV has no data rows");
  std::sort(farm_ids.begin(), farm_ids.end());

  ErrorSampleSet set;
  set.role = role;
  set.periods = max_t + 1;
  set.conditions = max_s + 1;
  set.farm_ids = farm_ids;
  const int N = max_i + 1, F = int(farm_ids.size());
  set.values.assign(size_t(N) * size_t(set.periods) * size_t(set.conditions) * size_t(F), 0.0);
  size_t expected = set.values.size();
  if (cells.size() != expected)
    throw std::runtime_error("sample CSV grid incomplete: " + std::to_string(cells.size()) +
                             " cells, expected " + std::to_string(expected));
  for (const auto& [k, v] : cells) {
    int fi = int(std::lower_bound(farm_ids.begin(), farm_ids.end(), k.f) - farm_ids.begin());
    set.values[((size_t(k.i) * set.periods + k.t) * set.conditions + k.s) * F + fi] = v;
  }
  return set;
}

void save_samples_csv(const ErrorSampleSet& set, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << samples_to_csv(set);
}

ErrorSampleSet load_samples_csv(const std::string& path, const std::string& role) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open sample file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return samples_from_csv(ss.str(), role);
}

}  // namespace drtep
