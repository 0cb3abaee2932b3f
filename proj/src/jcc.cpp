#include "drtep/jcc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "drtep/stats.hpp"

namespace drtep {

void SafetySet::validate() const {
  if (rows.empty()) throw std::invalid_argument("safety set needs at least one row");
  const size_t xd = rows.front().a.size(), ud = rows.front().b.size();
  for (const auto& r : rows) {
    if (r.a.size() != xd || r.b.size() != ud)
      throw std::invalid_argument("safety set rows have inconsistent dimensions");
    if (!(r.dual_norm_b > 0))
      throw std::invalid_argument("safety set row with zero uncertainty loading");
  }
}

SafetySet make_safety_set(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b,
                          std::vector<double> d) {
  if (a.size() != b.size() || a.size() != d.size())
    throw std::invalid_argument("safety set pieces have mismatched row counts");
  SafetySet set;
  for (size_t p = 0; p < a.size(); ++p) {
    SafetySetRow row;
    row.a = std::move(a[p]);
    row.b = std::move(b[p]);
    row.d = d[p];
    double nn = 0;
    for (double v : row.b) nn += v * v;
    row.dual_norm_b = std::sqrt(nn);
    set.rows.push_back(std::move(row));
  }
  set.validate();
  return set;
}

void JccInstance::validate() const {
  set.validate();
  if (samples.empty()) throw std::invalid_argument("instance needs at least one sample");
  for (const auto& s : samples)
    if (int(s.size()) != set.xi_dim())
      throw std::invalid_argument("sample dimension does not match the safety set");
  if (!(eps > 0 && eps < 1)) throw std::invalid_argument("risk level must be in (0,1)");
  if (!(theta > 0)) throw std::invalid_argument("ambiguity radius must be positive");
}

void SchemeParams::validate(int n, int p) const {
  if (!kappa.empty()) {
    if (int(kappa.size()) != n) throw std::invalid_argument("kappa length must equal N");
    for (double k : kappa)
      if (k < 0 || k > 1) throw std::invalid_argument("kappa entries must lie in [0,1]");
  }
  if (!w.empty()) {
    if (int(w.size()) != p) throw std::invalid_argument("weight length must equal P");
    for (double v : w)
      if (!(v > 0)) throw std::invalid_argument("weights must be positive");
  }
  if (!(big_m > 0)) throw std::invalid_argument("big-M must be positive");
}

std::vector<double> uniform_kappa(int n, double value) {
  return std::vector<double>(size_t(n), value);
}

std::vector<double> uniform_weights(int p) {
  return std::vector<double>(size_t(p), 1.0 / double(p));
}

std::vector<double> inverse_norm_weights(const SafetySet& set) {
  std::vector<double> w;
  double total = 0;
  for (const auto& r : set.rows) total += 1.0 / r.dual_norm_b;
  for (const auto& r : set.rows) w.push_back(1.0 / r.dual_norm_b / total);
  return w;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_kappa(const JccInstance& inst, std::span<const double> kappa) {
  if (int(kappa.size()) != inst.n())
    throw std::invalid_argument("kappa length must equal the sample count");
  for (double k : kappa)
    if (k < 0 || k > 1) throw std::invalid_argument("kappa entries must lie in [0,1]");
}

// slack_{i,p}(x)/‖b_p‖ as an affine expression in x plus the x-free part.
struct NormalizedSlack {
  LinExpr x_part;      // -a_p·x/‖b_p‖ terms
  double constant;     // (b_p·xi_i + d_p)/‖b_p‖
};

NormalizedSlack normalized_slack(const JccInstance& inst, std::span<const VarId> x, int i, int p) {
  const auto& row = inst.set.rows[size_t(p)];
  NormalizedSlack ns;
  ns.constant = (dot(row.b, inst.samples[size_t(i)]) + row.d) / row.dual_norm_b;
  for (size_t k = 0; k < row.a.size(); ++k)
    if (row.a[k] != 0) ns.x_part.add(x[k], -row.a[k] / row.dual_norm_b);
  return ns;
}

RowId emit_budget(ModelIR& ir, const JccInstance& inst, VarId s, const std::vector<VarId>& r,
                  const std::string& prefix) {
  LinExpr budget;
  budget.add(s, inst.eps * inst.n());
  for (VarId ri : r) budget.add(ri, -1.0);
  return ir.add_row(prefix + "budget", budget, RowSense::GE, inst.theta * inst.n(), "jcc:budget");
}

void emit_strengthening(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x, VarId s,
                        const std::string& prefix, ConstraintBlock& blk) {
  auto q = strengthening_thresholds(inst);
  for (size_t p = 0; p < inst.set.rows.size(); ++p) {
    const auto& row = inst.set.rows[p];
    LinExpr e;
    for (size_t k = 0; k < row.a.size(); ++k)
      if (row.a[k] != 0) e.add(x[k], -row.a[k] / row.dual_norm_b);
    e.add(s, -1.0);
    blk.rows.push_back(ir.add_row(prefix + "thresh" + std::to_string(p), e, RowSense::GE,
                                  -(q[p] + row.d) / row.dual_norm_b, "jcc:strengthen"));
    ++blk.strengthening_rows;
  }
}

}  // namespace

double distance(std::span<const double> xi, const SafetySet& set, std::span<const double> x) {
  double best = kInf;
  for (const auto& row : set.rows) {
    double slack = dot(row.b, xi) + row.d - dot(row.a, x);
    best = std::min(best, std::max(slack, 0.0) / row.dual_norm_b);
  }
  return best;
}

std::vector<double> strengthening_thresholds(const JccInstance& inst) {
  std::vector<double> q;
  std::vector<double> vals(static_cast<size_t>(inst.n()));
  for (const auto& row : inst.set.rows) {
    for (int i = 0; i < inst.n(); ++i) vals[size_t(i)] = dot(row.b, inst.samples[size_t(i)]);
    q.push_back(order_statistic_q(vals, inst.eps));
  }
  return q;
}

ConstraintBlock emit_exact(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                           double big_m, const std::string& prefix) {
  inst.validate();
  if (!(big_m > 0)) throw std::invalid_argument("big-M must be positive");
  const int N = inst.n(), P = int(inst.set.rows.size());

  ConstraintBlock blk;
  blk.s = ir.add_var(prefix + "s", VarKind::Continuous, 0, kInf);
  for (int i = 0; i < N; ++i)
    blk.r.push_back(ir.add_var(prefix + "r" + std::to_string(i), VarKind::Continuous, 0, kInf));
  for (int i = 0; i < N; ++i)
    blk.z.push_back(ir.add_var(prefix + "z" + std::to_string(i), VarKind::Binary, 0, 1));

  blk.rows.push_back(emit_budget(ir, inst, blk.s, blk.r, prefix));
  for (int i = 0; i < N; ++i) {
    for (int p = 0; p < P; ++p) {
      auto ns = normalized_slack(inst, x, i, p);
      LinExpr e = ns.x_part;
      e.add(blk.z[size_t(i)], big_m).add(blk.s, -1.0).add(blk.r[size_t(i)], 1.0);
      blk.rows.push_back(ir.add_row(prefix + "on" + std::to_string(i) + "_" + std::to_string(p), e,
                                    RowSense::GE, -ns.constant, "jcc:indicator_on"));
      ++blk.sample_rows;
    }
    LinExpr off;
    off.add(blk.z[size_t(i)], -big_m).add(blk.s, -1.0).add(blk.r[size_t(i)], 1.0);
    blk.rows.push_back(ir.add_row(prefix + "off" + std::to_string(i), off, RowSense::GE, -big_m,
                                  "jcc:indicator_off"));
  }
  return blk;
}

ConstraintBlock emit_exact_strengthened(ModelIR& ir, const JccInstance& inst,
                                        std::span<const VarId> x, double big_m,
                                        const std::string& prefix) {
  ConstraintBlock blk = emit_exact(ir, inst, x, big_m, prefix);
  emit_strengthening(ir, inst, x, blk.s, prefix, blk);
  return blk;
}

ConstraintBlock emit_la(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                        std::span<const double> kappa, const std::string& prefix) {
  inst.validate();
  check_kappa(inst, kappa);
  const int N = inst.n(), P = int(inst.set.rows.size());

  ConstraintBlock blk;
  blk.s = ir.add_var(prefix + "s", VarKind::Continuous, 0, kInf);
  for (int i = 0; i < N; ++i)
    blk.r.push_back(ir.add_var(prefix + "r" + std::to_string(i), VarKind::Continuous, 0, kInf));

  blk.rows.push_back(emit_budget(ir, inst, blk.s, blk.r, prefix));
  for (int i = 0; i < N; ++i)
    for (int p = 0; p < P; ++p) {
      auto ns = normalized_slack(inst, x, i, p);
      LinExpr e;
      for (const auto& t : ns.x_part.terms) e.add(t.var, kappa[size_t(i)] * t.coef);
      e.add(blk.s, -1.0).add(blk.r[size_t(i)], 1.0);
      blk.rows.push_back(ir.add_row(prefix + "smp" + std::to_string(i) + "_" + std::to_string(p),
                                    e, RowSense::GE, -kappa[size_t(i)] * ns.constant,
                                    "jcc:sample"));
      ++blk.sample_rows;
    }
  return blk;
}

ConstraintBlock emit_sla(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                         std::span<const double> kappa, const std::string& prefix) {
  ConstraintBlock blk = emit_la(ir, inst, x, kappa, prefix);
  emit_strengthening(ir, inst, x, blk.s, prefix, blk);
  return blk;
}

ConstraintBlock emit_sfla(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                          std::span<const double> kappa, const std::string& prefix) {
  inst.validate();
  check_kappa(inst, kappa);
  const int N = inst.n(), P = int(inst.set.rows.size());
  auto q = strengthening_thresholds(inst);

  ConstraintBlock blk;
  blk.s = ir.add_var(prefix + "s", VarKind::Continuous, 0, kInf);
  for (int i = 0; i < N; ++i)
    blk.r.push_back(ir.add_var(prefix + "r" + std::to_string(i), VarKind::Continuous, 0, kInf));

  blk.rows.push_back(emit_budget(ir, inst, blk.s, blk.r, prefix));
  for (int p = 0; p < P; ++p) {
    const auto& row = inst.set.rows[size_t(p)];
    for (int i = 0; i < N; ++i) {
      // only samples strictly below the threshold stay in the reduced index set
      if (!(dot(row.b, inst.samples[size_t(i)]) < q[size_t(p)])) continue;
      auto ns = normalized_slack(inst, x, i, p);
      LinExpr e;
      for (const auto& t : ns.x_part.terms) e.add(t.var, kappa[size_t(i)] * t.coef);
      e.add(blk.s, -1.0).add(blk.r[size_t(i)], 1.0);
      blk.rows.push_back(ir.add_row(prefix + "smp" + std::to_string(i) + "_" + std::to_string(p),
                                    e, RowSense::GE, -kappa[size_t(i)] * ns.constant,
                                    "jcc:sample"));
      ++blk.sample_rows;
    }
  }
  emit_strengthening(ir, inst, x, blk.s, prefix, blk);
  return blk;
}

ConstraintBlock emit_wcvar(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                           std::span<const double> w, const std::string& prefix) {
  inst.validate();
  const int N = inst.n(), P = int(inst.set.rows.size());
  if (int(w.size()) != P) throw std::invalid_argument("weight length must equal P");
  for (double v : w)
    if (!(v > 0)) throw std::invalid_argument("weights must be positive");

  ConstraintBlock blk;
  for (int i = 0; i < N; ++i)
    blk.alpha.push_back(
        ir.add_var(prefix + "alpha" + std::to_string(i), VarKind::Continuous, 0, kInf));
  blk.beta = ir.add_var(prefix + "beta", VarKind::Continuous, -kInf, kInf);
  blk.tau = ir.add_var(prefix + "tau", VarKind::Continuous, -kInf, kInf);

  // tau + (theta*beta + mean(alpha))/eps <= 0
  LinExpr budget;
  budget.add(blk.tau, 1.0).add(blk.beta, inst.theta / inst.eps);
  for (VarId a : blk.alpha) budget.add(a, 1.0 / (inst.eps * inst.n()));
  blk.rows.push_back(ir.add_row(prefix + "budget", budget, RowSense::LE, 0.0, "wcvar:budget"));

  for (int i = 0; i < N; ++i)
    for (int p = 0; p < P; ++p) {
      const auto& row = inst.set.rows[size_t(p)];
      // alpha_i >= w_p (a_p·x - b_p·xi_i - d_p) - tau
      LinExpr e;
      e.add(blk.alpha[size_t(i)], 1.0).add(blk.tau, 1.0);
      for (size_t k = 0; k < row.a.size(); ++k)
        if (row.a[k] != 0) e.add(x[k], -w[size_t(p)] * row.a[k]);
      double rhs = -w[size_t(p)] * (dot(row.b, inst.samples[size_t(i)]) + row.d);
      blk.rows.push_back(ir.add_row(prefix + "exc" + std::to_string(i) + "_" + std::to_string(p),
                                    e, RowSense::GE, rhs, "wcvar:excess"));
      ++blk.sample_rows;
    }
  for (int p = 0; p < P; ++p) {
    LinExpr e;
    e.add(blk.beta, 1.0);
    blk.rows.push_back(ir.add_row(prefix + "norm" + std::to_string(p), e, RowSense::GE,
                                  w[size_t(p)] * inst.set.rows[size_t(p)].dual_norm_b,
                                  "wcvar:dualnorm"));
  }
  return blk;
}

double exact_budget_margin(const JccInstance& inst, std::span<const double> x) {
  const int N = inst.n();
  std::vector<double> dist(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) dist[size_t(i)] = distance(inst.samples[size_t(i)], inst.set, x);
  double s_star = order_statistic_q(dist, inst.eps);
  double g = inst.eps * N * s_star;
  for (double di : dist) g -= std::max(s_star - di, 0.0);
  return g - inst.theta * N;
}

bool exact_feasible(const JccInstance& inst, std::span<const double> x, double tol) {
  return exact_budget_margin(inst, x) >= -tol;
}

double oos_probability(std::span<const double> x, const SafetySet& set,
                       const std::vector<std::vector<double>>& test_samples) {
  if (test_samples.empty()) throw std::invalid_argument("empty test sample set");
  int ok = 0;
  for (const auto& xi : test_samples) {
    bool inside = true;
    for (const auto& row : set.rows) {
      if (dot(row.b, xi) + row.d - dot(row.a, x) < -1e-9) {
        inside = false;
        break;
      }
    }
    ok += inside ? 1 : 0;
  }
  return double(ok) / double(test_samples.size());
}

std::string jcc_to_json(const JccInstance& inst) {
  nlohmann::json j;
  j["eps"] = inst.eps;
  j["theta"] = inst.theta;
  for (const auto& row : inst.set.rows)
    j["safety_rows"].push_back({{"a", row.a}, {"b", row.b}, {"d", row.d}});
  j["samples"] = inst.samples;
  return j.dump(2) + "\n";
}

JccInstance jcc_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  std::vector<std::vector<double>> a, b;
  std::vector<double> d;
  for (const auto& jr : j.at("safety_rows")) {
    a.push_back(jr.at("a").get<std::vector<double>>());
    b.push_back(jr.at("b").get<std::vector<double>>());
    d.push_back(jr.at("d").get<double>());
  }
  JccInstance inst;
  inst.set = make_safety_set(std::move(a), std::move(b), std::move(d));
  inst.samples = j.at("samples").get<std::vector<std::vector<double>>>();
  inst.eps = j.at("eps").get<double>();
  inst.theta = j.at("theta").get<double>();
  inst.validate();
  return inst;
}

}  // namespace drtep
