#pragma once
#include <span>
#include <string>
#include <vector>

#include "drtep/model_ir.hpp"
#include "drtep/uncertainty.hpp"

namespace drtep {

// One affine requirement b_p·xi + d_p - a_p·x >= 0 of the joint safety set. The dual
// norm of b_p (L2, self-dual) is stored explicitly so the emitters never recompute it
// and other norms stay a data change.
struct SafetySetRow {
  std::vector<double> a;  // coefficients over the decision x
  std::vector<double> b;  // coefficients over the uncertainty xi
  double d = 0;
  double dual_norm_b = 0;
};

struct SafetySet {
  std::vector<SafetySetRow> rows;
  int x_dim() const { return rows.empty() ? 0 : int(rows.front().a.size()); }
  int xi_dim() const { return rows.empty() ? 0 : int(rows.front().b.size()); }
  void validate() const;
};

// Builds the set and fills in the L2 norms of each b_p.
SafetySet make_safety_set(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b,
                          std::vector<double> d);

// A joint chance constraint instance: require P[xi in S(x)] robustly over the
// Wasserstein ball of radius theta around the empirical distribution of the samples.
struct JccInstance {
  SafetySet set;
  std::vector<std::vector<double>> samples;
  double eps = 0.05;
  double theta = 1.0;

  int n() const { return int(samples.size()); }
  void validate() const;
};

// Tuning knobs for the approximation schemes.
struct SchemeParams {
  std::vector<double> kappa;  // per-sample tightening in [0,1]
  std::vector<double> w;      // per-row positive weights (CVaR scheme)
  double big_m = 1e4;         // exact MIP indicator constant
  void validate(int n, int p) const;
};

std::vector<double> uniform_kappa(int n, double value = 1.0);
std::vector<double> uniform_weights(int p);
// Weights proportional to 1/‖b_p‖ (normalized); with these the CVaR scheme's feasible
// set coincides with the tightened linear scheme at kappa = 1.
std::vector<double> inverse_norm_weights(const SafetySet& set);

// Distance from a point to the safety set at decision x:
// min_p ((b_p·xi + d_p - a_p·x)/‖b_p‖)^+ — zero when some requirement already fails.
double distance(std::span<const double> xi, const SafetySet& set, std::span<const double> x);

// Per-row empirical thresholds q_p: the (floor(eps·N)+1)-th smallest of {b_p·xi_i}.
std::vector<double> strengthening_thresholds(const JccInstance& inst);

// What an emitter added to the model: ancillary variables, rows, and bookkeeping.
struct ConstraintBlock {
  VarId s = -1;
  std::vector<VarId> r;      // per-sample relaxations
  std::vector<VarId> z;      // exact MIP indicators
  std::vector<VarId> alpha;  // CVaR per-sample excess
  VarId beta = -1, tau = -1;
  std::vector<RowId> rows;
  int sample_rows = 0;         // sample-indexed inequality rows
  int strengthening_rows = 0;  // per-row threshold rows
};

// All emitters append to `ir`, referencing the caller's decision variables x (one per
// coordinate of a_p). Every feasibility requirement is written as a GE row.
ConstraintBlock emit_exact(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                           double big_m, const std::string& prefix);
ConstraintBlock emit_exact_strengthened(ModelIR& ir, const JccInstance& inst,
                                        std::span<const VarId> x, double big_m,
                                        const std::string& prefix);
ConstraintBlock emit_sla(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                         std::span<const double> kappa, const std::string& prefix);
ConstraintBlock emit_la(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                        std::span<const double> kappa, const std::string& prefix);
ConstraintBlock emit_sfla(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                          std::span<const double> kappa, const std::string& prefix);
ConstraintBlock emit_wcvar(ModelIR& ir, const JccInstance& inst, std::span<const VarId> x,
                           std::span<const double> w, const std::string& prefix);

// Closed-form feasibility oracle for the exact formulation at a fixed decision:
// g(s) = eps·N·s - sum_i (s - dist_i)^+ is concave piecewise linear with a maximizer at
// the (floor(eps·N)+1)-th smallest distance; x is feasible iff max_s g(s) >= theta·N.
double exact_budget_margin(const JccInstance& inst, std::span<const double> x);
bool exact_feasible(const JccInstance& inst, std::span<const double> x, double tol = 1e-9);

// Fraction of test points that satisfy every safety requirement jointly (tolerance
// -1e-9 on each row, matching the solver feasibility tolerance).
double oos_probability(std::span<const double> x, const SafetySet& set,
                       const std::vector<std::vector<double>>& test_samples);

// Structured-text fixture format for regression tests.
std::string jcc_to_json(const JccInstance& inst);
JccInstance jcc_from_json(const std::string& text);

}  // namespace drtep
