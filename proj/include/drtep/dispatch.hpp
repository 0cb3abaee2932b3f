#pragma once
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "drtep/backend.hpp"
#include "drtep/jcc.hpp"
#include "drtep/model_ir.hpp"
#include "drtep/network.hpp"
#include "drtep/uncertainty.hpp"

namespace drtep {

// Chance-constraint handling inside the market clearing. The first three keep the
// lower level a linear program (so optimality conditions exist); `Sfla` and `Exact`
// solve the clearing directly but cannot be embedded in the investment model.
enum class Scheme { Sla, La, Sfla, Wcvar, Exact };

std::string scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);  // accepts "exact-dispatch" for Exact
bool scheme_supports_kkt(Scheme s);

// --------------------------------------------------------------------------------------
// Plan-resolved problem description
// --------------------------------------------------------------------------------------

struct BlockParticipant {
  int participant_index = -1;  // into NetworkCase::participants
  ParticipantKind kind = ParticipantKind::Generator;
  int bus = -1;
  double q_max = 0;        // MW ceiling at this (t,s): capacity, grown demand, or forecast
  double bid = 0;          // submitted price (consumers: utility), £/MWh
  double bid_hat = 0;      // price after volumetric tariff reshaping, £/MWh
  double curtail_cost = 0; // wind only, £/MWh
};

// One market-clearing block (t,s) with the investment plan already applied: reshaped
// bids, line ratings, the active configuration's shift factors, and the per-line
// aggregated error samples packaged as a joint chance constraint over net flows.
struct DispatchBlock {
  int t = 0, s = 0;
  int config_id = 0;
  std::vector<BlockParticipant> participants;
  std::vector<double> capacity_mw;               // per line, under the plan at t
  std::vector<std::vector<double>> line_weight;  // [line][participant]: signed shift factor
  std::vector<double> ptdf;                      // bus-major copy for price recovery
  JccInstance jcc;                               // rows 2l (upper limit) / 2l+1 (lower limit)

  bool has_flow_block() const { return !jcc.set.rows.empty(); }
};

// Safety rows for one block: pairs of flow-limit requirements per line, unit-norm
// uncertainty loadings, and the aggregated per-line error samples.
JccInstance make_jcc_instance(const std::vector<std::vector<double>>& line_weight,
                              const std::vector<double>& capacity_mw,
                              const std::vector<std::vector<double>>& xi_samples,
                              const AmbiguityConfig& amb);

struct DispatchProblem {
  Scheme scheme = Scheme::Sla;
  AmbiguityConfig amb;
  SchemeParams params;  // kappa sized N; w sized 2·L
  NetworkCase net;
  int n_periods = 0, n_conditions = 0, n_lines = 0, n_buses = 0;
  std::vector<DispatchBlock> blocks;  // index t * n_conditions + s

  const DispatchBlock& block(int t, int s) const {
    return blocks[size_t(t) * n_conditions + s];
  }
};

// Resolves the plan into per-block data. Throws if the plan selects an invalid or
// out-of-range configuration, or if sample bookkeeping disagrees with `amb.n`.
DispatchProblem make_dispatch_problem(const NetworkCase& net, const InvestmentPlan& plan,
                                      const std::vector<Configuration>& configs,
                                      const ErrorSampleSet& train, const AmbiguityConfig& amb,
                                      SchemeParams params, Scheme scheme);

// --------------------------------------------------------------------------------------
// Market-clearing model (primal side)
// --------------------------------------------------------------------------------------

struct BlockLpIds {
  std::vector<VarId> q;            // main quantity per participant (free for wind)
  std::vector<VarId> cur;          // curtailment, -1 for non-wind
  ConstraintBlock cc;              // scheme ancillaries and row ids
  RowId balance = -1;
  std::vector<RowId> wind_identity;  // -1 for non-wind
};

struct LowerLevelLp {
  ModelIR ir;
  std::vector<BlockLpIds> blocks;
};

// Emits the full clearing problem (all blocks) as a minimization of negated welfare.
// Linear program for Sla/La/Sfla/Wcvar; mixed-integer for Exact.
LowerLevelLp build_lower_lp(const DispatchProblem& prob);

// --------------------------------------------------------------------------------------
// Optimality system (KKT) and complementarity linearization
// --------------------------------------------------------------------------------------

// One complementarity pair: `slack` (an expression that is >= 0 at any feasible point)
// paired with a nonnegative `dual` variable; at most one of the two may be positive.
struct KktPair {
  LinExpr slack;
  VarId dual = -1;
  std::string family;  // big-M registry key
};

// Upper bounds used when complementarity pairs are linearized with indicator binaries.
// Values are audited after every solve; see audit_big_m.
struct BigMRegistry {
  std::map<std::string, double> primal;  // family -> cap on the slack expression
  std::map<std::string, double> dual;    // family -> cap on the dual variable

  double primal_for(const std::string& family) const;
  double dual_for(const std::string& family) const;
  void scale(double factor);  // multiplies every cap (big-M sensitivity re-solves)
};

// Caps derived from problem scale: dual side flat 1e4; primal side twice the sum of
// rated capacity, demand ceilings and worst-case aggregated error, with the budget row
// additionally scaled by eps*N.
BigMRegistry default_big_m_registry(const DispatchProblem& prob);

struct BlockKktIds {
  // dual variables
  VarId pi = -1;
  std::vector<VarId> phi_lo, phi_hi;          // quantity bound duals (-1 for wind)
  std::vector<VarId> phi_sch;                 // wind identity duals (-1 otherwise)
  std::vector<VarId> phi_cur_lo, phi_cur_hi;  // curtailment bound duals (-1 otherwise)
  VarId mu_u = -1, mu1 = -1;
  std::vector<VarId> mu_v;           // per sample (Sla/La)
  std::vector<VarId> mu_alpha;       // per sample (Wcvar)
  std::vector<VarId> mu2, mu3;       // [l*N + i]
  std::vector<VarId> mu4, mu5;       // [l]
  std::vector<VarId> agg2, agg3;     // [l]: kappa- or weight-summed sample duals
  std::vector<RowId> stationarity;
};

struct KktSystem {
  std::vector<BlockKktIds> blocks;
  std::vector<KktPair> pairs;
  std::vector<VarId> binaries;  // filled by linearize_complementarity
};

// Appends dual variables, stationarity rows and the complementarity pair list for the
// already-built clearing model. Throws for schemes without a convex lower level
// (Sfla, Exact).
KktSystem emit_kkt(LowerLevelLp& lp, const DispatchProblem& prob);

// Adds one indicator binary per pair with rows slack <= Mp·y and dual <= Md·(1-y).
// Returns the binaries (also appended to out_binaries when provided).
std::vector<VarId> linearize_complementarity(ModelIR& ir, std::span<const KktPair> pairs,
                                             const BigMRegistry& big_m,
                                             const std::string& prefix);
void linearize_complementarity(ModelIR& ir, KktSystem& sys, const BigMRegistry& big_m);

// --------------------------------------------------------------------------------------
// Solving and solution handling
// --------------------------------------------------------------------------------------

struct BlockSolution {
  int t = 0, s = 0;
  std::vector<double> quantity;  // per participant, MW
  std::vector<double> curtail;   // per participant, MW (0 for non-wind)
  double pi = 0;                 // system marginal price, £/MWh
  std::vector<double> lmp;       // per bus, £/MWh
  std::vector<double> mu2, mu3;  // [l*N + i]
  std::vector<double> mu4, mu5;  // [l]
  double welfare_gbp_per_h = 0;
};

struct DispatchSolution {
  SolveStatus status = SolveStatus::Error;
  double objective_gbp_per_h = std::numeric_limits<double>::quiet_NaN();  // total welfare
  double solver_objective = std::numeric_limits<double>::quiet_NaN();     // raw (min) value
  double solve_time_s = 0;
  std::vector<BlockSolution> blocks;
  std::string message;

  bool ok() const {
    return status == SolveStatus::Optimal || status == SolveStatus::FeasibleAtLimit;
  }
};

// Clears the market by solving the model directly. For Exact the mixed-integer model is
// solved first and duals come from an LP re-solve with the indicators pinned.
DispatchSolution solve_dispatch_direct(const DispatchProblem& prob, SolverBackend& backend,
                                       const SolverConfig& cfg);

// Solves the linearized optimality system (feasibility MIP) and reads the clearing
// quantities and duals off the single-level point. Registry defaults when null.
DispatchSolution solve_dispatch_kkt(const DispatchProblem& prob, SolverBackend& backend,
                                    const SolverConfig& cfg,
                                    const BigMRegistry* registry = nullptr);

// Nodal prices: pi minus the scheme's flow-dual price adjustment at each bus.
std::vector<double> recover_lmp(const DispatchProblem& prob, int block_index, double pi,
                                std::span<const double> mu2, std::span<const double> mu3,
                                std::span<const double> mu4, std::span<const double> mu5);

// Welfare of one block evaluated from a model point (reshaped bids, £/h).
double block_welfare(const DispatchProblem& prob, const LowerLevelLp& lp, int block_index,
                     const std::vector<double>& x);

// --------------------------------------------------------------------------------------
// Checks
// --------------------------------------------------------------------------------------

// Generic LP optimality certificate from a primal point and row duals (minimization
// orientation): reduced costs rho = c - A'y, duality gap |c'x - y'b - rho'x|, worst
// complementarity residuals, and worst dual sign violation.
struct LpDualityCheck {
  double gap = 0;
  double max_row_compl = 0;
  double max_col_compl = 0;
  double max_sign_violation = 0;
};
LpDualityCheck check_lp_duality(const ModelIR& ir, const std::vector<double>& x,
                                const std::vector<double>& row_dual);

// Residuals of the assembled optimality system at a candidate point.
struct KktPointCheck {
  double max_stationarity = 0;   // worst |lhs-rhs| over stationarity rows
  double max_complementarity = 0;  // worst |slack * dual| over pairs
};
KktPointCheck check_kkt_point(const ModelIR& ir, const KktSystem& sys,
                              const std::vector<double>& x);

// Post-solve audit that no slack or dual leans on its cap.
struct BigMAudit {
  double worst_slack_ratio = 0;  // max slack / Mp over pairs
  double worst_dual_ratio = 0;   // max dual / Md over pairs
  bool ok(double margin = 0.99) const {
    return worst_slack_ratio < margin && worst_dual_ratio < margin;
  }
};
BigMAudit audit_big_m(const ModelIR& ir, std::span<const KktPair> pairs,
                      const BigMRegistry& big_m, const std::vector<double>& x);

// CSV export: t,s,b,k,kind,quantity_mw,price_gbp_per_mwh (price = nodal price at the
// participant's bus; curtailment reported as its own row).
std::string dispatch_to_csv(const DispatchProblem& prob, const DispatchSolution& sol);

}  // namespace drtep
