#pragma once
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drtep/backend.hpp"
#include "drtep/dispatch.hpp"
#include "drtep/jcc.hpp"
#include "drtep/model_ir.hpp"
#include "drtep/network.hpp"
#include "drtep/uncertainty.hpp"

namespace drtep {

// How the tariff-times-quantity products in the volumetric revenue rows are handled.
// BinaryExpansion puts each volumetric tariff on a discrete grid so every product is
// binary-times-continuous and big-M linearizable (plain MILP backends suffice).
// Passthrough keeps them as declared bilinear rows for backends that accept those;
// such models are export-only for the bundled solver.
enum class BilinearMode { BinaryExpansion, Passthrough };

std::string bilinear_mode_name(BilinearMode m);
BilinearMode bilinear_mode_from_name(const std::string& name);

struct PlannerOptions {
  BilinearMode bilinear_mode = BilinearMode::BinaryExpansion;

  // Pin the volumetric tariffs to constants (line id -> £/MWh, absent = 0) instead of
  // optimizing them. No tariff-grid variables are emitted in this mode. The capacity
  // tariff stays decided by the revenue-ratio coupling row.
  std::optional<std::map<int, double>> fixed_tau_v;

  // Pin every investment decision to the given plan (configurations per period plus
  // reconductoring steps). Tariffs stay free unless fixed_tau_v is also set.
  const InvestmentPlan* fixed_plan = nullptr;

  double dual_big_m = 1e4;  // cap on every dual variable in the optimality system
  double big_m_scale = 1.0; // multiplies every big-M cap (sensitivity re-solves)

  // When true, assembly stops before resolving the tariff-revenue products; call
  // linearize_bilinear_terms on the returned model to finish it. Exists so that the
  // finishing pass is exercisable in isolation.
  bool defer_bilinear = false;
};

// One audited big-M bound: whenever `gate` evaluates to 1 at a solution, `value` is
// meant to stay clearly below `cap`. Values within 1% of the cap mark the run
// M-suspect (see verify_big_m).
struct BigMEntry {
  std::string label;
  LinExpr value;
  LinExpr gate;
  double cap = 0;
};

// One deferred tariff-revenue product sum(eta_k) * volume feeding a revenue variable:
// revenue = scale * tau * gate * volume, with gate binary-valued and the eta_k already
// big-M tied to tau * (their own gates). Consumed by linearize_bilinear_terms.
struct PendingRevenueProduct {
  int t = 0;
  int line = -1;             // network line index
  VarId revenue = -1;        // VC variable, M£
  double scale = 0;          // psi/1e6 * allocation weight
  std::vector<VarId> eta;    // tariff-activation variables summing to tau*gate
  LinExpr gate;              // z^R or sum_m z^P, binary-valued at solutions
  VarId volume = -1;         // period volume aggregate, MW
  double volume_cap = 0;     // big-M for the product
  double tau_fixed = -1;     // >= 0 when the tariff is a pinned constant
  std::string label;
};

// Variable handles for the upper-level (investment, tariff and revenue) block.
struct UpperIds {
  std::vector<int> recon_lines;    // line indices eligible for reconductoring
  std::vector<int> corridors;      // line indices eligible for parallel circuits
  std::vector<int> tariff_lines;   // union of the two, ascending

  // investment binaries
  std::vector<std::vector<std::vector<VarId>>> b_r;  // [t][recon line][step-1]
  std::vector<std::vector<VarId>> z_r;               // [t][recon line]
  std::vector<std::vector<VarId>> o;                 // [t][configuration]
  std::vector<std::vector<std::vector<VarId>>> z_p;  // [t][corridor][m-1]

  // tariffs and their activation products
  std::vector<VarId> tau_v;  // aligned with tariff_lines, £/MWh
  VarId tau_c = -1;          // £/MW per hour-equivalent, scaled by Psi in CC
  std::vector<std::vector<VarId>> tau_bits;            // [tariff line][bit], grid mode only
  std::vector<std::vector<VarId>> eta_rv;              // [t][recon line]
  std::vector<std::vector<std::vector<VarId>>> eta_pv; // [t][corridor][m-1]

  // money bookkeeping, all M£ per period
  std::vector<VarId> volume;   // [t] total cleared MW across conditions (definition
                               // row is added once the clearing blocks exist)
  std::vector<std::vector<VarId>> vc_r;  // [t][recon line]
  std::vector<std::vector<VarId>> vc_p;  // [t][corridor]
  std::vector<VarId> vc, cc, invest_cost, ms, surcharge;  // [t]
  RowId adequacy = -1;
};

// Per-clearing-block variable handles inside the single-level model. Dual-side ids
// reuse the market-clearing optimality-system layout.
struct PlannerBlockIds {
  int t = 0, s = 0;
  std::vector<VarId> q, cur;           // cur = -1 for non-wind
  VarId s_var = -1;                    // joint relaxation scalar (linear schemes)
  std::vector<VarId> r;                // per-sample relaxations (linear schemes)
  std::vector<VarId> alpha;            // CVaR per-sample excess
  VarId beta = -1, tau = -1;           // CVaR scalars
  RowId balance = -1;
  std::vector<RowId> wind_identity;    // -1 for non-wind

  // configuration-product variables
  std::vector<VarId> eta_pos, eta_neg;            // [bus*C + c], -1 where absent
  std::vector<VarId> eta2, eta3, eta4, eta5;      // [line*C + c], -1 where absent

  BlockKktIds kkt;
};

// Fully assembled single-level expansion-planning model: upper-level constraints, the
// clearing optimality system per (period, condition) with configuration selection, the
// linearized complementarity conditions, and the tariff-revenue products (linearized
// or declared bilinear).
struct SingleLevelModel {
  ModelIR ir;
  Scheme scheme = Scheme::Sla;
  BilinearMode mode = BilinearMode::BinaryExpansion;
  bool products_pending = false;  // true until linearize_bilinear_terms ran

  NetworkCase net;
  std::vector<Configuration> configs;
  std::vector<char> admissible;  // per configuration (valid and clearable)
  AmbiguityConfig amb;
  SchemeParams params;
  PlannerOptions options;
  int n_periods = 0, n_conditions = 0, n_lines = 0, n_buses = 0;
  double psi_mgbp = 0;  // hours per period / 1e6: £/h -> M£/period

  UpperIds upper;
  std::vector<PlannerBlockIds> blocks;                     // t * S + s
  std::vector<std::vector<BlockParticipant>> participants; // per block, raw bids

  std::vector<KktPair> pairs;        // complementarity pairs, for audits
  std::vector<VarId> comp_binaries;  // their indicator binaries
  std::vector<BigMEntry> m_entries;  // every audited big-M bound
  std::vector<PendingRevenueProduct> pending_products;

  const PlannerBlockIds& block(int t, int s) const {
    return blocks[size_t(t) * n_conditions + s];
  }
};

// Configurations the clearing can actually run under: connected, and when the
// transport radius is positive, no zero-rated corridor left without a circuit (such a
// corridor admits no robustly safe dispatch).
std::vector<char> admissible_configurations(const NetworkCase& net,
                                            const std::vector<Configuration>& configs,
                                            const AmbiguityConfig& amb);

// Emits the investment/tariff/revenue block: investment logic rows, per-period cost
// rows, tariff bounds and activation sandwiches, revenue bookkeeping (volumetric rows
// deferred as pending products), the capacity-revenue coupling and the discounted
// revenue-adequacy row. Clearing-dependent definition rows (volume, MS) are added by
// assemble_single_level once the clearing blocks exist.
UpperIds build_upper_constraints(ModelIR& ir, const NetworkCase& net,
                                 const std::vector<Configuration>& configs,
                                 std::span<const char> admissible,
                                 std::span<const std::vector<BlockParticipant>> participants,
                                 const PlannerOptions& opt,
                                 std::vector<BigMEntry>& m_entries,
                                 std::vector<PendingRevenueProduct>& pending);

// Variable handles needed to write one clearing block's merchandising surplus without
// price-quantity products.
struct MsBlockRefs {
  const std::vector<BlockParticipant>* participants = nullptr;
  std::span<const VarId> q;           // cleared quantities
  std::span<const VarId> cur;         // curtailment (-1 for non-wind)
  std::span<const VarId> phi_hi;      // upper-bound duals (-1 for wind)
  std::span<const VarId> phi_sch;     // schedule-identity duals (-1 otherwise)
  std::span<const VarId> phi_cur_hi;  // curtailment-cap duals (-1 otherwise)
};

// Merchandising surplus of one block in £/h as a linear expression over quantities and
// duals, valid at any point of the clearing optimality system. The price-quantity
// products are eliminated through the stationarity and complementary-slackness
// identities; the volumetric surcharge enters through the bid/reshaped-bid gap of each
// participant (zero when the refs carry raw bids).
LinExpr substitute_ms(const MsBlockRefs& refs);

// Builds the complete single-level model. The scheme must have a linear clearing
// (sla, la or wcvar); sfla and exact-dispatch are rejected. Unless
// opt.defer_bilinear is set, the tariff-revenue products are resolved per
// opt.bilinear_mode before returning.
SingleLevelModel assemble_single_level(const NetworkCase& net,
                                       const std::vector<Configuration>& configs,
                                       const ErrorSampleSet& train, const AmbiguityConfig& amb,
                                       SchemeParams params, Scheme scheme,
                                       const PlannerOptions& opt = {});

// Resolves the pending tariff-revenue products. BinaryExpansion puts each free tariff
// on the policy's binary grid (step = cap / (2^bits - 1)) and emits gated product
// variables; with pinned tariffs no grid variables are needed. Passthrough writes the
// revenue definitions as bilinear rows on the IR. Throws if the model has no pending
// products or the mode is unknown.
void linearize_bilinear_terms(SingleLevelModel& model, BilinearMode mode);

// One reported investment action.
struct InvestmentAction {
  int t = 0;
  int line = -1;
  std::string action;  // "reconductor" or "parallel"
  double added_mw = 0;
  double cost_mgbp = 0;
};

struct PlannerSolution {
  SolveStatus status = SolveStatus::Error;
  std::string message;
  double objective_mgbp = std::numeric_limits<double>::quiet_NaN();
  double solve_time_s = 0;
  std::vector<double> x;  // full model point (empty when no solution exists)

  InvestmentPlan plan;  // extracted decisions: configurations, uprates, tariffs
  std::vector<InvestmentAction> actions;
  std::vector<double> ms_mgbp, vc_mgbp, cc_mgbp, invest_mgbp;  // per period
  double adequacy_mgbp = 0;  // discounted sum of (MS + VC + CC - C)
  std::vector<std::pair<double, double>> incumbents;

  bool ok() const {
    return status == SolveStatus::Optimal || status == SolveStatus::FeasibleAtLimit;
  }
};

// Solves the assembled model and extracts the plan, per-period money flows and the
// investment actions. Models still carrying bilinear rows are rejected with a message
// naming the passthrough mode.
PlannerSolution solve_single_level(const SingleLevelModel& model, SolverBackend& backend,
                                   const SolverConfig& cfg);

// Post-solve audit of every registered big-M bound: an entry whose gate is active and
// whose value exceeds `margin` times its cap is flagged. A nonempty flag list marks
// the run M-suspect; the standing remedy is a re-solve with options.big_m_scale
// raised, whose objective must agree.
struct BigMFlag {
  std::string label;
  double value = 0, cap = 0, ratio = 0;
};
struct BigMReport {
  std::vector<BigMFlag> flagged;
  double worst_ratio = 0;
  bool m_suspect() const { return !flagged.empty(); }
};
BigMReport verify_big_m(const SingleLevelModel& model, const std::vector<double>& x,
                        double margin = 0.99);

// CSV reports. Investments: `t,corridor,action{reconductor|parallel},added_mw,cost_mgbp`
// (one row per action, periods ascending). Tariffs: `line,tau_v,tau_c` (one row per
// tariff-eligible line; the capacity tariff is a single system-wide value repeated).
std::string investment_csv(const SingleLevelModel& model, const PlannerSolution& sol);
std::string tariff_csv(const SingleLevelModel& model, const PlannerSolution& sol);

}  // namespace drtep
