#pragma once
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drtep/backend.hpp"
#include "drtep/dispatch.hpp"
#include "drtep/network.hpp"
#include "drtep/planner.hpp"
#include "drtep/uncertainty.hpp"

namespace drtep {

// --------------------------------------------------------------------------------------
// Benchmark case generation (modified Garver six-bus expansion system)
// --------------------------------------------------------------------------------------

// Reference data for the six-bus benchmark. Defaults reproduce the study configuration;
// every number is editable before calling generate_garver_case. Node numbers are the
// conventional 1..6 labels; the generated case stores them as 0-based bus indices.
// The demand bid table and generator bid means are stand-in defaults in the usual
// day-ahead range — the original reference tables are not redistributed here.
struct GarverTemplate {
  struct ExistingLine {
    int from = 0, to = 0;        // 1-based node labels
    double reactance_pu = 0;
    double capacity_mw = 0;
    bool reconductorable = false;
  };
  struct CandidateCorridor {
    int from = 0, to = 0;        // 1-based node labels
    double reactance_pu = 0;
    double capacity_mw = 0;      // per added circuit
    double cost_mgbp = 0;        // per added circuit
    int max_circuits = 0;
  };

  std::vector<ExistingLine> existing = {
      {1, 2, 0.40, 100, false}, {1, 4, 0.60, 80, false}, {1, 5, 0.20, 100, false},
      {2, 3, 0.20, 100, true},  {2, 4, 0.40, 100, false}, {3, 5, 0.20, 100, true}};
  std::vector<CandidateCorridor> candidates = {{2, 6, 0.30, 100, 30.0, 3},
                                               {4, 6, 0.30, 100, 30.0, 3}};

  double recon_k_fix_mgbp = 1.0;        // fixed uprate charge
  double recon_k_var_mgbp_per_mw = 0.1; // per MW of added capacity
  double recon_factor_step = 0.05;      // capacity increase grid 0%,5%,...,max
  double recon_factor_max = 2.0;

  // node -> referenced total capacity (MW); each of the participants_per_node units
  // draws its own capacity around the node average
  std::map<int, double> gen_capacity_ref_mw = {{1, 150}, {3, 360}, {6, 600}};
  std::map<int, double> demand_capacity_ref_mw = {{1, 80}, {2, 240}, {3, 40}, {4, 160}, {5, 240}};
  std::map<int, double> gen_bid_mean_gbp = {{1, 30}, {3, 25}, {6, 12}};
  std::map<int, double> demand_bid_gbp = {{1, 50}, {2, 48}, {3, 46}, {4, 47}, {5, 49}};

  int participants_per_node = 5;
  double gen_bid_sd_frac = 0.10;  // bid sd = 10% of the node mean
  double gen_capacity_lo = 0.5, gen_capacity_hi = 1.5;     // x node average
  double demand_capacity_lo = 1.0, demand_capacity_hi = 2.0;

  double wind_total_mw = 380;
  double wind_share_bus6 = 0.8;        // remainder sits at node 3
  double wind_curtail_cost_gbp = 60;
  double wind_forecast_cf = 0.5;       // forecast as a fraction of installed capacity

  int periods = 4, conditions = 1;
  double discount_rate = 0.05, demand_growth = 0.05;
  double tau_upper_gbp = 12.7;
  int expansion_bits = 7;
};

// Deterministic six-bus case. Bids and capacities are drawn from named streams fanned
// out of the master seed ("gen_bids", "gen_caps", "dem_caps"), so the same seed always
// yields the same case and adding a stream never perturbs the others. The result is
// round-tripped through the JSON schema, so it is always a valid case.
NetworkCase generate_garver_case(std::uint64_t seed, const GarverTemplate& tpl = {});

// Synthetic per-farm forecast-error history in fraction-of-installed units: `rows`
// observations of `farms` coordinates sharing a latent factor with weight rho (pairwise
// correlation ~ rho), marginal sd `sd`, clipped to [-0.5, 0.5]. Deterministic in the
// seed; suitable input for fit_copula.
std::vector<std::vector<double>> synthetic_error_history(int rows, int farms, double rho,
                                                         double sd, std::uint64_t seed);

// The default sample sets shared by grid cells and the command line: a 156-row
// synthetic fractional history (shared-factor weight 0.5, sd 0.15 of installed) fitted
// with the copula model, sampled through the "<role>_samples" stream of `seed`. A case
// without wind farms, or a non-positive count, yields an empty set with the case's
// shape.
ErrorSampleSet default_error_samples(const NetworkCase& net, int count, std::uint64_t seed,
                                     const std::string& role);

// --------------------------------------------------------------------------------------
// Out-of-sample reliability
// --------------------------------------------------------------------------------------

struct ReliabilityReport {
  int periods = 0, conditions = 0;
  std::vector<double> joint_pct;  // [t*S+s]: % of samples with every line limit met
  double mean_pct = 0;            // average over (t,s)
  int samples = 0;
};

// Joint satisfaction rate of both directed flow limits on every line, per (t, s),
// evaluated at the dispatched quantities with per-line aggregated test errors added to
// the scheduled flows. Tolerance is in MW. Throws if the test set is empty or the
// solution carries no dispatch.
ReliabilityReport evaluate_reliability(const DispatchProblem& prob,
                                       const DispatchSolution& sol,
                                       const std::vector<Configuration>& configs,
                                       const ErrorSampleSet& test, double tol_mw = 1e-6);

// --------------------------------------------------------------------------------------
// Benchmark grid runs
// --------------------------------------------------------------------------------------

struct RunSpec {
  std::vector<double> eps_grid = {0.05};
  std::vector<double> theta_grid = {0.1};
  int periods = 2, conditions = 1;
  int n_train = 20, n_test = 1000;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<Scheme> schemes = {Scheme::Sla, Scheme::La, Scheme::Wcvar};
  double time_limit_s = 600;
  double mip_rel_gap = 1e-6;
  BilinearMode bilinear_mode = BilinearMode::BinaryExpansion;
  int workers = 1;
  GarverTemplate base;    // case template; periods/conditions above override its own
  std::string out_dir;    // when nonempty: metrics.csv (with resume) + per-run reports

  void validate() const;  // nonempty grids, distinct seeds, embeddable schemes
};

struct MetricsRow {
  std::string scheme;
  double eps = 0, theta = 0;
  int periods = 0;
  std::uint64_t seed = 0;
  double timef_s = 0;     // time to the first solution comparable with the SLA optimum
  double time_s = 0;      // total time to optimality, or the limit when not reached
  bool solvable = false;  // a feasible plan was found within the limit
  double obj_mgbp = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> obj_diff_pct;  // vs the SLA run of the same cell; only when
                                       // both runs are solvable, and never for SLA
  double reli_mean_pct = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> reli_pct;        // per (t,s), percent
  bool m_suspect = false;              // big-M audit flagged an active near-cap bound
  std::string error;                   // nonempty when the cell errored for this scheme
};

// Earliest incumbent time whose objective is within rel_gap of target_obj
// (maximization); the limit when no incumbent qualifies. The paper-style "time to
// first comparable high-quality solution".
double time_to_comparable(const std::vector<std::pair<double, double>>& incumbents,
                          double target_obj, double rel_gap, double time_limit_s);

// CSV exchange for metrics rows. Reliability columns are reli_t1..reli_tT when S == 1,
// reli_t{i}s{j} otherwise; booleans are 0/1; empty cells mean not-available. The row
// printer always emits periods x conditions reliability cells (empty when the run has
// none) so every line matches the header.
std::string metrics_csv_header(int periods, int conditions);
std::string metrics_csv_row(const MetricsRow& row, int conditions = 1);
std::vector<MetricsRow> metrics_rows_from_csv(const std::string& text);

// Runs the full (eps x theta x seed) grid for every scheme. Within a cell all schemes
// share the same generated case, training and test samples, and solver seed; SLA is
// solved first so comparability metrics can be derived. Cell failures are recorded in
// the row's error field and never abort the grid. With out_dir set, rows are appended
// to out_dir/metrics.csv as they finish (header written once), per-run investment and
// tariff reports are written alongside, and cells whose rows are already present in
// the file are skipped on re-entry (resume).
using BackendFactory = std::function<std::unique_ptr<SolverBackend>()>;
std::vector<MetricsRow> run_grid(const RunSpec& spec);
std::vector<MetricsRow> run_grid(const RunSpec& spec, const BackendFactory& make_backend_for_worker);

// Reads a RunSpec from a strict flat-TOML subset: `key = value` lines, `#` comments,
// double-quoted strings, single-line arrays. Keys: eps, theta, seeds, schemes, periods,
// conditions, n_train, n_test, time_limit_s, mip_rel_gap, bilinear, workers, out_dir,
// participants_per_node, expansion_bits, max_circuits, reconductoring. Scalars are
// accepted where a one-element array would do. Unknown keys, TOML tables, and
// malformed values are rejected with the offending line number.
RunSpec run_spec_from_toml(const std::string& text);

// --------------------------------------------------------------------------------------
// Cross-scheme summaries
// --------------------------------------------------------------------------------------

// Aggregations over All Runs (every row of the scheme) and Comparable Runs (only cells
// where every scheme in the input was solvable). Unsolvable rows carry time = limit by
// construction and stay in the AR means; objective statistics are CR-only.
struct SchemeSummary {
  std::string scheme;
  int n_rows = 0;        // AR row count
  int n_solvable = 0;    // rows with a feasible solution within the limit
  double ar_timef_mean_s = 0, ar_time_mean_s = 0;
  int n_comparable = 0;  // CR row count
  double cr_timef_mean_s = std::numeric_limits<double>::quiet_NaN();
  double cr_time_mean_s = std::numeric_limits<double>::quiet_NaN();
  double cr_time_p2_5_s = std::numeric_limits<double>::quiet_NaN();
  double cr_time_p97_5_s = std::numeric_limits<double>::quiet_NaN();
  double cr_obj_mean_mgbp = std::numeric_limits<double>::quiet_NaN();
  double cr_obj_diff_mean_pct = std::numeric_limits<double>::quiet_NaN();
  double reli_mean_pct = std::numeric_limits<double>::quiet_NaN();  // over solvable rows
};

std::vector<SchemeSummary> compare_schemes(const std::vector<MetricsRow>& rows);

// Markdown table over the summaries (one row per scheme).
std::string summary_markdown(const std::vector<SchemeSummary>& summaries);

}  // namespace drtep
