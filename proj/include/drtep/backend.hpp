#pragma once
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drtep/model_ir.hpp"

namespace drtep {

enum class SolveStatus { Optimal, FeasibleAtLimit, Infeasible, Unbounded, Error };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::FeasibleAtLimit: return "feasible-at-limit";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    default: return "error";
  }
}

struct SolverConfig {
  double feasibility_tol = 1e-9;
  double mip_rel_gap = 1e-6;
  double time_limit_s = 600.0;
  int threads = 1;
  uint64_t seed = 0;
  bool log_to_stdout = false;
  // absolute-ish tolerance used by the independent solution re-check
  double certify_tol = 1e-6;
};

struct SolveResult {
  SolveStatus status = SolveStatus::Error;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> x;         // primal point; empty when none is available
  std::vector<double> row_dual;  // populated for pure LPs only
  std::vector<double> col_dual;  // reduced costs, pure LPs only
  bool has_duals = false;
  double solve_time_s = 0.0;
  // improving-incumbent trail (seconds since solve start, objective); for LPs a single
  // terminal entry. Polled from backend output, not callbacks.
  std::vector<std::pair<double, double>> incumbents;
  std::string message;
  bool certified = false;
  double max_violation = 0.0;

  bool has_solution() const { return !x.empty(); }
};

class SolverBackend {
public:
  virtual ~SolverBackend() = default;
  virtual std::string name() const = 0;
  virtual SolveResult solve(const ModelIR& ir, const SolverConfig& cfg) = 0;
};

// In-process HiGHS. Rejects models carrying bilinear terms (those are export-only).
std::unique_ptr<SolverBackend> make_highs_backend();

// Drives the standalone `highs` executable through an MPS file and its solution-file
// output. Path from DRTEP_HIGHS_BIN, argument, or PATH lookup. No duals, no incumbents.
std::unique_ptr<SolverBackend> make_highs_cli_backend(std::string exe_path = "");

// Backend registry used by the CLI: "highs" (default) or "highs-cli".
std::unique_ptr<SolverBackend> make_backend(const std::string& name);

// Solve + independent primal re-check against the IR; a point failing the re-check is
// demoted to an error result (backends are not trusted on faith).
SolveResult solve_certified(SolverBackend& backend, const ModelIR& ir, const SolverConfig& cfg);

// Clone the model with every binary pinned to its rounded incumbent value and all
// integrality dropped, then solve the remaining LP to expose dual values.
SolveResult fix_binaries_and_resolve(SolverBackend& backend, const ModelIR& ir,
                                     const std::vector<double>& incumbent,
                                     const SolverConfig& cfg);

}  // namespace drtep
