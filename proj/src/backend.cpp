#include "drtep/backend.hpp"

#include <Highs.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "drtep/mps_io.hpp"

namespace drtep {

namespace {

HighsLp to_highs(const ModelIR& ir) {
  HighsLp lp;
  lp.num_col_ = ir.num_vars();
  lp.num_row_ = ir.num_rows();
  lp.sense_ = ir.obj_sense() == ObjSense::Max ? ::ObjSense::kMaximize : ::ObjSense::kMinimize;
  lp.offset_ = ir.obj_constant();
  lp.col_cost_.assign(size_t(ir.num_vars()), 0.0);
  for (const auto& t : ir.obj_terms()) lp.col_cost_[size_t(t.var)] = t.coef;
  for (const auto& v : ir.vars()) {
    lp.col_lower_.push_back(v.lb);
    lp.col_upper_.push_back(v.ub);
  }
  bool any_int = false;
  for (const auto& v : ir.vars())
    if (v.kind == VarKind::Binary) any_int = true;
  if (any_int) {
    for (const auto& v : ir.vars())
      lp.integrality_.push_back(v.kind == VarKind::Binary ? HighsVarType::kInteger
                                                          : HighsVarType::kContinuous);
  }
  lp.a_matrix_.format_ = MatrixFormat::kRowwise;
  lp.a_matrix_.start_.clear();
  lp.a_matrix_.start_.push_back(0);
  for (const auto& r : ir.rows()) {
    for (const auto& t : r.terms) {
      lp.a_matrix_.index_.push_back(t.var);
      lp.a_matrix_.value_.push_back(t.coef);
    }
    lp.a_matrix_.start_.push_back(HighsInt(lp.a_matrix_.index_.size()));
    switch (r.sense) {
      case RowSense::LE:
        lp.row_lower_.push_back(-kHighsInf);
        lp.row_upper_.push_back(r.rhs);
        break;
      case RowSense::GE:
        lp.row_lower_.push_back(r.rhs);
        lp.row_upper_.push_back(kHighsInf);
        break;
      case RowSense::EQ:
        lp.row_lower_.push_back(r.rhs);
        lp.row_upper_.push_back(r.rhs);
        break;
    }
  }
  return lp;
}

// Pulls the improving-incumbent trail out of a HiGHS MIP log: branch-and-bound table
// rows flagged with a solution-source letter carry (best objective, elapsed seconds).
std::vector<std::pair<double, double>> parse_incumbents(const std::string& log) {
  std::vector<std::pair<double, double>> out;
  std::istringstream is(log);
  std::string line;
  auto parse_double = [](const std::string& s, double& v) {
    if (s == "inf" || s == "-inf" || s == "Large") return false;
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end && *end == '\0';
  };
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string t;
    while (ls >> t) toks.push_back(t);
    // improving rows: single-letter solution-source marker, then the numeric table, e.g.
    // " L    1310     361       431   0.00%   933.16      920.14    1.41% ...  64957    11.4s"
    if (toks.size() < 10 || toks[0].size() != 1 || !std::isalpha((unsigned char)toks[0][0]))
      continue;
    const std::string& last = toks.back();
    if (last.size() < 2 || last.back() != 's') continue;
    double when;
    if (!parse_double(last.substr(0, last.size() - 1), when)) continue;
    double obj;  // BestSol sits 7th from the right: ... BestBound BestSol Gap Cuts InLp Confl LpIters Time
    if (parse_double(toks[toks.size() - 7], obj)) out.push_back({when, obj});
  }
  // keep only strict improvements in encounter order
  std::vector<std::pair<double, double>> dedup;
  for (const auto& e : out)
    if (dedup.empty() || e.second != dedup.back().second) dedup.push_back(e);
  return dedup;
}

class HighsBackend final : public SolverBackend {
public:
  std::string name() const override { return "highs"; }

  SolveResult solve(const ModelIR& ir, const SolverConfig& cfg) override {
    SolveResult res;
    if (ir.has_bilinear()) {
      res.message = "model carries bilinear terms; linearize or export instead";
      return res;
    }
    Highs highs;
    std::string log_path;
    bool is_mip = ir.num_binaries() > 0;
    if (is_mip) {
      // keep logging on but steer it into a file we can poll for the incumbent trail
      log_path = (std::filesystem::temp_directory_path() /
                  ("drtep_highs_" + std::to_string(::getpid()) + "_" +
                   std::to_string(counter_++) + ".log"))
                     .string();
      highs.setOptionValue("output_flag", true);
      highs.setOptionValue("log_to_console", cfg.log_to_stdout);
      highs.setOptionValue("log_file", log_path);
    } else {
      highs.setOptionValue("output_flag", cfg.log_to_stdout);
    }
    highs.setOptionValue("time_limit", cfg.time_limit_s);
    highs.setOptionValue("mip_rel_gap", cfg.mip_rel_gap);
    highs.setOptionValue("primal_feasibility_tolerance", std::max(cfg.feasibility_tol, 1e-10));
    highs.setOptionValue("dual_feasibility_tolerance", std::max(cfg.feasibility_tol, 1e-10));
    highs.setOptionValue("mip_feasibility_tolerance", std::max(cfg.feasibility_tol, 1e-10));
    highs.setOptionValue("random_seed", int(cfg.seed % 2147483647ull));
    highs.setOptionValue("threads", cfg.threads);
    if (cfg.threads == 1) highs.setOptionValue("parallel", "off");

    HighsLp lp = to_highs(ir);
    if (highs.passModel(lp) != HighsStatus::kOk) {
      res.message = "backend rejected model";
      return res;
    }
    double t0 = highs.getRunTime();
    HighsStatus st = highs.run();
    res.solve_time_s = highs.getRunTime() - t0;
    HighsModelStatus ms = highs.getModelStatus();
    if (ms == HighsModelStatus::kUnboundedOrInfeasible) {
      // presolve could not separate the two; rerun without it to get a definite answer
      highs.setOptionValue("presolve", "off");
      st = highs.run();
      ms = highs.getModelStatus();
    }
    if (st == HighsStatus::kError) {
      res.message = "backend error: " + highs.modelStatusToString(ms);
      return res;
    }

    const HighsInfo& info = highs.getInfo();
    bool have_primal = info.primal_solution_status == ::kSolutionStatusFeasible;
    switch (ms) {
      case HighsModelStatus::kOptimal: res.status = SolveStatus::Optimal; break;
      case HighsModelStatus::kInfeasible: res.status = SolveStatus::Infeasible; break;
      case HighsModelStatus::kUnbounded: res.status = SolveStatus::Unbounded; break;
      case HighsModelStatus::kTimeLimit:
      case HighsModelStatus::kIterationLimit:
      case HighsModelStatus::kSolutionLimit:
        if (have_primal) {
          res.status = SolveStatus::FeasibleAtLimit;
        } else {
          res.status = SolveStatus::Error;
          res.message = "limit reached without an incumbent";
        }
        break;
      default:
        res.status = SolveStatus::Error;
        res.message = "backend status: " + highs.modelStatusToString(ms);
        break;
    }

    if (have_primal &&
        (res.status == SolveStatus::Optimal || res.status == SolveStatus::FeasibleAtLimit)) {
      res.x = highs.getSolution().col_value;
      res.objective = info.objective_function_value;
      if (!is_mip && highs.getSolution().dual_valid) {
        res.row_dual = highs.getSolution().row_dual;
        res.col_dual = highs.getSolution().col_dual;
        res.has_duals = true;
      }
      if (!is_mip) res.incumbents.push_back({res.solve_time_s, res.objective});
    }
    if (is_mip && !log_path.empty()) {
      std::ifstream lf(log_path);
      if (lf) {
        std::ostringstream ss;
        ss << lf.rdbuf();
        res.incumbents = parse_incumbents(ss.str());
      }
      std::error_code ec;
      std::filesystem::remove(log_path, ec);
      if (res.incumbents.empty() && res.has_solution())
        res.incumbents.push_back({res.solve_time_s, res.objective});
    }
    return res;
  }

private:
  static inline int counter_ = 0;
};

class HighsCliBackend final : public SolverBackend {
public:
  explicit HighsCliBackend(std::string exe) : exe_(std::move(exe)) {
    if (exe_.empty()) {
      const char* env = std::getenv("DRTEP_HIGHS_BIN");
      exe_ = env ? env : "highs";
    }
  }
  std::string name() const override { return "highs-cli"; }

  SolveResult solve(const ModelIR& ir, const SolverConfig& cfg) override {
    SolveResult res;
    namespace fs = std::filesystem;
    std::string stem = (fs::temp_directory_path() /
                        ("drtep_cli_" + std::to_string(::getpid()) + "_" +
                         std::to_string(counter_++)))
                           .string();
    std::string mps = stem + ".mps", sol = stem + ".sol", log = stem + ".log";
    std::string opts = stem + ".opts";
    write_mps_file(ir, mps);
    {
      std::ofstream of(opts);
      of << "time_limit = " << cfg.time_limit_s << "\n"
         << "mip_rel_gap = " << cfg.mip_rel_gap << "\n"
         << "random_seed = " << int(cfg.seed % 2147483647ull) << "\n";
    }
    std::ostringstream cmd;
    cmd << exe_ << " --solution_file " << sol << " --options_file " << opts << " " << mps
        << " > " << log << " 2>&1";
    int rc = std::system(cmd.str().c_str());
    if (rc != 0) {
      res.message = "solver executable failed (exit " + std::to_string(rc) + ")";
      cleanup(stem);
      return res;
    }
    std::ifstream sf(sol);
    if (!sf) {
      res.message = "solver wrote no solution file";
      cleanup(stem);
      return res;
    }
    // HiGHS solution file: "Model status" line, then Columns/Rows blocks with name value
    std::string line, model_status;
    std::vector<double> x(size_t(ir.num_vars()), 0.0);
    bool in_cols = false;
    bool saw_cols = false;
    double objective = std::numeric_limits<double>::quiet_NaN();
    while (std::getline(sf, line)) {
      if (line.rfind("Model status:", 0) == 0) {
        model_status = line.substr(13);
        while (!model_status.empty() && model_status.front() == ' ')
          model_status.erase(model_status.begin());
        continue;
      }
      if (line.rfind("Objective", 0) == 0) {
        std::istringstream ls(line);
        std::string w;
        ls >> w >> objective;
        continue;
      }
      if (line == "# Columns" || line.rfind("Columns", 0) == 0) {
        in_cols = true;
        saw_cols = true;
        continue;
      }
      if (line.rfind("# Rows", 0) == 0 || line.rfind("Rows", 0) == 0) {
        in_cols = false;
        continue;
      }
      if (in_cols) {
        std::istringstream ls(line);
        std::string nm;
        double v;
        if (ls >> nm >> v) {
          VarId id = ir.find_var(nm);
          if (id >= 0) x[size_t(id)] = v;
        }
      }
    }
    cleanup(stem);
    if (model_status == "Infeasible") {
      res.status = SolveStatus::Infeasible;
      return res;
    }
    if (model_status == "Unbounded") {
      res.status = SolveStatus::Unbounded;
      return res;
    }
    if (!saw_cols) {
      res.message = "unrecognized solution file (status: " + model_status + ")";
      return res;
    }
    res.status = model_status == "Optimal" ? SolveStatus::Optimal : SolveStatus::FeasibleAtLimit;
    res.x = std::move(x);
    res.objective = std::isnan(objective) ? ir.eval_objective(res.x) : objective;
    res.incumbents.push_back({0.0, res.objective});
    return res;
  }

private:
  static void cleanup(const std::string& stem) {
    std::error_code ec;
    for (const char* ext : {".mps", ".sol", ".log", ".opts"})
      std::filesystem::remove(stem + ext, ec);
  }
  std::string exe_;
  static inline int counter_ = 0;
};

}  // namespace

std::unique_ptr<SolverBackend> make_highs_backend() { return std::make_unique<HighsBackend>(); }

std::unique_ptr<SolverBackend> make_highs_cli_backend(std::string exe_path) {
  return std::make_unique<HighsCliBackend>(std::move(exe_path));
}

std::unique_ptr<SolverBackend> make_backend(const std::string& name) {
  if (name.empty() || name == "highs") return make_highs_backend();
  if (name == "highs-cli") return make_highs_cli_backend();
  throw std::invalid_argument("unknown backend: " + name);
}

SolveResult solve_certified(SolverBackend& backend, const ModelIR& ir, const SolverConfig& cfg) {
  SolveResult res = backend.solve(ir, cfg);
  if (res.has_solution()) {
    auto viols = verify_solution(ir, res.x, cfg.certify_tol);
    double worst = 0;
    for (const auto& v : viols) worst = std::max(worst, v.amount);
    res.max_violation = worst;
    if (viols.empty()) {
      res.certified = true;
    } else {
      res.status = SolveStatus::Error;
      res.message = "solution failed independent re-check; worst violation " +
                    std::to_string(worst) + " across " + std::to_string(viols.size()) + " rows";
    }
  }
  return res;
}

SolveResult fix_binaries_and_resolve(SolverBackend& backend, const ModelIR& ir,
                                     const std::vector<double>& incumbent,
                                     const SolverConfig& cfg) {
  if (incumbent.size() != size_t(ir.num_vars()))
    throw std::invalid_argument("fix_binaries_and_resolve: incumbent dimension mismatch");
  ModelIR fixed = ir;
  for (VarId v = 0; v < fixed.num_vars(); ++v) {
    Variable& var = fixed.var_mutable(v);
    if (var.kind == VarKind::Binary) {
      double val = std::round(incumbent[size_t(v)]);
      var.kind = VarKind::Continuous;
      var.lb = var.ub = val;
    }
  }
  return backend.solve(fixed, cfg);
}

}  // namespace drtep
