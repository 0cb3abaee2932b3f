#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "drtep/experiments.hpp"
#include "drtep/mps_io.hpp"

namespace {

using namespace drtep;

constexpr int kOk = 0;
constexpr int kInfeasible = 2;
constexpr int kError = 3;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write '" + path.string() + "'");
  out << text;
}

const char* kind_label(ParticipantKind k) {
  switch (k) {
    case ParticipantKind::Generator: return "generator";
    case ParticipantKind::Consumer: return "consumer";
    case ParticipantKind::WindFarm: return "wind";
  }
  return "?";
}

std::string dispatch_csv(const NetworkCase& net, const DispatchProblem& prob,
                         const DispatchSolution& sol) {
  std::ostringstream os;
  os << "t,s,participant,kind,bus,quantity_mw,curtail_mw\n";
  for (int t = 0; t < prob.n_periods; ++t)
    for (int s = 0; s < prob.n_conditions; ++s) {
      const DispatchBlock& db = prob.block(t, s);
      const BlockSolution& bs = sol.blocks[size_t(t) * prob.n_conditions + s];
      for (size_t j = 0; j < db.participants.size(); ++j) {
        const Participant& p = net.participants[size_t(db.participants[j].participant_index)];
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", bs.quantity[j], bs.curtail[j]);
        os << t << ',' << s << ',' << p.id << ',' << kind_label(p.kind) << ',' << p.bus << ','
           << buf << "\n";
      }
    }
  return os.str();
}

std::string prices_csv(const DispatchProblem& prob, const DispatchSolution& sol) {
  std::ostringstream os;
  os << "t,s,bus,lmp_gbp_per_mwh\n";
  for (int t = 0; t < prob.n_periods; ++t)
    for (int s = 0; s < prob.n_conditions; ++s) {
      const BlockSolution& bs = sol.blocks[size_t(t) * prob.n_conditions + s];
      for (size_t b = 0; b < bs.lmp.size(); ++b) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", bs.lmp[b]);
        os << t << ',' << s << ',' << b << ',' << buf << "\n";
      }
    }
  return os.str();
}

const char* status_label(SolveStatus st) {
  switch (st) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::FeasibleAtLimit: return "feasible-at-limit";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::Error: return "error";
  }
  return "?";
}

int exit_code_for(SolveStatus st) {
  if (st == SolveStatus::Optimal || st == SolveStatus::FeasibleAtLimit) return kOk;
  if (st == SolveStatus::Infeasible || st == SolveStatus::Unbounded) return kInfeasible;
  return kError;
}

// ---------------------------------------------------------------------------------------

int cmd_gen_case(std::uint64_t seed, const std::string& out) {
  NetworkCase net = generate_garver_case(seed);
  save_case_file(net, out);
  std::printf("wrote %s: %zu buses, %zu corridors, %zu participants, %d periods\n", out.c_str(),
              net.buses.size(), net.lines.size(), net.participants.size(), net.horizon.periods);
  return kOk;
}

int cmd_gen_samples(const std::string& case_path, int count, std::uint64_t seed,
                    const std::string& role, const std::string& out) {
  NetworkCase net = load_case_file(case_path);
  ErrorSampleSet set = default_error_samples(net, count, seed, role);
  save_samples_csv(set, out);
  std::printf("wrote %s: %d samples x %zu farms x %d periods x %d conditions\n", out.c_str(),
              set.count(), set.farm_ids.size(), set.periods, set.conditions);
  return kOk;
}

struct SolveArgs {
  std::string case_path;
  std::string out_dir;
  std::string scheme = "sla";
  std::string samples_path;
  std::string bilinear = "binary-expansion";
  double eps = 0.05;
  double theta = 0.1;
  std::uint64_t seed = 1;
  double time_limit_s = 600;
  double mip_rel_gap = 1e-6;
  int bits = 0;
  int n_train = 50;
  bool do_export = false;
};

ErrorSampleSet training_samples(const SolveArgs& a, const NetworkCase& net) {
  if (a.samples_path.empty()) return default_error_samples(net, a.n_train, a.seed, "train");
  ErrorSampleSet set = load_samples_csv(a.samples_path, "train");
  if (set.periods != net.horizon.periods ||
      set.conditions != net.horizon.operating_conditions)
    throw std::invalid_argument("sample file covers " + std::to_string(set.periods) + "x" +
                                std::to_string(set.conditions) +
                                " period/condition blocks but the case has " +
                                std::to_string(net.horizon.periods) + "x" +
                                std::to_string(net.horizon.operating_conditions));
  clip_errors(set, net);
  return set;
}

int solve_exact_dispatch(const SolveArgs& a, const NetworkCase& net,
                         const std::vector<Configuration>& configs,
                         const ErrorSampleSet& train, const AmbiguityConfig& amb,
                         const SolverConfig& cfg, const std::filesystem::path& out) {
  if (a.do_export)
    std::fprintf(stderr, "note: --export applies to investment schemes; ignoring it\n");
  if (configs.empty() || !configs.front().valid) {
    std::fprintf(stderr,
                 "the existing network cannot host every participant without new circuits; "
                 "exact dispatch clears the network as built\n");
    return kInfeasible;
  }
  InvestmentPlan plan;
  plan.config_ids.assign(size_t(net.horizon.periods), configs.front().id);
  DispatchProblem prob = make_dispatch_problem(net, plan, configs, train, amb, {}, Scheme::Exact);
  auto backend = make_highs_backend();
  DispatchSolution sol = solve_dispatch_direct(prob, *backend, cfg);
  if (!sol.ok()) {
    std::fprintf(stderr, "dispatch: %s (%s)\n", status_label(sol.status), sol.message.c_str());
    return exit_code_for(sol.status);
  }
  write_text(out / "dispatch.csv", dispatch_csv(net, prob, sol));
  write_text(out / "prices.csv", prices_csv(prob, sol));
  std::ostringstream log;
  log << "command: exact-dispatch\n"
      << "status: " << status_label(sol.status) << "\n"
      << "welfare_gbp_per_h: " << sol.objective_gbp_per_h << "\n"
      << "solve_time_s: " << sol.solve_time_s << "\n";
  write_text(out / "solve.log", log.str());
  std::printf("dispatch %s: welfare %.2f GBP/h -> %s\n", status_label(sol.status),
              sol.objective_gbp_per_h, out.string().c_str());
  return kOk;
}

int cmd_solve(const SolveArgs& a) {
  if (a.scheme == "sfla") {
    std::fprintf(stderr,
                 "scheme 'sfla' cannot be embedded in the investment problem: its reduced "
                 "sample set destabilizes the equilibrium reformulation numerically. It is "
                 "available in the single-level dispatch toolkit; for planning use sla, la "
                 "or wcvar.\n");
    return kError;
  }
  NetworkCase net = load_case_file(a.case_path);
  if (a.bits > 0) net.tariff.expansion_bits = a.bits;
  const std::filesystem::path out(a.out_dir);
  std::filesystem::create_directories(out);

  ErrorSampleSet train = training_samples(a, net);
  AmbiguityConfig amb;
  amb.eps = a.eps;
  amb.theta = a.theta;
  amb.n = std::max(train.count(), 1);
  auto configs = enumerate_configurations(net);

  SolverConfig cfg;
  cfg.time_limit_s = a.time_limit_s;
  cfg.mip_rel_gap = a.mip_rel_gap;
  cfg.seed = int(a.seed & 0x7fffffff);

  if (a.scheme == "exact-dispatch" || a.scheme == "exact")
    return solve_exact_dispatch(a, net, configs, train, amb, cfg, out);

  const Scheme scheme = scheme_from_name(a.scheme);
  PlannerOptions opt;
  opt.bilinear_mode = bilinear_mode_from_name(a.bilinear);
  SingleLevelModel model = assemble_single_level(net, configs, train, amb, {}, scheme, opt);

  if (a.do_export) {
    write_mps_file(model.ir, (out / "model.mps").string());
    std::printf("wrote %s\n", (out / "model.mps").string().c_str());
  }
  if (opt.bilinear_mode == BilinearMode::Passthrough) {
    if (!a.do_export) {
      std::fprintf(stderr,
                   "passthrough mode keeps the tariff-revenue products quadratic, which the "
                   "MILP backend cannot solve; pass --export to write the quadratic model\n");
      return kError;
    }
    std::printf("passthrough model exported; skipping solve\n");
    return kOk;
  }

  auto backend = make_highs_backend();
  PlannerSolution ps = solve_single_level(model, *backend, cfg);
  if (!ps.ok()) {
    std::fprintf(stderr, "solve: %s (%s)\n", status_label(ps.status), ps.message.c_str());
    return exit_code_for(ps.status);
  }

  write_text(out / "investment.csv", investment_csv(model, ps));
  write_text(out / "tariffs.csv", tariff_csv(model, ps));

  BigMReport audit = verify_big_m(model, ps.x);
  auto total = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  };
  std::ostringstream log;
  log << "command: solve\nscheme: " << a.scheme << "\nstatus: " << status_label(ps.status)
      << "\nobjective_mgbp: " << ps.objective_mgbp
      << "\nmerchandising_surplus_mgbp: " << total(ps.ms_mgbp)
      << "\nvolumetric_revenue_mgbp: " << total(ps.vc_mgbp)
      << "\ncapacity_revenue_mgbp: " << total(ps.cc_mgbp)
      << "\ninvestment_mgbp: " << total(ps.invest_mgbp)
      << "\nadequacy_mgbp: " << ps.adequacy_mgbp << "\nsolve_time_s: " << ps.solve_time_s
      << "\nm_suspect: " << (audit.m_suspect() ? 1 : 0) << "\n";
  for (int t = 0; t < net.horizon.periods; ++t)
    log << "period " << t << ": ms=" << ps.ms_mgbp[size_t(t)] << " vc=" << ps.vc_mgbp[size_t(t)]
        << " cc=" << ps.cc_mgbp[size_t(t)] << " invest=" << ps.invest_mgbp[size_t(t)] << "\n";
  for (const auto& [tm, obj] : ps.incumbents)
    log << "incumbent: t=" << tm << " obj=" << obj << "\n";

  // re-clear the market under the adopted plan for dispatch and price reports
  DispatchProblem prob = make_dispatch_problem(net, ps.plan, configs, train, amb, {}, scheme);
  DispatchSolution ds = solve_dispatch_direct(prob, *backend, cfg);
  if (ds.ok()) {
    write_text(out / "dispatch.csv", dispatch_csv(net, prob, ds));
    write_text(out / "prices.csv", prices_csv(prob, ds));
  } else {
    log << "dispatch_reclear: " << status_label(ds.status) << " (" << ds.message << ")\n";
    std::fprintf(stderr, "warning: dispatch re-clearing failed: %s\n", ds.message.c_str());
  }
  write_text(out / "solve.log", log.str());

  std::printf("%s %s: objective %.4f MGBP (MS %.4f, VC %.4f, CC %.4f, invest %.4f) -> %s\n",
              a.scheme.c_str(), status_label(ps.status), ps.objective_mgbp, total(ps.ms_mgbp),
              total(ps.vc_mgbp), total(ps.cc_mgbp), total(ps.invest_mgbp),
              out.string().c_str());
  if (audit.m_suspect())
    std::fprintf(stderr, "warning: %zu activation bounds sit within 1%% of their cap "
                         "(worst ratio %.4f); objective may be cap-limited\n",
                 audit.flagged.size(), audit.worst_ratio);
  return kOk;
}

int cmd_bench(const std::string& spec_path, const std::string& out_override,
              double time_limit_override, int workers_override) {
  RunSpec spec = run_spec_from_toml(slurp(spec_path));
  if (!out_override.empty()) spec.out_dir = out_override;
  if (time_limit_override > 0) spec.time_limit_s = time_limit_override;
  if (workers_override > 0) spec.workers = workers_override;
  if (spec.out_dir.empty())
    throw std::invalid_argument("bench needs an output directory (out_dir key or --out)");
  spec.validate();

  auto rows = run_grid(spec);
  auto summaries = compare_schemes(rows);
  const std::string md = summary_markdown(summaries);
  write_text(std::filesystem::path(spec.out_dir) / "summary.md", md);

  int errored = 0;
  for (const auto& r : rows)
    if (!r.error.empty()) ++errored;
  std::fputs(md.c_str(), stdout);
  std::printf("%zu metrics rows (%d with errors) -> %s\n", rows.size(), errored,
              (std::filesystem::path(spec.out_dir) / "metrics.csv").string().c_str());
  if (errored > 0)
    std::printf("error details: %s\n",
                (std::filesystem::path(spec.out_dir) / "errors.log").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Bilevel transmission expansion planning over a distributionally robust "
      "joint chance-constrained market clearing"};
  app.require_subcommand(1);

  auto* gen_case = app.add_subcommand("gen-case", "Generate the six-bus benchmark case");
  std::uint64_t gc_seed = 1;
  std::string gc_out;
  gen_case->add_option("--seed", gc_seed, "Master seed for bids and capacities");
  gen_case->add_option("--out", gc_out, "Output case JSON path")->required();

  auto* gen_samples =
      app.add_subcommand("gen-samples", "Draw forecast-error samples for a case");
  std::string gs_case, gs_out, gs_role = "train";
  int gs_count = 50;
  std::uint64_t gs_seed = 1;
  gen_samples->add_option("--case", gs_case, "Case JSON path")
      ->required()
      ->check(CLI::ExistingFile);
  gen_samples->add_option("--count,--n,-n", gs_count, "Samples per period/condition block")
      ->check(CLI::NonNegativeNumber);
  gen_samples->add_option("--seed", gs_seed, "Master seed for the error model");
  gen_samples->add_option("--role", gs_role, "Sample set role")
      ->check(CLI::IsMember({"train", "test"}));
  gen_samples->add_option("--out", gs_out, "Output samples CSV path")->required();

  auto* solve = app.add_subcommand("solve", "Solve the investment problem for one setting");
  SolveArgs sa;
  solve->add_option("--case", sa.case_path, "Case JSON path")
      ->required()
      ->check(CLI::ExistingFile);
  solve->add_option("--scheme", sa.scheme, "Chance-constraint scheme")
      ->check(CLI::IsMember({"sla", "la", "wcvar", "exact-dispatch", "sfla"}));
  solve->add_option("--eps", sa.eps, "Joint violation budget in (0,1)");
  solve->add_option("--theta", sa.theta, "Ambiguity radius (MW)");
  solve->add_option("--seed", sa.seed, "Master seed (samples and solver)");
  solve->add_option("--time-limit", sa.time_limit_s, "Solver time limit in seconds");
  solve->add_option("--gap", sa.mip_rel_gap, "Relative MIP gap");
  solve->add_option("--bits", sa.bits, "Override the tariff binary-expansion width");
  solve->add_option("--n-train", sa.n_train, "Training samples when none are supplied");
  solve->add_option("--samples", sa.samples_path, "External training-sample CSV")
      ->check(CLI::ExistingFile);
  solve->add_option("--bilinear", sa.bilinear, "Tariff-revenue product handling")
      ->check(CLI::IsMember({"binary-expansion", "passthrough"}));
  solve->add_flag("--export", sa.do_export, "Write the assembled model as MPS");
  solve->add_option("--out", sa.out_dir, "Report output directory")->required();

  auto* bench = app.add_subcommand("bench", "Run a benchmark grid from a TOML run spec");
  std::string b_spec, b_out;
  double b_time_limit = 0;
  int b_workers = 0;
  bench->add_option("--spec", b_spec, "Run spec TOML path")
      ->required()
      ->check(CLI::ExistingFile);
  bench->add_option("--out", b_out, "Output directory (overrides out_dir in the spec)");
  bench->add_option("--time-limit", b_time_limit, "Override the per-solve time limit (s)");
  bench->add_option("--workers", b_workers, "Override the worker-thread count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kError;
  }

  try {
    if (*gen_case) return cmd_gen_case(gc_seed, gc_out);
    if (*gen_samples) return cmd_gen_samples(gs_case, gs_count, gs_seed, gs_role, gs_out);
    if (*solve) return cmd_solve(sa);
    if (*bench) return cmd_bench(b_spec, b_out, b_time_limit, b_workers);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kError;
  }
  return kError;
}
