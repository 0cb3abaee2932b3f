#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "drtep/planner.hpp"
#include "drtep/rng.hpp"

using namespace drtep;

namespace {

Participant make_participant(int id, ParticipantKind kind, int bus, double qmax, double bid,
                             double cur_cost = 0) {
  Participant p;
  p.id = id;
  p.kind = kind;
  p.bus = bus;
  p.qty_max_mw = qmax;
  p.bid_gbp_per_mwh = bid;
  p.curtailment_cost_gbp_per_mwh = cur_cost;
  return p;
}

double psi() { return 8760.0 / 1e6; }

// One bus, no network: a cheap generator meets a valuable consumer.
NetworkCase single_bus_case() {
  NetworkCase c;
  c.name = "single";
  c.buses = {{0, true, ""}};
  c.slack_bus = 0;
  c.horizon.periods = 1;
  c.horizon.operating_conditions = 1;
  c.participants.push_back(make_participant(0, ParticipantKind::Generator, 0, 100, 10));
  c.participants.push_back(make_participant(1, ParticipantKind::Consumer, 0, 100, 50));
  return c;
}

// Two buses, one built 100 MW corridor that can take one extra 80 MW circuit.
NetworkCase corridor_case(double expansion_cost = 2.0, int periods = 1) {
  NetworkCase c;
  c.name = "corridor";
  c.buses = {{0, true, ""}, {1, false, ""}};
  c.slack_bus = 0;
  c.horizon.periods = periods;
  c.horizon.operating_conditions = 1;
  TransmissionLine l;
  l.id = 0;
  l.from = 0;
  l.to = 1;
  l.reactance = 0.1;
  l.capacity_mw = 100;
  l.expandable = true;
  l.candidate_capacity_mw = 80;
  l.candidate_reactance = 0.1;
  l.max_circuits = 1;
  l.expansion_cost_mgbp = expansion_cost;
  c.lines = {l};
  c.participants.push_back(make_participant(0, ParticipantKind::Generator, 0, 200, 10));
  c.participants.push_back(make_participant(1, ParticipantKind::Consumer, 1, 150, 50));
  return c;
}

// Two buses, one built 100 MW line that can be uprated by 50% or 100%.
NetworkCase recon_case(int periods = 2) {
  NetworkCase c;
  c.name = "uprate";
  c.buses = {{0, true, ""}, {1, false, ""}};
  c.slack_bus = 0;
  c.horizon.periods = periods;
  c.horizon.operating_conditions = 1;
  TransmissionLine l;
  l.id = 0;
  l.from = 0;
  l.to = 1;
  l.reactance = 0.1;
  l.capacity_mw = 100;
  l.reconductorable = true;
  c.lines = {l};
  c.recon.factors = {0.0, 0.5, 1.0};
  c.recon.lines = {{0, 1.0, 0.1}};
  c.participants.push_back(make_participant(0, ParticipantKind::Generator, 0, 200, 10));
  c.participants.push_back(make_participant(1, ParticipantKind::Consumer, 1, 150, 50));
  return c;
}

// Equal-reactance triangle with two generators, one consumer and one wind farm. No
// investment options: exercises the clearing blocks and money rows in isolation.
NetworkCase triangle_case(double line_cap = 60) {
  NetworkCase c;
  c.name = "triangle";
  c.buses = {{0, true, ""}, {1, false, ""}, {2, false, ""}};
  c.slack_bus = 0;
  c.horizon.periods = 1;
  c.horizon.operating_conditions = 1;
  auto mk = [&](int id, int f, int t) {
    TransmissionLine l;
    l.id = id;
    l.from = f;
    l.to = t;
    l.reactance = 0.2;
    l.capacity_mw = line_cap;
    return l;
  };
  c.lines = {mk(0, 0, 1), mk(1, 1, 2), mk(2, 0, 2)};
  c.participants.push_back(make_participant(0, ParticipantKind::Generator, 0, 120, 15));
  c.participants.push_back(make_participant(1, ParticipantKind::Generator, 1, 100, 30));
  c.participants.push_back(make_participant(2, ParticipantKind::Consumer, 2, 130, 55));
  Participant w = make_participant(3, ParticipantKind::WindFarm, 1, 60, 0, 60);
  w.forecast_mw = {{40.0}};
  c.participants.push_back(w);
  return c;
}

ErrorSampleSet synthetic_errors(const NetworkCase& c, int n, double sd, std::uint64_t seed) {
  ErrorSampleSet set;
  set.role = "train";
  set.seed = seed;
  set.periods = c.horizon.periods;
  set.conditions = c.horizon.operating_conditions;
  set.farm_ids = c.participants_of(ParticipantKind::WindFarm);
  Rng rng(seed);
  set.values.resize(size_t(n) * set.periods * set.conditions * set.farm_ids.size());
  for (double& v : set.values) v = sd * rng.normal();
  clip_errors(set, c);
  return set;
}

AmbiguityConfig amb_cfg(int n, double eps, double theta) {
  AmbiguityConfig a;
  a.n = n;
  a.eps = eps;
  a.theta = theta;
  return a;
}

SolverConfig quiet() {
  SolverConfig cfg;
  cfg.log_to_stdout = false;
  return cfg;
}

const LinearRow* find_row(const ModelIR& ir, const std::string& name) {
  for (const auto& r : ir.rows())
    if (r.name == name) return &r;
  return nullptr;
}

double coef_on(const LinearRow& row, VarId v) {
  for (const auto& t : row.terms)
    if (t.var == v) return t.coef;
  return 0.0;
}

// Investment outlay of a pinned plan in period t (uprate charges plus circuit additions).
double plan_invest_mgbp(const NetworkCase& net, const std::vector<Configuration>& cfgs,
                        const InvestmentPlan& plan, int t) {
  double cost = 0;
  for (const auto& rc : plan.recon) {
    if (rc.from_period != t) continue;
    const auto* lc = net.recon.cost_for(rc.line_id);
    REQUIRE(lc != nullptr);
    for (const auto& ln : net.lines)
      if (ln.id == rc.line_id)
        cost += lc->k_fix_mgbp + lc->k_var_mgbp_per_mw * rc.factor * ln.capacity_mw;
  }
  const auto exp = net.expandable_lines();
  for (size_t e = 0; e < exp.size(); ++e) {
    const int cur = cfgs[size_t(plan.config_ids[size_t(t)])].circuits[e];
    const int prev = t > 0 ? cfgs[size_t(plan.config_ids[size_t(t - 1)])].circuits[e] : 0;
    if (cur > prev)
      cost += (cur - prev) * net.lines[size_t(exp[e])].expansion_cost_mgbp;
  }
  return cost;
}

struct PlanEval {
  double objective_mgbp = 0;  // discounted raw-bid welfare minus investment
  double adequacy_mgbp = 0;   // discounted MS (+ tariff revenue) minus investment
};

// Independent oracle: evaluate a pinned plan by clearing the market directly and pricing
// it off the clearing duals. Raw-bid welfare = reshaped welfare + surcharge * volume.
PlanEval evaluate_plan_direct(const NetworkCase& net, const std::vector<Configuration>& cfgs,
                              const ErrorSampleSet& train, const AmbiguityConfig& amb,
                              const InvestmentPlan& plan, Scheme scheme) {
  DispatchProblem prob = make_dispatch_problem(net, plan, cfgs, train, amb, {}, scheme);
  auto backend = make_highs_backend();
  DispatchSolution ds = solve_dispatch_direct(prob, *backend, quiet());
  REQUIRE(ds.ok());
  const int S = net.horizon.operating_conditions;
  PlanEval ev;
  for (int t = 0; t < net.horizon.periods; ++t) {
    double raw_welfare = 0, ms = 0, volume = 0, delta = 0;
    for (const auto& bp0 : prob.block(t, 0).participants) {
      delta = bp0.kind == ParticipantKind::Consumer ? bp0.bid - bp0.bid_hat
                                                    : bp0.bid_hat - bp0.bid;
      break;
    }
    for (int s = 0; s < S; ++s) {
      const BlockSolution& bs = ds.blocks[size_t(t) * S + s];
      const auto& parts = prob.block(t, s).participants;
      raw_welfare += bs.welfare_gbp_per_h;
      for (size_t j = 0; j < parts.size(); ++j) {
        volume += bs.quantity[j];
        const double sign = parts[j].kind == ParticipantKind::Consumer ? 1.0 : -1.0;
        ms += bs.lmp[size_t(parts[j].bus)] * sign * bs.quantity[j];
      }
    }
    raw_welfare += delta * volume;
    const double vc = psi() * delta * volume;  // uniform per-MWh surcharge collected
    const double invest = plan_invest_mgbp(net, cfgs, plan, t);
    const double rho = net.tariff.rho_vc;
    ev.objective_mgbp += net.discount(t) * (psi() * raw_welfare - invest);
    // settlement at clearing prices is the pure congestion rent; the surcharge legs
    // (paid on injection and withdrawal alike) arrive separately as VC and CC
    ev.adequacy_mgbp += net.discount(t) * (psi() * ms + vc + rho * vc - invest);
  }
  return ev;
}

}  // namespace

// ----------------------------------------------------------------------------------------
// Structure of the investment block
// ----------------------------------------------------------------------------------------

TEST_CASE("investment block: row census, uprate cost arithmetic, tariff grid") {
  NetworkCase net = recon_case(2);
  auto cfgs = enumerate_configurations(net);
  REQUIRE(cfgs.size() == 1);  // no corridors: a single configuration
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb_cfg(3, 0.2, 1e-8), {},
                                             Scheme::Sla);

  const ModelIR& ir = m.ir;
  CHECK(ir.count_rows_with_tag("ul:cost") == 2);
  CHECK(ir.count_rows_with_tag("ul:ms") == 2);
  CHECK(ir.count_rows_with_tag("ul:volume") == 2);
  CHECK(ir.count_rows_with_tag("ul:reshape") == 2);
  CHECK(ir.count_rows_with_tag("ul:adequacy") == 1);
  CHECK(ir.count_rows_with_tag("ul:coupling") == 1);
  CHECK(ir.count_rows_with_tag("ul:tariff") == 1);  // one grid row for the one line
  CHECK(ir.count_rows_with_tag("sl:budget") == 2);
  CHECK(ir.count_rows_with_tag("sl:sample") == 2 * 1 * 3 * 2);  // 2 sides x L x N x T
  CHECK(ir.count_rows_with_tag("sl:strengthen") == 2 * 1 * 2);

  // a 50% uprate of a 100 MW line at Kfix=1, Kvar=0.1/MW must cost 6 M pounds
  const LinearRow* cost0 = find_row(ir, "ul:cost_t0");
  REQUIRE(cost0 != nullptr);
  VarId br_half = ir.find_var("ul:br_t0_l0_j1");
  VarId br_full = ir.find_var("ul:br_t0_l0_j2");
  REQUIRE(br_half >= 0);
  REQUIRE(br_full >= 0);
  CHECK(coef_on(*cost0, br_half) == doctest::Approx(-6.0));
  CHECK(coef_on(*cost0, br_full) == doctest::Approx(-11.0));

  // commitment state is cumulative and committed at most once over the horizon
  const LinearRow* zdef = find_row(ir, "ul:zr_def_t1_l0");
  REQUIRE(zdef != nullptr);
  CHECK(zdef->terms.size() == 5);  // z itself plus both steps in both periods
  const LinearRow* once = find_row(ir, "ul:recon_once_l0");
  REQUIRE(once != nullptr);
  CHECK(once->sense == RowSense::LE);
  CHECK(once->rhs == 1.0);

  // tariff grid: 7 bits against a 12.7 cap gives an exact 0.1 step
  const LinearRow* grid = find_row(ir, "ul:grid_l0");
  REQUIRE(grid != nullptr);
  for (int bb = 0; bb < 7; ++bb) {
    VarId y = ir.find_var("ul:bit_l0_b" + std::to_string(bb));
    REQUIRE(y >= 0);
    CHECK(coef_on(*grid, y) == doctest::Approx(-0.1 * double(1 << bb)));
  }
  CHECK(ir.find_var("ul:bit_l0_b7") == -1);

  // the surcharge variable enters every quantity-stationarity row with coefficient one
  const LinearRow* st_gen = find_row(ir, "t0s0:st_q0");
  const LinearRow* st_dem = find_row(ir, "t0s0:st_q1");
  REQUIRE(st_gen != nullptr);
  REQUIRE(st_dem != nullptr);
  VarId d0 = ir.find_var("ul:D_t0");
  VarId pi0 = ir.find_var("t0s0:pi");
  REQUIRE(d0 >= 0);
  CHECK(coef_on(*st_gen, d0) == doctest::Approx(1.0));
  CHECK(coef_on(*st_dem, d0) == doctest::Approx(1.0));
  CHECK(coef_on(*st_gen, pi0) == doctest::Approx(-1.0));
  CHECK(coef_on(*st_dem, pi0) == doctest::Approx(1.0));
  CHECK(st_gen->rhs == doctest::Approx(-10.0));
  CHECK(st_dem->rhs == doctest::Approx(50.0));

  CHECK(m.comp_binaries.size() == m.pairs.size());
  for (const BigMEntry& e : m.m_entries) CHECK(e.cap > 0.0);
}

TEST_CASE("admissibility: unbuilt corridors need a circuit when the radius is positive") {
  // third parallel path keeps the consumer connected so validity alone never rules c0 out
  NetworkCase net = corridor_case();
  TransmissionLine green;
  green.id = 1;
  green.from = 0;
  green.to = 1;
  green.capacity_mw = 0;  // nothing built yet
  green.expandable = true;
  green.candidate_capacity_mw = 50;
  green.candidate_reactance = 0.2;
  green.max_circuits = 1;
  green.expansion_cost_mgbp = 1;
  net.lines.push_back(green);
  auto cfgs = enumerate_configurations(net);
  REQUIRE(cfgs.size() == 4);

  auto adm0 = admissible_configurations(net, cfgs, amb_cfg(3, 0.2, 0.0));
  auto adm1 = admissible_configurations(net, cfgs, amb_cfg(3, 0.2, 0.5));
  int n0 = 0, n1 = 0;
  for (size_t c = 0; c < cfgs.size(); ++c) {
    n0 += adm0[c];
    n1 += adm1[c];
    if (adm1[c]) {
      // the green corridor is the second expandable line in id order
      CHECK(cfgs[c].circuits[1] >= 1);
    }
  }
  CHECK(n0 == 4);
  CHECK(n1 == 2);
}

TEST_CASE("assembly guards") {
  NetworkCase net = corridor_case();
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);

  CHECK_THROWS_WITH_AS(assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Exact),
                       doctest::Contains("use sla, la or wcvar"), std::invalid_argument);
  CHECK_THROWS_AS(assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sfla),
                  std::invalid_argument);

  // disconnected consumer: no admissible configuration at all
  NetworkCase island = single_bus_case();
  island.buses.push_back({1, false, ""});
  island.participants.push_back(make_participant(2, ParticipantKind::Consumer, 1, 50, 40));
  auto icfgs = enumerate_configurations(island);
  CHECK_THROWS_WITH_AS(assemble_single_level(island, icfgs, {}, amb, {}, Scheme::Sla),
                       doctest::Contains("no admissible configuration"),
                       std::invalid_argument);

  // pinned plans must be expressible
  NetworkCase rnet = recon_case(1);
  auto rcfgs = enumerate_configurations(rnet);
  InvestmentPlan bad_len;
  bad_len.config_ids = {0, 0};
  PlannerOptions opt;
  opt.fixed_plan = &bad_len;
  CHECK_THROWS_WITH_AS(assemble_single_level(rnet, rcfgs, {}, amb, {}, Scheme::Sla, opt),
                       doctest::Contains("one configuration per period"),
                       std::invalid_argument);
  InvestmentPlan bad_factor;
  bad_factor.config_ids = {0};
  bad_factor.recon.push_back({0, 0, 0.7});
  opt.fixed_plan = &bad_factor;
  CHECK_THROWS_WITH_AS(assemble_single_level(rnet, rcfgs, {}, amb, {}, Scheme::Sla, opt),
                       doctest::Contains("not on the reconductoring grid"),
                       std::invalid_argument);

  // uprate-eligible lines must carry a cost entry
  NetworkCase nocost = recon_case(1);
  nocost.recon.lines.clear();
  auto ncfgs = enumerate_configurations(nocost);
  CHECK_THROWS_WITH_AS(assemble_single_level(nocost, ncfgs, {}, amb, {}, Scheme::Sla),
                       doctest::Contains("no uprate cost entry"), std::invalid_argument);
}

// ----------------------------------------------------------------------------------------
// Money rows against independent clearing oracles
// ----------------------------------------------------------------------------------------

TEST_CASE("single-bus planner: welfare carried through, no surplus, no tariffs") {
  NetworkCase net = single_bus_case();
  std::vector<Configuration> cfgs = {make_configuration(net, {}, 0)};
  InvestmentPlan plan;
  plan.config_ids = {0};
  PlannerOptions opt;
  opt.fixed_plan = &plan;
  SingleLevelModel m =
      assemble_single_level(net, cfgs, {}, amb_cfg(3, 0.2, 1e-8), {}, Scheme::Sla, opt);
  CHECK_FALSE(m.products_pending);
  CHECK(m.pending_products.empty());  // no tariff-eligible lines at all

  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());
  CHECK(sol.objective_mgbp == doctest::Approx(psi() * 4000.0));  // (50-10) x 100 MW
  CHECK(std::fabs(sol.ms_mgbp[0]) <= 1e-6);
  CHECK(std::fabs(sol.vc_mgbp[0]) <= 1e-9);
  CHECK(std::fabs(sol.cc_mgbp[0]) <= 1e-9);
  CHECK(sol.adequacy_mgbp >= -1e-6);
  CHECK(sol.actions.empty());
}

TEST_CASE("merchandising surplus equals nodal-price settlement on a congested triangle") {
  NetworkCase net = triangle_case(60);
  std::vector<Configuration> cfgs = {make_configuration(net, {}, 0)};
  ErrorSampleSet train = synthetic_errors(net, 10, 5.0, 7);
  const AmbiguityConfig amb = amb_cfg(10, 0.2, 0.5);
  InvestmentPlan plan;
  plan.config_ids = {0};
  PlannerOptions opt;
  opt.fixed_plan = &plan;
  SingleLevelModel m = assemble_single_level(net, cfgs, train, amb, {}, Scheme::Sla, opt);

  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());

  // the model's MS variable must match pricing the model's own clearing point at the
  // nodal prices recovered from the model's own duals
  DispatchProblem prob = make_dispatch_problem(net, plan, cfgs, train, amb, {}, Scheme::Sla);
  const PlannerBlockIds& blk = m.block(0, 0);
  const int L = m.n_lines, N = amb.n;
  std::vector<double> mu2(size_t(L) * N), mu3(size_t(L) * N);
  std::vector<double> mu4(static_cast<size_t>(L)), mu5(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < N; ++i) {
      mu2[size_t(l) * N + i] = sol.x[size_t(blk.kkt.mu2[size_t(l) * N + i])];
      mu3[size_t(l) * N + i] = sol.x[size_t(blk.kkt.mu3[size_t(l) * N + i])];
    }
    mu4[size_t(l)] = sol.x[size_t(blk.kkt.mu4[size_t(l)])];
    mu5[size_t(l)] = sol.x[size_t(blk.kkt.mu5[size_t(l)])];
  }
  std::vector<double> lmp =
      recover_lmp(prob, 0, sol.x[size_t(blk.kkt.pi)], mu2, mu3, mu4, mu5);
  double ms_ref = 0;
  const auto& parts = m.participants[0];
  for (size_t j = 0; j < parts.size(); ++j) {
    const double sign = parts[j].kind == ParticipantKind::Consumer ? 1.0 : -1.0;
    ms_ref += lmp[size_t(parts[j].bus)] * sign * sol.x[size_t(blk.q[j])];
  }
  CHECK(std::fabs(sol.ms_mgbp[0] - psi() * ms_ref) <= 1e-4 * std::max(1.0, std::fabs(ms_ref)));

  // and the objective must match clearing the same plan directly
  PlanEval ev = evaluate_plan_direct(net, cfgs, train, amb, plan, Scheme::Sla);
  CHECK(sol.objective_mgbp ==
        doctest::Approx(ev.objective_mgbp).epsilon(1e-5).scale(std::fabs(ev.objective_mgbp)));
}

TEST_CASE("pinned plan and pinned tariff reproduce the direct clearing, tariff legs exact") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  REQUIRE(cfgs.size() == 2);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);

  InvestmentPlan plan;
  plan.config_ids = {1};  // build the second circuit: 180 MW total
  plan.tau_v = {{0, 2.0}};
  PlannerOptions opt;
  opt.fixed_plan = &plan;
  opt.fixed_tau_v = std::map<int, double>{{0, 2.0}};
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, opt);
  // pinned tariffs need no grid bits
  CHECK(m.ir.find_var("ul:bit_l0_b0") == -1);

  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());

  // frozen arithmetic: 150 MW clears both ways, volume 300 MW, tariff 2 pounds/MWh
  const double vc_expect = psi() * 2.0 * 300.0;
  CHECK(sol.objective_mgbp == doctest::Approx(psi() * 6000.0 - 2.0));
  CHECK(sol.vc_mgbp[0] == doctest::Approx(vc_expect));
  CHECK(sol.cc_mgbp[0] == doctest::Approx(net.tariff.rho_vc * vc_expect));
  CHECK(std::fabs(sol.ms_mgbp[0]) <= 1e-5);
  CHECK(sol.adequacy_mgbp == doctest::Approx(2 * vc_expect - 2.0));
  CHECK(sol.x[size_t(m.upper.volume[0])] == doctest::Approx(300.0));

  // direct-clearing oracle under the same pinned decisions
  PlanEval ev = evaluate_plan_direct(net, cfgs, {}, amb, plan, Scheme::Sla);
  CHECK(sol.objective_mgbp == doctest::Approx(ev.objective_mgbp).epsilon(1e-6));
  CHECK(sol.adequacy_mgbp == doctest::Approx(ev.adequacy_mgbp).epsilon(1e-5));
}

// ----------------------------------------------------------------------------------------
// Free investment decisions against enumeration oracles
// ----------------------------------------------------------------------------------------

TEST_CASE("zero tariffs: revenue adequacy forces the self-financing plan") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);

  // enumeration oracle over pinned plans, keeping only revenue-adequate ones
  double best = -1e30;
  int best_cfg = -1;
  for (int cid = 0; cid < 2; ++cid) {
    InvestmentPlan plan;
    plan.config_ids = {cid};
    PlanEval ev = evaluate_plan_direct(net, cfgs, {}, amb, plan, Scheme::Sla);
    if (ev.adequacy_mgbp < -1e-9) continue;
    if (ev.objective_mgbp > best) {
      best = ev.objective_mgbp;
      best_cfg = cid;
    }
  }
  CHECK(best_cfg == 0);  // the new circuit uncongests the line: no rent left to pay for it
  CHECK(best == doctest::Approx(psi() * 4000.0));

  PlannerOptions opt;
  opt.fixed_tau_v = std::map<int, double>{};  // no volumetric tariffs anywhere
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, opt);
  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());
  CHECK(sol.objective_mgbp == doctest::Approx(best).epsilon(1e-6));
  CHECK(sol.plan.config_ids[0] == best_cfg);
  CHECK(sol.actions.empty());
  CHECK(sol.invest_mgbp[0] == doctest::Approx(0.0));
  CHECK(sol.adequacy_mgbp >= -1e-6);
}

TEST_CASE("free tariffs unlock the welfare-superior circuit") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla);
  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());

  // welfare 6000 at raw bids, 2 M build cost; the tariff itself never enters the objective
  CHECK(sol.objective_mgbp == doctest::Approx(psi() * 6000.0 - 2.0));
  CHECK(sol.plan.config_ids[0] == 1);
  REQUIRE(sol.actions.size() == 1);
  CHECK(sol.actions[0].action == "parallel");
  CHECK(sol.actions[0].added_mw == doctest::Approx(80.0));
  CHECK(sol.actions[0].cost_mgbp == doctest::Approx(2.0));
  CHECK(sol.adequacy_mgbp >= -1e-6);
  // collected revenue covers the build: tau of at least 2/(2 psi 300) on the 0.1 grid
  CHECK(sol.plan.tau_v.at(0) >= 0.4 - 1e-9);
  const double recovered = sol.vc_mgbp[0] + sol.cc_mgbp[0];
  CHECK(recovered >= 2.0 - 1e-6);

  // the model point satisfies every row and stays clear of its big-M caps
  CHECK(verify_solution(m.ir, sol.x, 1e-5).empty());
  BigMReport rep = verify_big_m(m, sol.x);
  CHECK_FALSE(rep.m_suspect());
  CHECK(rep.worst_ratio < 0.99);

  // integrality invariants: one configuration per period, circuit state consistent
  double osum = 0;
  for (size_t c = 0; c < cfgs.size(); ++c) osum += sol.x[size_t(m.upper.o[0][c])];
  CHECK(osum == doctest::Approx(1.0));
  double zp = sol.x[size_t(m.upper.z_p[0][0][0])];
  CHECK(zp == doctest::Approx(1.0));

  // consistency with the direct clearing under the extracted plan
  PlanEval ev = evaluate_plan_direct(net, cfgs, {}, amb, sol.plan, Scheme::Sla);
  CHECK(sol.objective_mgbp == doctest::Approx(ev.objective_mgbp).epsilon(1e-6));

  // free tariffs can only improve on pinned-zero tariffs
  PlannerOptions zero;
  zero.fixed_tau_v = std::map<int, double>{};
  SingleLevelModel mz = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, zero);
  PlannerSolution solz = solve_single_level(mz, *backend, quiet());
  REQUIRE(solz.ok());
  CHECK(sol.objective_mgbp >= solz.objective_mgbp - 1e-6);
}

TEST_CASE("uprate choice: the planner picks the right factor ahead of demand growth") {
  NetworkCase net = recon_case(2);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla);
  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());

  // 50% uprate at t=0 (cost 6) clears 150 MW in both periods: better than the 100%
  // uprate (cost 11) whose extra headroom only helps the grown demand in t=1
  const double expected = psi() * (6000.0 + 6000.0 / 1.05) - 6.0;
  CHECK(sol.objective_mgbp == doctest::Approx(expected).epsilon(1e-6));
  REQUIRE(sol.actions.size() == 1);
  CHECK(sol.actions[0].t == 0);
  CHECK(sol.actions[0].action == "reconductor");
  CHECK(sol.actions[0].added_mw == doctest::Approx(50.0));
  CHECK(sol.actions[0].cost_mgbp == doctest::Approx(6.0));
  CHECK(sol.plan.recon.size() == 1);
  CHECK(sol.plan.recon[0].factor == doctest::Approx(0.5));
  CHECK(sol.adequacy_mgbp >= -1e-6);

  PlanEval ev = evaluate_plan_direct(net, cfgs, {}, amb, sol.plan, Scheme::Sla);
  CHECK(sol.objective_mgbp == doctest::Approx(ev.objective_mgbp).epsilon(1e-6));
}

TEST_CASE("prohibitive build cost keeps the base grid") {
  NetworkCase net = corridor_case(1e5, 1);
  auto cfgs = enumerate_configurations(net);
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb_cfg(3, 0.2, 1e-8), {},
                                             Scheme::Sla);
  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());
  CHECK(sol.plan.config_ids[0] == 0);
  CHECK(sol.actions.empty());
  CHECK(sol.objective_mgbp == doctest::Approx(psi() * 4000.0));
}

// ----------------------------------------------------------------------------------------
// Scheme variants inside the planner
// ----------------------------------------------------------------------------------------

TEST_CASE("strengthened and plain relaxations agree in value; structure differs") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 0.1);  // positive radius: margin theta/eps
  PlannerOptions zero;
  zero.fixed_tau_v = std::map<int, double>{};

  SingleLevelModel msla = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, zero);
  SingleLevelModel mla = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::La, zero);

  CHECK(msla.ir.count_rows_with_tag("sl:strengthen") == 2);
  CHECK(mla.ir.count_rows_with_tag("sl:strengthen") == 0);
  CHECK(msla.ir.find_var("t0s0:mu4_0") >= 0);
  CHECK(mla.ir.find_var("t0s0:mu4_0") == -1);
  CHECK(mla.ir.find_var("t0s0:eta4_l0_c0") == -1);
  CHECK(msla.pairs.size() == mla.pairs.size() + 2);

  auto backend = make_highs_backend();
  PlannerSolution ssla = solve_single_level(msla, *backend, quiet());
  PlannerSolution sla = solve_single_level(mla, *backend, quiet());
  REQUIRE(ssla.ok());
  REQUIRE(sla.ok());
  // adequacy pins both to the base grid; the robust margin theta/eps = 0.5 MW shows up
  const double expected = psi() * 40.0 * (100.0 - 0.5);
  CHECK(ssla.objective_mgbp == doctest::Approx(expected).epsilon(1e-6));
  CHECK(sla.objective_mgbp == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("norm-weighted variant with unit weights matches the strengthened relaxation") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 0.1);
  PlannerOptions zero;
  zero.fixed_tau_v = std::map<int, double>{};

  SchemeParams unit;
  unit.w.assign(2, 1.0);
  SingleLevelModel mw =
      assemble_single_level(net, cfgs, {}, amb, unit, Scheme::Wcvar, zero);
  CHECK(mw.ir.count_rows_with_tag("sl:dualnorm") == 2);
  auto backend = make_highs_backend();
  PlannerSolution sw = solve_single_level(mw, *backend, quiet());
  REQUIRE(sw.ok());
  CHECK(sw.objective_mgbp == doctest::Approx(psi() * 40.0 * 99.5).epsilon(1e-6));

  // default weights also assemble and solve
  SingleLevelModel md = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Wcvar, zero);
  PlannerSolution sd = solve_single_level(md, *backend, quiet());
  CHECK(sd.ok());
}

TEST_CASE("wind in the loop: all embeddable schemes produce a consistent plan") {
  NetworkCase net = corridor_case(2.0, 1);
  Participant w = make_participant(2, ParticipantKind::WindFarm, 0, 60, 0, 60);
  w.forecast_mw = {{40.0}};
  net.participants.push_back(w);
  auto cfgs = enumerate_configurations(net);
  ErrorSampleSet train = synthetic_errors(net, 8, 5.0, 11);
  const AmbiguityConfig amb = amb_cfg(8, 0.25, 0.5);

  auto backend = make_highs_backend();
  for (Scheme sch : {Scheme::Sla, Scheme::La, Scheme::Wcvar}) {
    CAPTURE(scheme_name(sch));
    SingleLevelModel m = assemble_single_level(net, cfgs, train, amb, {}, sch);
    PlannerSolution sol = solve_single_level(m, *backend, quiet());
    REQUIRE(sol.ok());
    CHECK(std::isfinite(sol.objective_mgbp));
    CHECK(sol.adequacy_mgbp >= -1e-6);
    BigMReport rep = verify_big_m(m, sol.x);
    CHECK_FALSE(rep.m_suspect());
    PlanEval ev = evaluate_plan_direct(net, cfgs, train, amb, sol.plan, sch);
    CHECK(sol.objective_mgbp ==
          doctest::Approx(ev.objective_mgbp).epsilon(1e-5).scale(1.0));
  }
}

// ----------------------------------------------------------------------------------------
// Big-M audit and bilinear handling
// ----------------------------------------------------------------------------------------

TEST_CASE("big-M audit flags active near-cap bounds only") {
  SingleLevelModel m;
  std::vector<double> x;  // entries below use constants only
  m.m_entries.push_back({"active-near-cap", LinExpr(4.995), LinExpr(1.0), 5.0});
  m.m_entries.push_back({"inactive-over-cap", LinExpr(50.0), LinExpr(0.0), 5.0});
  m.m_entries.push_back({"active-comfortable", LinExpr(1.0), LinExpr(1.0), 5.0});

  BigMReport rep = verify_big_m(m, x);
  REQUIRE(rep.flagged.size() == 1);
  CHECK(rep.flagged[0].label == "active-near-cap");
  CHECK(rep.worst_ratio == doctest::Approx(0.999));
  CHECK(rep.m_suspect());
  CHECK_FALSE(verify_big_m(m, x, 0.9995).m_suspect());
}

TEST_CASE("scaled-up caps leave the optimum unchanged") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);
  auto backend = make_highs_backend();

  SingleLevelModel m1 = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla);
  PlannerOptions wide;
  wide.big_m_scale = 10.0;
  SingleLevelModel m10 = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, wide);
  PlannerSolution s1 = solve_single_level(m1, *backend, quiet());
  PlannerSolution s10 = solve_single_level(m10, *backend, quiet());
  REQUIRE(s1.ok());
  REQUIRE(s10.ok());
  CHECK(std::fabs(s1.objective_mgbp - s10.objective_mgbp) <=
        1e-4 * std::max(1.0, std::fabs(s1.objective_mgbp)));
}

TEST_CASE("deferred and passthrough product handling") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  const AmbiguityConfig amb = amb_cfg(3, 0.2, 1e-8);
  auto backend = make_highs_backend();

  PlannerOptions defer;
  defer.defer_bilinear = true;
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, defer);
  CHECK(m.products_pending);
  CHECK_THROWS_AS(solve_single_level(m, *backend, quiet()), std::logic_error);
  linearize_bilinear_terms(m, BilinearMode::BinaryExpansion);
  CHECK_FALSE(m.products_pending);
  CHECK_THROWS_AS(linearize_bilinear_terms(m, BilinearMode::BinaryExpansion),
                  std::logic_error);
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());
  CHECK(sol.objective_mgbp == doctest::Approx(psi() * 6000.0 - 2.0));

  PlannerOptions pass;
  pass.bilinear_mode = BilinearMode::Passthrough;
  SingleLevelModel mp = assemble_single_level(net, cfgs, {}, amb, {}, Scheme::Sla, pass);
  CHECK(mp.ir.has_bilinear());
  CHECK(mp.ir.find_var("ul:zeta_vcp_t0_l0") == -1);
  CHECK_THROWS_WITH_AS(solve_single_level(mp, *backend, quiet()),
                       doctest::Contains("passthrough"), std::invalid_argument);

  CHECK(bilinear_mode_from_name("binary-expansion") == BilinearMode::BinaryExpansion);
  CHECK(bilinear_mode_from_name("passthrough") == BilinearMode::Passthrough);
  CHECK_THROWS_AS(bilinear_mode_from_name("quadratic"), std::invalid_argument);
  CHECK(bilinear_mode_name(BilinearMode::BinaryExpansion) == "binary-expansion");
}

// ----------------------------------------------------------------------------------------
// Reports
// ----------------------------------------------------------------------------------------

TEST_CASE("csv reports") {
  NetworkCase net = corridor_case(2.0, 1);
  auto cfgs = enumerate_configurations(net);
  SingleLevelModel m = assemble_single_level(net, cfgs, {}, amb_cfg(3, 0.2, 1e-8), {},
                                             Scheme::Sla);
  auto backend = make_highs_backend();
  PlannerSolution sol = solve_single_level(m, *backend, quiet());
  REQUIRE(sol.ok());

  const std::string inv = investment_csv(m, sol);
  CHECK(inv == "t,corridor,action,added_mw,cost_mgbp\n0,0,parallel,80,2\n");
  const std::string tar = tariff_csv(m, sol);
  CHECK(tar.rfind("line,tau_v,tau_c\n0,", 0) == 0);
}
