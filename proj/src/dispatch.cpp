#include "drtep/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace drtep {

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Sla: return "sla";
    case Scheme::La: return "la";
    case Scheme::Sfla: return "sfla";
    case Scheme::Wcvar: return "wcvar";
    case Scheme::Exact: return "exact";
  }
  return "?";
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "sla") return Scheme::Sla;
  if (name == "la") return Scheme::La;
  if (name == "sfla") return Scheme::Sfla;
  if (name == "wcvar") return Scheme::Wcvar;
  if (name == "exact" || name == "exact-dispatch") return Scheme::Exact;
  throw std::invalid_argument("unknown scheme '" + name +
                              "' (expected sla, la, sfla, wcvar or exact-dispatch)");
}

bool scheme_supports_kkt(Scheme s) {
  return s == Scheme::Sla || s == Scheme::La || s == Scheme::Wcvar;
}

namespace {

std::string block_prefix(int t, int s) {
  return "t" + std::to_string(t) + "s" + std::to_string(s) + ":";
}

double kind_sign(ParticipantKind k) { return k == ParticipantKind::Consumer ? -1.0 : 1.0; }

double eval_expr(const LinExpr& e, const std::vector<double>& x) {
  double v = e.constant;
  for (const auto& t : e.terms) v += t.coef * x[size_t(t.var)];
  return v;
}

// Slack of an inequality row as an expression that is nonnegative at feasible points.
LinExpr row_slack_expr(const ModelIR& ir, RowId r) {
  const LinearRow& row = ir.row(r);
  LinExpr e;
  if (row.sense == RowSense::GE) {
    for (const auto& t : row.terms) e.add(t.var, t.coef);
    e.constant = -row.rhs;
  } else if (row.sense == RowSense::LE) {
    for (const auto& t : row.terms) e.add(t.var, -t.coef);
    e.constant = row.rhs;
  } else {
    throw std::logic_error("equality row has no one-sided slack");
  }
  return e;
}

}  // namespace

// ----------------------------------------------------------------------------------
// Problem construction
// ----------------------------------------------------------------------------------

JccInstance make_jcc_instance(const std::vector<std::vector<double>>& line_weight,
                              const std::vector<double>& capacity_mw,
                              const std::vector<std::vector<double>>& xi_samples,
                              const AmbiguityConfig& amb) {
  const size_t L = capacity_mw.size();
  if (line_weight.size() != L) throw std::invalid_argument("line weight/capacity mismatch");
  std::vector<std::vector<double>> a, b;
  std::vector<double> d;
  for (size_t l = 0; l < L; ++l) {
    std::vector<double> unit(L, 0.0);
    // upper transfer limit: flow <= capacity, i.e. capacity - xi_l - weights·q >= 0
    a.push_back(line_weight[l]);
    unit[l] = -1.0;
    b.push_back(unit);
    d.push_back(capacity_mw[l]);
    // lower transfer limit: flow >= -capacity, i.e. capacity + xi_l + weights·q >= 0
    std::vector<double> neg(line_weight[l]);
    for (double& v : neg) v = -v;
    a.push_back(std::move(neg));
    unit[l] = 1.0;
    b.push_back(unit);
    d.push_back(capacity_mw[l]);
  }
  JccInstance inst;
  inst.set = make_safety_set(std::move(a), std::move(b), std::move(d));
  inst.samples = xi_samples;
  inst.eps = amb.eps;
  inst.theta = amb.theta;
  inst.validate();
  return inst;
}

DispatchProblem make_dispatch_problem(const NetworkCase& net, const InvestmentPlan& plan,
                                      const std::vector<Configuration>& configs,
                                      const ErrorSampleSet& train, const AmbiguityConfig& amb,
                                      SchemeParams params, Scheme scheme) {
  amb.validate();
  const int T = net.horizon.periods, S = net.horizon.operating_conditions;
  const int L = int(net.lines.size()), B = int(net.buses.size());
  if (int(plan.config_ids.size()) != T)
    throw std::invalid_argument("plan must select one configuration per period");

  const bool has_wind = !net.participants_of(ParticipantKind::WindFarm).empty();
  if (has_wind && train.count() == 0)
    throw std::invalid_argument("case has wind farms but the training sample set is empty");
  if (train.count() > 0 && train.count() != amb.n)
    throw std::invalid_argument("training sample count disagrees with the ambiguity setting");
  if (train.count() > 0 && (train.periods != T || train.conditions != S))
    throw std::invalid_argument("training sample set does not match the planning horizon");

  DispatchProblem prob;
  prob.scheme = scheme;
  prob.amb = amb;
  prob.net = net;
  prob.n_periods = T;
  prob.n_conditions = S;
  prob.n_lines = L;
  prob.n_buses = B;

  if (params.kappa.empty()) params.kappa = uniform_kappa(amb.n);
  if (params.w.empty()) params.w = uniform_weights(2 * L == 0 ? 1 : 2 * L);
  params.validate(amb.n, 2 * L == 0 ? int(params.w.size()) : 2 * L);
  prob.params = params;

  // aggregated per-line error samples, one set per configuration actually used
  std::map<int, AggregatedErrors> agg_cache;
  for (int t = 0; t < T; ++t) {
    int cid = plan.config_ids[size_t(t)];
    if (cid < 0 || cid >= int(configs.size()))
      throw std::invalid_argument("plan references configuration " + std::to_string(cid) +
                                  " which does not exist");
    const Configuration& cfg = configs[size_t(cid)];
    if (!cfg.valid)
      throw std::invalid_argument(
          "no valid configuration selected for period " + std::to_string(t) +
          ": configuration " + std::to_string(cid) + " disconnects a participant bus");
    if (has_wind && L > 0 && !agg_cache.count(cid))
      agg_cache.emplace(cid, aggregate_line_errors(train, net, cfg));
  }

  for (int t = 0; t < T; ++t) {
    const Configuration& cfg = configs[size_t(plan.config_ids[size_t(t)])];

    // volumetric tariff surcharge active in period t (uniform allocation weight)
    double delta_t = 0.0;
    const auto expandable = net.expandable_lines();
    for (int l : net.reconductorable_lines()) {
      const auto* rc = plan.recon_for(l);
      if (rc && rc->from_period <= t) {
        auto it = plan.tau_v.find(l);
        if (it != plan.tau_v.end()) delta_t += net.tariff.delta_default * it->second;
      }
    }
    for (size_t e = 0; e < expandable.size(); ++e) {
      if (cfg.circuits[e] >= 1) {
        auto it = plan.tau_v.find(expandable[e]);
        if (it != plan.tau_v.end()) delta_t += net.tariff.delta_default * it->second;
      }
    }

    for (int s = 0; s < S; ++s) {
      DispatchBlock blk;
      blk.t = t;
      blk.s = s;
      blk.config_id = cfg.id;
      blk.ptdf = cfg.ptdf;

      for (int l = 0; l < L; ++l)
        blk.capacity_mw.push_back(line_capacity_mw(net, configs, plan, t, l));

      for (size_t j = 0; j < net.participants.size(); ++j) {
        const Participant& p = net.participants[j];
        BlockParticipant bp;
        bp.participant_index = int(j);
        bp.kind = p.kind;
        bp.bus = p.bus;
        bp.bid = p.bid_gbp_per_mwh;
        switch (p.kind) {
          case ParticipantKind::Generator:
            bp.q_max = p.qty_max_mw;
            bp.bid_hat = p.bid_gbp_per_mwh + delta_t;
            break;
          case ParticipantKind::Consumer:
            bp.q_max = net.consumer_max_mw(p, t);
            bp.bid_hat = p.bid_gbp_per_mwh - delta_t;
            break;
          case ParticipantKind::WindFarm:
            bp.q_max = p.forecast_mw[size_t(t)][size_t(s)];
            bp.bid_hat = p.bid_gbp_per_mwh + delta_t;
            bp.curtail_cost = p.curtailment_cost_gbp_per_mwh;
            break;
        }
        blk.participants.push_back(bp);
      }

      blk.line_weight.assign(size_t(L), std::vector<double>(blk.participants.size(), 0.0));
      for (int l = 0; l < L; ++l)
        for (size_t j = 0; j < blk.participants.size(); ++j)
          blk.line_weight[size_t(l)][j] =
              kind_sign(blk.participants[j].kind) * cfg.s(blk.participants[j].bus, l, L);

      if (L > 0) {
        std::vector<std::vector<double>> xi(size_t(amb.n), std::vector<double>(size_t(L), 0.0));
        if (has_wind) {
          const AggregatedErrors& agg = agg_cache.at(cfg.id);
          for (int i = 0; i < amb.n; ++i)
            for (int l = 0; l < L; ++l) xi[size_t(i)][size_t(l)] = agg.at(t, s, l, i);
        }
        blk.jcc = make_jcc_instance(blk.line_weight, blk.capacity_mw, xi, amb);
      }
      prob.blocks.push_back(std::move(blk));
    }
  }
  return prob;
}

// ----------------------------------------------------------------------------------
// Market-clearing model
// ----------------------------------------------------------------------------------

LowerLevelLp build_lower_lp(const DispatchProblem& prob) {
  LowerLevelLp out;
  ModelIR& ir = out.ir;
  LinExpr obj;  // negated welfare, minimized

  for (const DispatchBlock& blk : prob.blocks) {
    const std::string pre = block_prefix(blk.t, blk.s);
    BlockLpIds ids;
    ids.cur.assign(blk.participants.size(), -1);
    ids.wind_identity.assign(blk.participants.size(), -1);

    LinExpr balance;
    for (size_t j = 0; j < blk.participants.size(); ++j) {
      const BlockParticipant& bp = blk.participants[j];
      const std::string qn = pre + "q" + std::to_string(j);
      switch (bp.kind) {
        case ParticipantKind::Generator: {
          VarId q = ir.add_var(qn, VarKind::Continuous, 0.0, bp.q_max);
          ids.q.push_back(q);
          obj.add(q, bp.bid_hat);
          balance.add(q, -1.0);
          break;
        }
        case ParticipantKind::Consumer: {
          VarId q = ir.add_var(qn, VarKind::Continuous, 0.0, bp.q_max);
          ids.q.push_back(q);
          obj.add(q, -bp.bid_hat);
          balance.add(q, 1.0);
          break;
        }
        case ParticipantKind::WindFarm: {
          VarId q = ir.add_var(qn, VarKind::Continuous, -kInf, kInf);
          VarId cur = ir.add_var(pre + "cur" + std::to_string(j), VarKind::Continuous, 0.0,
                                 bp.q_max);
          ids.q.push_back(q);
          ids.cur[j] = cur;
          obj.add(q, bp.bid_hat);
          obj.add(cur, bp.curtail_cost);
          balance.add(q, -1.0);
          LinExpr identity;
          identity.add(q, 1.0).add(cur, 1.0);
          ids.wind_identity[j] = ir.add_row(pre + "wind" + std::to_string(j), identity,
                                            RowSense::EQ, bp.q_max, "ll:wind");
          break;
        }
      }
    }
    ids.balance = ir.add_row(pre + "balance", balance, RowSense::EQ, 0.0, "ll:balance");

    if (blk.has_flow_block()) {
      std::span<const VarId> x(ids.q);
      const std::string cc = pre + "cc:";
      switch (prob.scheme) {
        case Scheme::Sla:
          ids.cc = emit_sla(ir, blk.jcc, x, prob.params.kappa, cc);
          break;
        case Scheme::La:
          ids.cc = emit_la(ir, blk.jcc, x, prob.params.kappa, cc);
          break;
        case Scheme::Sfla:
          ids.cc = emit_sfla(ir, blk.jcc, x, prob.params.kappa, cc);
          break;
        case Scheme::Wcvar:
          ids.cc = emit_wcvar(ir, blk.jcc, x, prob.params.w, cc);
          break;
        case Scheme::Exact:
          ids.cc = emit_exact_strengthened(ir, blk.jcc, x, prob.params.big_m, cc);
          break;
      }
    }
    out.blocks.push_back(std::move(ids));
  }
  ir.set_objective(ObjSense::Min, obj);
  return out;
}

double block_welfare(const DispatchProblem& prob, const LowerLevelLp& lp, int block_index,
                     const std::vector<double>& x) {
  const DispatchBlock& blk = prob.blocks[size_t(block_index)];
  const BlockLpIds& ids = lp.blocks[size_t(block_index)];
  double w = 0;
  for (size_t j = 0; j < blk.participants.size(); ++j) {
    const BlockParticipant& bp = blk.participants[j];
    double q = x[size_t(ids.q[j])];
    if (bp.kind == ParticipantKind::Consumer)
      w += bp.bid_hat * q;
    else
      w -= bp.bid_hat * q;
    if (ids.cur[j] >= 0) w -= bp.curtail_cost * x[size_t(ids.cur[j])];
  }
  return w;
}

// ----------------------------------------------------------------------------------
// Big-M registry
// ----------------------------------------------------------------------------------

double BigMRegistry::primal_for(const std::string& family) const {
  auto it = primal.find(family);
  if (it == primal.end())
    throw std::invalid_argument("no primal cap registered for family '" + family + "'");
  return it->second;
}

double BigMRegistry::dual_for(const std::string& family) const {
  auto it = dual.find(family);
  if (it == dual.end())
    throw std::invalid_argument("no dual cap registered for family '" + family + "'");
  return it->second;
}

void BigMRegistry::scale(double factor) {
  for (auto& [k, v] : primal) v *= factor;
  for (auto& [k, v] : dual) v *= factor;
}

BigMRegistry default_big_m_registry(const DispatchProblem& prob) {
  double q_max = 1.0, q_total = 0.0, cap_max = 0.0, xi_max = 0.0;
  for (const DispatchBlock& blk : prob.blocks) {
    double tot = 0;
    for (const BlockParticipant& bp : blk.participants) {
      q_max = std::max(q_max, bp.q_max);
      tot += bp.q_max;
    }
    q_total = std::max(q_total, tot);
    for (double c : blk.capacity_mw) cap_max = std::max(cap_max, c);
    for (const auto& xi : blk.jcc.samples)
      for (double v : xi) xi_max = std::max(xi_max, std::fabs(v));
  }
  const double scale = q_total + cap_max + xi_max + prob.amb.theta / prob.amb.eps;

  BigMRegistry reg;
  reg.primal["quantity"] = 2.0 * q_max;
  reg.primal["curtail"] = 2.0 * q_max;
  reg.primal["scheme_scalar"] = 2.0 * scale;
  reg.primal["sample"] = 4.0 * scale;
  reg.primal["threshold"] = 4.0 * scale;
  reg.primal["budget"] =
      2.0 * scale * std::max(1.0, prob.amb.eps * prob.amb.n) + prob.amb.theta * prob.amb.n;
  for (const auto& [k, v] : reg.primal) reg.dual[k] = 1e4;
  return reg;
}

// ----------------------------------------------------------------------------------
// Optimality system
// ----------------------------------------------------------------------------------

namespace {

// Flow-dual price adjustment at one bus as an expression over the aggregate dual
// variables (see recover_lmp for the value-level analogue).
LinExpr lambda_expr(const DispatchProblem& prob, const DispatchBlock& blk,
                    const BlockKktIds& k, int bus) {
  LinExpr e;
  const int L = prob.n_lines;
  for (int l = 0; l < L; ++l) {
    double sf = blk.ptdf[size_t(bus) * L + l];
    if (sf == 0.0) continue;
    if (prob.scheme == Scheme::Wcvar) {
      e.add(k.agg2[size_t(l)], sf * prob.params.w[size_t(2 * l)]);
      e.add(k.agg3[size_t(l)], -sf * prob.params.w[size_t(2 * l + 1)]);
    } else {
      e.add(k.agg2[size_t(l)], sf);
      e.add(k.agg3[size_t(l)], -sf);
      if (prob.scheme == Scheme::Sla) {
        e.add(k.mu4[size_t(l)], sf);
        e.add(k.mu5[size_t(l)], -sf);
      }
    }
  }
  return e;
}

LinExpr lower_bound_slack(VarId v) { return term(v, 1.0); }

LinExpr upper_bound_slack(VarId v, double ub) {
  LinExpr e;
  e.constant = ub;
  e.add(v, -1.0);
  return e;
}

}  // namespace

KktSystem emit_kkt(LowerLevelLp& lp, const DispatchProblem& prob) {
  if (!scheme_supports_kkt(prob.scheme))
    throw std::invalid_argument(
        "scheme '" + scheme_name(prob.scheme) +
        "' has no fixed optimality system (the lower level is not a plain linear "
        "program); use sla, la or wcvar");

  ModelIR& ir = lp.ir;
  KktSystem sys;
  const int L = prob.n_lines, N = prob.amb.n;
  const double epsN = prob.amb.eps * N;

  for (size_t bi = 0; bi < prob.blocks.size(); ++bi) {
    const DispatchBlock& blk = prob.blocks[bi];
    const BlockLpIds& ids = lp.blocks[bi];
    const std::string pre = block_prefix(blk.t, blk.s);
    BlockKktIds k;
    const size_t np = blk.participants.size();
    k.phi_lo.assign(np, -1);
    k.phi_hi.assign(np, -1);
    k.phi_sch.assign(np, -1);
    k.phi_cur_lo.assign(np, -1);
    k.phi_cur_hi.assign(np, -1);

    k.pi = ir.add_var(pre + "pi", VarKind::Continuous, -kInf, kInf);
    for (size_t j = 0; j < np; ++j) {
      const std::string js = std::to_string(j);
      if (blk.participants[j].kind == ParticipantKind::WindFarm) {
        k.phi_sch[j] = ir.add_var(pre + "sch" + js, VarKind::Continuous, -kInf, kInf);
        k.phi_cur_lo[j] = ir.add_var(pre + "curlo" + js, VarKind::Continuous, 0, kInf);
        k.phi_cur_hi[j] = ir.add_var(pre + "curhi" + js, VarKind::Continuous, 0, kInf);
      } else {
        k.phi_lo[j] = ir.add_var(pre + "lo" + js, VarKind::Continuous, 0, kInf);
        k.phi_hi[j] = ir.add_var(pre + "hi" + js, VarKind::Continuous, 0, kInf);
      }
    }

    const bool flow = blk.has_flow_block();
    if (flow) {
      k.mu1 = ir.add_var(pre + "mu1", VarKind::Continuous, 0, kInf);
      for (int l = 0; l < L; ++l) {
        const std::string ls = std::to_string(l);
        for (int i = 0; i < N; ++i) {
          const std::string key = ls + "_" + std::to_string(i);
          k.mu2.push_back(ir.add_var(pre + "mu2_" + key, VarKind::Continuous, 0, kInf));
          k.mu3.push_back(ir.add_var(pre + "mu3_" + key, VarKind::Continuous, 0, kInf));
        }
        k.mu4.push_back(ir.add_var(pre + "mu4_" + ls, VarKind::Continuous, 0, kInf));
        k.mu5.push_back(ir.add_var(pre + "mu5_" + ls, VarKind::Continuous, 0, kInf));
        k.agg2.push_back(ir.add_var(pre + "agg2_" + ls, VarKind::Continuous, 0, kInf));
        k.agg3.push_back(ir.add_var(pre + "agg3_" + ls, VarKind::Continuous, 0, kInf));
      }
      if (prob.scheme == Scheme::Wcvar) {
        for (int i = 0; i < N; ++i)
          k.mu_alpha.push_back(
              ir.add_var(pre + "mua" + std::to_string(i), VarKind::Continuous, 0, kInf));
      } else {
        k.mu_u = ir.add_var(pre + "mu_u", VarKind::Continuous, 0, kInf);
        for (int i = 0; i < N; ++i)
          k.mu_v.push_back(
              ir.add_var(pre + "muv" + std::to_string(i), VarKind::Continuous, 0, kInf));
      }

      // aggregate sample duals per line: kappa-weighted for the linear schemes,
      // plain sums for the CVaR scheme (its weights enter the price adjustment).
      for (int l = 0; l < L; ++l) {
        LinExpr d2 = term(k.agg2[size_t(l)], 1.0);
        LinExpr d3 = term(k.agg3[size_t(l)], 1.0);
        for (int i = 0; i < N; ++i) {
          double wgt = prob.scheme == Scheme::Wcvar ? 1.0 : prob.params.kappa[size_t(i)];
          d2.add(k.mu2[size_t(l) * N + i], -wgt);
          d3.add(k.mu3[size_t(l) * N + i], -wgt);
        }
        const std::string ls = std::to_string(l);
        ir.add_row(pre + "def_agg2_" + ls, d2, RowSense::EQ, 0.0, "kkt:aggregate");
        ir.add_row(pre + "def_agg3_" + ls, d3, RowSense::EQ, 0.0, "kkt:aggregate");
      }
    }

    // stationarity w.r.t. quantities, curtailment and the scheme's own variables
    for (size_t j = 0; j < np; ++j) {
      const BlockParticipant& bp = blk.participants[j];
      const std::string js = std::to_string(j);
      LinExpr lam = flow ? lambda_expr(prob, blk, k, bp.bus) : LinExpr();
      switch (bp.kind) {
        case ParticipantKind::Generator: {
          LinExpr st = term(k.pi, -1.0);
          st.add(k.phi_hi[j], 1.0).add(k.phi_lo[j], -1.0);
          st += lam;
          k.stationarity.push_back(
              ir.add_row(pre + "st_q" + js, st, RowSense::EQ, -bp.bid_hat, "kkt:stationarity"));
          break;
        }
        case ParticipantKind::Consumer: {
          LinExpr st = term(k.pi, 1.0);
          st.add(k.phi_hi[j], 1.0).add(k.phi_lo[j], -1.0);
          st -= lam;
          k.stationarity.push_back(
              ir.add_row(pre + "st_q" + js, st, RowSense::EQ, bp.bid_hat, "kkt:stationarity"));
          break;
        }
        case ParticipantKind::WindFarm: {
          LinExpr st = term(k.pi, -1.0);
          st.add(k.phi_sch[j], 1.0);
          st += lam;
          k.stationarity.push_back(
              ir.add_row(pre + "st_q" + js, st, RowSense::EQ, -bp.bid_hat, "kkt:stationarity"));
          LinExpr sc = term(k.phi_sch[j], 1.0);
          sc.add(k.phi_cur_hi[j], 1.0).add(k.phi_cur_lo[j], -1.0);
          k.stationarity.push_back(ir.add_row(pre + "st_cur" + js, sc, RowSense::EQ,
                                              -bp.curtail_cost, "kkt:stationarity"));
          break;
        }
      }
    }

    if (flow) {
      if (prob.scheme == Scheme::Wcvar) {
        for (int i = 0; i < N; ++i) {
          LinExpr st = term(k.mu_alpha[size_t(i)], -1.0);
          st.add(k.mu1, 1.0 / epsN);
          for (int l = 0; l < L; ++l) {
            st.add(k.mu2[size_t(l) * N + i], -1.0);
            st.add(k.mu3[size_t(l) * N + i], -1.0);
          }
          k.stationarity.push_back(ir.add_row(pre + "st_a" + std::to_string(i), st, RowSense::EQ,
                                              0.0, "kkt:stationarity"));
        }
        LinExpr sb = term(k.mu1, prob.amb.theta / prob.amb.eps);
        for (int l = 0; l < L; ++l) sb.add(k.mu4[size_t(l)], -1.0).add(k.mu5[size_t(l)], -1.0);
        k.stationarity.push_back(
            ir.add_row(pre + "st_beta", sb, RowSense::EQ, 0.0, "kkt:stationarity"));
        LinExpr stt = term(k.mu1, 1.0);
        for (int l = 0; l < L; ++l) stt.add(k.agg2[size_t(l)], -1.0).add(k.agg3[size_t(l)], -1.0);
        k.stationarity.push_back(
            ir.add_row(pre + "st_tau", stt, RowSense::EQ, 0.0, "kkt:stationarity"));
      } else {
        LinExpr su = term(k.mu_u, -1.0);
        su.add(k.mu1, -epsN);
        for (int l = 0; l < L; ++l)
          for (int i = 0; i < N; ++i) {
            su.add(k.mu2[size_t(l) * N + i], 1.0);
            su.add(k.mu3[size_t(l) * N + i], 1.0);
          }
        if (prob.scheme == Scheme::Sla)
          for (int l = 0; l < L; ++l) su.add(k.mu4[size_t(l)], 1.0).add(k.mu5[size_t(l)], 1.0);
        k.stationarity.push_back(
            ir.add_row(pre + "st_u", su, RowSense::EQ, 0.0, "kkt:stationarity"));
        for (int i = 0; i < N; ++i) {
          LinExpr sv = term(k.mu_v[size_t(i)], -1.0);
          sv.add(k.mu1, 1.0);
          for (int l = 0; l < L; ++l) {
            sv.add(k.mu2[size_t(l) * N + i], -1.0);
            sv.add(k.mu3[size_t(l) * N + i], -1.0);
          }
          k.stationarity.push_back(ir.add_row(pre + "st_v" + std::to_string(i), sv, RowSense::EQ,
                                              0.0, "kkt:stationarity"));
        }
      }
    }

    // complementarity pairs
    for (size_t j = 0; j < np; ++j) {
      const BlockParticipant& bp = blk.participants[j];
      if (bp.kind == ParticipantKind::WindFarm) {
        sys.pairs.push_back({lower_bound_slack(ids.cur[j]), k.phi_cur_lo[j], "curtail"});
        sys.pairs.push_back({upper_bound_slack(ids.cur[j], bp.q_max), k.phi_cur_hi[j],
                             "curtail"});
      } else {
        sys.pairs.push_back({lower_bound_slack(ids.q[j]), k.phi_lo[j], "quantity"});
        sys.pairs.push_back({upper_bound_slack(ids.q[j], bp.q_max), k.phi_hi[j], "quantity"});
      }
    }
    if (flow) {
      const ConstraintBlock& cc = ids.cc;
      const int P = 2 * L;
      if (prob.scheme == Scheme::Wcvar) {
        for (int i = 0; i < N; ++i)
          sys.pairs.push_back(
              {lower_bound_slack(cc.alpha[size_t(i)]), k.mu_alpha[size_t(i)], "scheme_scalar"});
        sys.pairs.push_back({row_slack_expr(ir, cc.rows[0]), k.mu1, "budget"});
        for (int i = 0; i < N; ++i)
          for (int p = 0; p < P; ++p) {
            VarId mu = (p % 2 == 0) ? k.mu2[size_t(p / 2) * N + i] : k.mu3[size_t(p / 2) * N + i];
            sys.pairs.push_back(
                {row_slack_expr(ir, cc.rows[size_t(1 + i * P + p)]), mu, "sample"});
          }
        for (int p = 0; p < P; ++p) {
          VarId mu = (p % 2 == 0) ? k.mu4[size_t(p / 2)] : k.mu5[size_t(p / 2)];
          sys.pairs.push_back(
              {row_slack_expr(ir, cc.rows[size_t(1 + N * P + p)]), mu, "threshold"});
        }
      } else {
        sys.pairs.push_back({lower_bound_slack(cc.s), k.mu_u, "scheme_scalar"});
        for (int i = 0; i < N; ++i)
          sys.pairs.push_back(
              {lower_bound_slack(cc.r[size_t(i)]), k.mu_v[size_t(i)], "scheme_scalar"});
        sys.pairs.push_back({row_slack_expr(ir, cc.rows[0]), k.mu1, "budget"});
        for (int i = 0; i < N; ++i)
          for (int p = 0; p < P; ++p) {
            VarId mu = (p % 2 == 0) ? k.mu2[size_t(p / 2) * N + i] : k.mu3[size_t(p / 2) * N + i];
            sys.pairs.push_back(
                {row_slack_expr(ir, cc.rows[size_t(1 + i * P + p)]), mu, "sample"});
          }
        if (prob.scheme == Scheme::Sla)
          for (int p = 0; p < P; ++p) {
            VarId mu = (p % 2 == 0) ? k.mu4[size_t(p / 2)] : k.mu5[size_t(p / 2)];
            sys.pairs.push_back(
                {row_slack_expr(ir, cc.rows[size_t(1 + N * P + p)]), mu, "threshold"});
          }
      }
    }
    sys.blocks.push_back(std::move(k));
  }
  return sys;
}

std::vector<VarId> linearize_complementarity(ModelIR& ir, std::span<const KktPair> pairs,
                                             const BigMRegistry& big_m,
                                             const std::string& prefix) {
  std::vector<VarId> ys;
  for (size_t n = 0; n < pairs.size(); ++n) {
    const KktPair& pr = pairs[n];
    const double mp = big_m.primal_for(pr.family);
    const double md = big_m.dual_for(pr.family);
    VarId y = ir.add_var(prefix + "y" + std::to_string(n), VarKind::Binary, 0, 1);
    LinExpr cp = pr.slack;
    cp.add(y, -mp);
    ir.add_row(prefix + "cp" + std::to_string(n), cp, RowSense::LE, 0.0, "kkt:comp_primal");
    LinExpr cd = term(pr.dual, 1.0);
    cd.add(y, md);
    ir.add_row(prefix + "cd" + std::to_string(n), cd, RowSense::LE, md, "kkt:comp_dual");
    ys.push_back(y);
  }
  return ys;
}

void linearize_complementarity(ModelIR& ir, KktSystem& sys, const BigMRegistry& big_m) {
  auto ys = linearize_complementarity(ir, sys.pairs, big_m, "kc:");
  sys.binaries.insert(sys.binaries.end(), ys.begin(), ys.end());
}

// ----------------------------------------------------------------------------------
// Solution extraction
// ----------------------------------------------------------------------------------

std::vector<double> recover_lmp(const DispatchProblem& prob, int block_index, double pi,
                                std::span<const double> mu2, std::span<const double> mu3,
                                std::span<const double> mu4, std::span<const double> mu5) {
  const DispatchBlock& blk = prob.blocks[size_t(block_index)];
  const int L = prob.n_lines, N = prob.amb.n;
  std::vector<double> adj(size_t(L), 0.0);
  if (!mu2.empty()) {
    for (int l = 0; l < L; ++l) {
      double a = 0;
      for (int i = 0; i < N; ++i) {
        double w2, w3;
        switch (prob.scheme) {
          case Scheme::Wcvar:
            w2 = prob.params.w[size_t(2 * l)];
            w3 = prob.params.w[size_t(2 * l + 1)];
            break;
          case Scheme::Exact:
            w2 = w3 = 1.0;
            break;
          default:
            w2 = w3 = prob.params.kappa[size_t(i)];
        }
        a += w2 * mu2[size_t(l) * N + i] - w3 * mu3[size_t(l) * N + i];
      }
      if (prob.scheme != Scheme::Wcvar && prob.scheme != Scheme::La && !mu4.empty())
        a += mu4[size_t(l)] - mu5[size_t(l)];
      adj[size_t(l)] = a;
    }
  }
  std::vector<double> lmp(size_t(prob.n_buses), pi);
  for (int b = 0; b < prob.n_buses; ++b) {
    double d = 0;
    for (int l = 0; l < L; ++l) d += blk.ptdf[size_t(b) * L + l] * adj[size_t(l)];
    lmp[size_t(b)] = pi - d;
  }
  return lmp;
}

namespace {

// Sample- and threshold-row duals mapped back to per-(line,sample) arrays. The row
// layout inside ConstraintBlock.rows is fixed by the emitters; see the jcc module.
void extract_flow_duals(const DispatchProblem& prob, const DispatchBlock& blk,
                        const ConstraintBlock& cc, const std::vector<double>& row_dual,
                        BlockSolution& out) {
  const int L = prob.n_lines, N = prob.amb.n, P = 2 * L;
  out.mu2.assign(size_t(L) * N, 0.0);
  out.mu3.assign(size_t(L) * N, 0.0);
  out.mu4.assign(size_t(L), 0.0);
  out.mu5.assign(size_t(L), 0.0);

  auto dual_of = [&](size_t row_pos) { return row_dual[size_t(cc.rows[row_pos])]; };

  switch (prob.scheme) {
    case Scheme::Sla:
    case Scheme::La:
    case Scheme::Wcvar: {
      for (int i = 0; i < N; ++i)
        for (int p = 0; p < P; ++p) {
          double d = dual_of(size_t(1 + i * P + p));
          (p % 2 == 0 ? out.mu2 : out.mu3)[size_t(p / 2) * N + i] = d;
        }
      if (cc.strengthening_rows > 0 || prob.scheme == Scheme::Wcvar) {
        for (int p = 0; p < P; ++p) {
          double d = dual_of(size_t(1 + N * P + p));
          (p % 2 == 0 ? out.mu4 : out.mu5)[size_t(p / 2)] = d;
        }
      }
      break;
    }
    case Scheme::Sfla: {
      auto q = strengthening_thresholds(blk.jcc);
      size_t cursor = 1;
      for (int p = 0; p < P; ++p) {
        const auto& row = blk.jcc.set.rows[size_t(p)];
        for (int i = 0; i < N; ++i) {
          double bxi = 0;
          for (size_t c = 0; c < row.b.size(); ++c) bxi += row.b[c] * blk.jcc.samples[size_t(i)][c];
          if (!(bxi < q[size_t(p)])) continue;
          double d = dual_of(cursor++);
          (p % 2 == 0 ? out.mu2 : out.mu3)[size_t(p / 2) * N + i] = d;
        }
      }
      for (int p = 0; p < P; ++p) {
        double d = dual_of(cursor++);
        (p % 2 == 0 ? out.mu4 : out.mu5)[size_t(p / 2)] = d;
      }
      break;
    }
    case Scheme::Exact: {
      // per sample: P indicator-on rows then one off row; thresholds afterwards
      for (int i = 0; i < N; ++i)
        for (int p = 0; p < P; ++p) {
          double d = dual_of(size_t(1 + i * (P + 1) + p));
          (p % 2 == 0 ? out.mu2 : out.mu3)[size_t(p / 2) * N + i] = d;
        }
      if (cc.strengthening_rows > 0)
        for (int p = 0; p < P; ++p) {
          double d = dual_of(size_t(1 + N * (P + 1) + p));
          (p % 2 == 0 ? out.mu4 : out.mu5)[size_t(p / 2)] = d;
        }
      break;
    }
  }
}

DispatchSolution extract_solution(const DispatchProblem& prob, const LowerLevelLp& lp,
                                  const SolveResult& res, const std::vector<double>* row_dual,
                                  const KktSystem* sys) {
  DispatchSolution sol;
  sol.status = res.status;
  sol.solver_objective = res.objective;
  sol.solve_time_s = res.solve_time_s;
  sol.message = res.message;
  if (!res.has_solution()) {
    if (res.status == SolveStatus::Infeasible)
      sol.message = "lower level infeasible" + (res.message.empty() ? "" : ": " + res.message);
    return sol;
  }

  double total = 0;
  for (size_t bi = 0; bi < prob.blocks.size(); ++bi) {
    const DispatchBlock& blk = prob.blocks[bi];
    const BlockLpIds& ids = lp.blocks[bi];
    BlockSolution bs;
    bs.t = blk.t;
    bs.s = blk.s;
    for (size_t j = 0; j < blk.participants.size(); ++j) {
      bs.quantity.push_back(res.x[size_t(ids.q[j])]);
      bs.curtail.push_back(ids.cur[j] >= 0 ? res.x[size_t(ids.cur[j])] : 0.0);
    }
    bs.welfare_gbp_per_h = block_welfare(prob, lp, int(bi), res.x);
    total += bs.welfare_gbp_per_h;

    if (sys) {
      const BlockKktIds& k = sys->blocks[bi];
      bs.pi = res.x[size_t(k.pi)];
      if (blk.has_flow_block()) {
        const int L = prob.n_lines, N = prob.amb.n;
        bs.mu2.assign(size_t(L) * N, 0.0);
        bs.mu3.assign(size_t(L) * N, 0.0);
        bs.mu4.assign(size_t(L), 0.0);
        bs.mu5.assign(size_t(L), 0.0);
        for (int l = 0; l < L; ++l) {
          for (int i = 0; i < N; ++i) {
            bs.mu2[size_t(l) * N + i] = res.x[size_t(k.mu2[size_t(l) * N + i])];
            bs.mu3[size_t(l) * N + i] = res.x[size_t(k.mu3[size_t(l) * N + i])];
          }
          bs.mu4[size_t(l)] = res.x[size_t(k.mu4[size_t(l)])];
          bs.mu5[size_t(l)] = res.x[size_t(k.mu5[size_t(l)])];
        }
      }
      bs.lmp = recover_lmp(prob, int(bi), bs.pi, bs.mu2, bs.mu3, bs.mu4, bs.mu5);
    } else if (row_dual && !row_dual->empty()) {
      bs.pi = -(*row_dual)[size_t(ids.balance)];
      if (blk.has_flow_block()) extract_flow_duals(prob, blk, ids.cc, *row_dual, bs);
      bs.lmp = recover_lmp(prob, int(bi), bs.pi, bs.mu2, bs.mu3, bs.mu4, bs.mu5);
    } else {
      bs.lmp.assign(size_t(prob.n_buses), 0.0);
    }
    sol.blocks.push_back(std::move(bs));
  }
  sol.objective_gbp_per_h = total;
  return sol;
}

}  // namespace

DispatchSolution solve_dispatch_direct(const DispatchProblem& prob, SolverBackend& backend,
                                       const SolverConfig& cfg) {
  LowerLevelLp lp = build_lower_lp(prob);
  SolveResult res = solve_certified(backend, lp.ir, cfg);
  if (prob.scheme == Scheme::Exact && res.has_solution()) {
    const SolveStatus mip_status = res.status;
    SolveResult lpres = fix_binaries_and_resolve(backend, lp.ir, res.x, cfg);
    if (lpres.has_solution()) {
      lpres.solve_time_s += res.solve_time_s;
      if (mip_status == SolveStatus::FeasibleAtLimit) lpres.status = mip_status;
      res = std::move(lpres);
    }
  }
  const std::vector<double>* duals = res.has_duals ? &res.row_dual : nullptr;
  return extract_solution(prob, lp, res, duals, nullptr);
}

DispatchSolution solve_dispatch_kkt(const DispatchProblem& prob, SolverBackend& backend,
                                    const SolverConfig& cfg, const BigMRegistry* registry) {
  LowerLevelLp lp = build_lower_lp(prob);
  KktSystem sys = emit_kkt(lp, prob);
  BigMRegistry reg = registry ? *registry : default_big_m_registry(prob);
  linearize_complementarity(lp.ir, sys, reg);
  SolveResult res = solve_certified(backend, lp.ir, cfg);
  return extract_solution(prob, lp, res, nullptr, &sys);
}

// ----------------------------------------------------------------------------------
// Checks
// ----------------------------------------------------------------------------------

LpDualityCheck check_lp_duality(const ModelIR& ir, const std::vector<double>& x,
                                const std::vector<double>& row_dual) {
  if (int(x.size()) != ir.num_vars() || int(row_dual.size()) != ir.num_rows())
    throw std::invalid_argument("point/dual sizes do not match the model");
  LpDualityCheck out;

  // reduced costs rho = c - A'y (minimization orientation)
  std::vector<double> rho(x.size(), 0.0);
  for (const auto& t : ir.obj_terms()) rho[size_t(t.var)] += t.coef;
  double dual_obj = ir.obj_constant();
  for (int r = 0; r < ir.num_rows(); ++r) {
    const LinearRow& row = ir.row(r);
    const double y = row_dual[size_t(r)];
    dual_obj += y * row.rhs;
    if (y != 0.0)
      for (const auto& t : row.terms) rho[size_t(t.var)] -= y * t.coef;

    double lhs = 0;
    for (const auto& t : row.terms) lhs += t.coef * x[size_t(t.var)];
    const double slack = lhs - row.rhs;
    switch (row.sense) {
      case RowSense::GE:
        out.max_sign_violation = std::max(out.max_sign_violation, -y);
        out.max_row_compl = std::max(out.max_row_compl, std::fabs(y * slack));
        break;
      case RowSense::LE:
        out.max_sign_violation = std::max(out.max_sign_violation, y);
        out.max_row_compl = std::max(out.max_row_compl, std::fabs(y * slack));
        break;
      case RowSense::EQ:
        break;
    }
  }

  for (int j = 0; j < ir.num_vars(); ++j) {
    const Variable& v = ir.var(j);
    const double r = rho[size_t(j)];
    if (r > 0) {
      if (std::isinf(v.lb))
        out.max_sign_violation = std::max(out.max_sign_violation, r);
      else {
        dual_obj += r * v.lb;
        out.max_col_compl = std::max(out.max_col_compl, std::fabs(r * (x[size_t(j)] - v.lb)));
      }
    } else if (r < 0) {
      if (std::isinf(v.ub))
        out.max_sign_violation = std::max(out.max_sign_violation, -r);
      else {
        dual_obj += r * v.ub;
        out.max_col_compl = std::max(out.max_col_compl, std::fabs(r * (v.ub - x[size_t(j)])));
      }
    }
  }
  out.gap = std::fabs(ir.eval_objective(x) - dual_obj);
  return out;
}

KktPointCheck check_kkt_point(const ModelIR& ir, const KktSystem& sys,
                              const std::vector<double>& x) {
  KktPointCheck out;
  for (const BlockKktIds& k : sys.blocks)
    for (RowId r : k.stationarity) {
      double resid = std::fabs(ir.eval_row(r, x) - ir.row(r).rhs);
      out.max_stationarity = std::max(out.max_stationarity, resid);
    }
  for (const KktPair& p : sys.pairs) {
    double prod = std::fabs(eval_expr(p.slack, x) * x[size_t(p.dual)]);
    out.max_complementarity = std::max(out.max_complementarity, prod);
  }
  return out;
}

BigMAudit audit_big_m(const ModelIR& ir, std::span<const KktPair> pairs,
                      const BigMRegistry& big_m, const std::vector<double>& x) {
  (void)ir;
  BigMAudit out;
  for (const KktPair& p : pairs) {
    out.worst_slack_ratio =
        std::max(out.worst_slack_ratio, eval_expr(p.slack, x) / big_m.primal_for(p.family));
    out.worst_dual_ratio =
        std::max(out.worst_dual_ratio, x[size_t(p.dual)] / big_m.dual_for(p.family));
  }
  return out;
}

std::string dispatch_to_csv(const DispatchProblem& prob, const DispatchSolution& sol) {
  std::ostringstream os;
  os << "t,s,b,k,kind,quantity_mw,price_gbp_per_mwh\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const BlockSolution& bs : sol.blocks) {
    const DispatchBlock& blk = prob.blocks[size_t(bs.t) * prob.n_conditions + bs.s];
    for (size_t j = 0; j < blk.participants.size(); ++j) {
      const BlockParticipant& bp = blk.participants[j];
      const Participant& p = prob.net.participants[size_t(bp.participant_index)];
      const char* kind = bp.kind == ParticipantKind::Generator ? "generator"
                         : bp.kind == ParticipantKind::Consumer ? "consumer"
                                                                : "wind";
      double price = bs.lmp.empty() ? bs.pi : bs.lmp[size_t(bp.bus)];
      os << bs.t << ',' << bs.s << ',' << bp.bus << ',' << p.id << ',' << kind << ','
         << num(bs.quantity[j]) << ',' << num(price) << '\n';
      if (bp.kind == ParticipantKind::WindFarm)
        os << bs.t << ',' << bs.s << ',' << bp.bus << ',' << p.id << ",curtailment,"
           << num(bs.curtail[j]) << ',' << num(price) << '\n';
    }
  }
  return os.str();
}

}  // namespace drtep
