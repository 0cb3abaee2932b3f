#include "drtep/planner.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace drtep {

std::string bilinear_mode_name(BilinearMode m) {
  switch (m) {
    case BilinearMode::BinaryExpansion: return "binary-expansion";
    case BilinearMode::Passthrough: return "passthrough";
  }
  return "?";
}

BilinearMode bilinear_mode_from_name(const std::string& name) {
  if (name == "binary-expansion") return BilinearMode::BinaryExpansion;
  if (name == "passthrough") return BilinearMode::Passthrough;
  throw std::invalid_argument("unknown bilinear mode '" + name +
                              "' (expected binary-expansion or passthrough)");
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

LinExpr scaled(const LinExpr& e, double f) {
  LinExpr out = e;
  out *= f;
  return out;
}

// Slack of an inequality row as an expression that is nonnegative at feasible points.
LinExpr row_slack(const ModelIR& ir, RowId r) {
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

// Ties `prod` to gate * value at every solution where `gate` is 0/1-valued and
// 0 <= value <= cap: prod <= cap*gate, prod <= value, value - prod <= cap*(1-gate).
// Both big-M rows are registered for the post-solve audit.
void emit_product_sandwich(ModelIR& ir, VarId prod, const LinExpr& gate, const LinExpr& value,
                           double cap, const std::string& name, const std::string& tag,
                           std::vector<BigMEntry>& entries) {
  LinExpr on = term(prod, 1.0);
  on -= scaled(gate, cap);
  ir.add_row(name + ":on", on, RowSense::LE, 0.0, tag);

  LinExpr ub = value;
  ub.add(prod, -1.0);
  ir.add_row(name + ":ub", ub, RowSense::GE, 0.0, tag);

  LinExpr off = value;
  off.add(prod, -1.0);
  off += scaled(gate, cap);
  ir.add_row(name + ":off", off, RowSense::LE, cap, tag);

  LinExpr off_gate(1.0);
  off_gate -= gate;
  LinExpr residual = value;
  residual.add(prod, -1.0);
  entries.push_back({name + ":on", term(prod, 1.0), gate, cap});
  entries.push_back({name + ":off", residual, off_gate, cap});
}

// Highest rating line l can reach under any admissible decision (for big-M scale).
double max_line_capacity(const NetworkCase& net, int l) {
  const TransmissionLine& ln = net.lines[size_t(l)];
  double cap = ln.capacity_mw;
  if (ln.reconductorable && !net.recon.factors.empty())
    cap += ln.capacity_mw * net.recon.factors.back();
  if (ln.expandable) cap += ln.max_circuits * ln.candidate_capacity_mw;
  return cap;
}

}  // namespace

// --------------------------------------------------------------------------------------
// Admissibility
// --------------------------------------------------------------------------------------

std::vector<char> admissible_configurations(const NetworkCase& net,
                                            const std::vector<Configuration>& configs,
                                            const AmbiguityConfig& amb) {
  const auto expandable = net.expandable_lines();
  std::vector<char> out(configs.size(), 0);
  for (size_t c = 0; c < configs.size(); ++c) {
    const Configuration& cfg = configs[c];
    if (!cfg.valid) continue;
    bool ok = true;
    if (amb.theta > 1e-12) {
      // a corridor with no circuit at all admits no robustly safe dispatch: its zero
      // rating leaves no transport budget, so the clearing block becomes infeasible
      for (size_t e = 0; e < expandable.size(); ++e) {
        if (net.lines[size_t(expandable[e])].capacity_mw == 0.0 && cfg.circuits[e] == 0) {
          ok = false;
          break;
        }
      }
    }
    out[c] = ok ? 1 : 0;
  }
  return out;
}

// --------------------------------------------------------------------------------------
// Merchandising surplus substitution
// --------------------------------------------------------------------------------------

LinExpr substitute_ms(const MsBlockRefs& refs) {
  if (refs.participants == nullptr)
    throw std::invalid_argument("merchandising-surplus refs carry no participant list");
  const auto& parts = *refs.participants;
  LinExpr e;
  for (size_t j = 0; j < parts.size(); ++j) {
    const BlockParticipant& bp = parts[j];
    switch (bp.kind) {
      case ParticipantKind::Consumer: {
        const double surcharge = bp.bid - bp.bid_hat;
        e.add(refs.q[j], bp.bid - surcharge);
        e.add(refs.phi_hi[j], -bp.q_max);
        break;
      }
      case ParticipantKind::Generator: {
        const double surcharge = bp.bid_hat - bp.bid;
        e.add(refs.q[j], -bp.bid - surcharge);
        e.add(refs.phi_hi[j], -bp.q_max);
        break;
      }
      case ParticipantKind::WindFarm: {
        const double surcharge = bp.bid_hat - bp.bid;
        e.add(refs.q[j], -bp.bid - surcharge);
        e.add(refs.phi_sch[j], -bp.q_max);
        e.add(refs.phi_cur_hi[j], -bp.q_max);
        e.add(refs.cur[j], -bp.curtail_cost);
        break;
      }
    }
  }
  return e;
}

// --------------------------------------------------------------------------------------
// Upper level: investment logic, tariffs, revenue bookkeeping
// --------------------------------------------------------------------------------------

UpperIds build_upper_constraints(ModelIR& ir, const NetworkCase& net,
                                 const std::vector<Configuration>& configs,
                                 std::span<const char> admissible,
                                 std::span<const std::vector<BlockParticipant>> participants,
                                 const PlannerOptions& opt,
                                 std::vector<BigMEntry>& m_entries,
                                 std::vector<PendingRevenueProduct>& pending) {
  const int T = net.horizon.periods, S = net.horizon.operating_conditions;
  const int C = int(configs.size());
  if (int(participants.size()) != T * S)
    throw std::invalid_argument("participant blocks do not match the planning horizon");
  const double psi = net.horizon.hours_per_period / 1e6;
  const double bms = opt.big_m_scale;
  const auto& factors = net.recon.factors;
  const int J = int(factors.size());

  UpperIds u;
  u.recon_lines = net.reconductorable_lines();
  u.corridors = net.expandable_lines();
  {
    std::set<int> all(u.recon_lines.begin(), u.recon_lines.end());
    all.insert(u.corridors.begin(), u.corridors.end());
    u.tariff_lines.assign(all.begin(), all.end());
  }
  for (int l : u.recon_lines)
    if (net.recon.cost_for(net.lines[size_t(l)].id) == nullptr)
      throw std::invalid_argument("line " + std::to_string(net.lines[size_t(l)].id) +
                                  " is reconductorable but has no uprate cost entry");

  // ---- configuration selection ----
  u.o.assign(size_t(T), std::vector<VarId>(size_t(C), -1));
  for (int t = 0; t < T; ++t) {
    LinExpr one;
    for (int c = 0; c < C; ++c) {
      const double ub = admissible[size_t(c)] ? 1.0 : 0.0;
      u.o[size_t(t)][size_t(c)] = ir.add_var(
          "ul:o_t" + std::to_string(t) + "_c" + std::to_string(c), VarKind::Binary, 0.0, ub);
      one.add(u.o[size_t(t)][size_t(c)], 1.0);
    }
    ir.add_row("ul:one_config_t" + std::to_string(t), one, RowSense::EQ, 1.0, "ul:logic");
  }

  // ---- reconductoring commitments ----
  u.b_r.assign(size_t(T), {});
  u.z_r.assign(size_t(T), {});
  for (int t = 0; t < T; ++t) {
    u.b_r[size_t(t)].assign(u.recon_lines.size(), {});
    u.z_r[size_t(t)].assign(u.recon_lines.size(), -1);
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
      const int line = u.recon_lines[ri];
      for (int j = 1; j < J; ++j)
        u.b_r[size_t(t)][ri].push_back(
            ir.add_var("ul:br_t" + std::to_string(t) + "_l" + std::to_string(line) + "_j" +
                           std::to_string(j),
                       VarKind::Binary, 0.0, 1.0));
      VarId zr = ir.add_var("ul:zr_t" + std::to_string(t) + "_l" + std::to_string(line),
                            VarKind::Continuous, 0.0, 1.0);
      u.z_r[size_t(t)][ri] = zr;
      LinExpr def = term(zr, 1.0);
      for (int th = 0; th <= t; ++th)
        for (VarId b : u.b_r[size_t(th)][ri]) def.add(b, -1.0);
      ir.add_row("ul:zr_def_t" + std::to_string(t) + "_l" + std::to_string(line), def,
                 RowSense::EQ, 0.0, "ul:logic");
    }
  }
  for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
    LinExpr once;
    for (int t = 0; t < T; ++t)
      for (VarId b : u.b_r[size_t(t)][ri]) once.add(b, 1.0);
    ir.add_row("ul:recon_once_l" + std::to_string(u.recon_lines[ri]), once, RowSense::LE, 1.0,
               "ul:logic");
  }

  // ---- parallel-circuit state implied by the configuration choice ----
  u.z_p.assign(size_t(T), {});
  for (int t = 0; t < T; ++t) {
    u.z_p[size_t(t)].assign(u.corridors.size(), {});
    for (size_t e = 0; e < u.corridors.size(); ++e) {
      const int line = u.corridors[e];
      const int mmax = net.lines[size_t(line)].max_circuits;
      LinExpr at_most_one;
      for (int mcirc = 1; mcirc <= mmax; ++mcirc) {
        VarId zp = ir.add_var("ul:zp_t" + std::to_string(t) + "_l" + std::to_string(line) +
                                  "_m" + std::to_string(mcirc),
                              VarKind::Continuous, 0.0, 1.0);
        u.z_p[size_t(t)][e].push_back(zp);
        LinExpr def = term(zp, 1.0);
        for (int c = 0; c < C; ++c)
          if (configs[size_t(c)].circuits[e] == mcirc) def.add(u.o[size_t(t)][size_t(c)], -1.0);
        ir.add_row("ul:zp_def_t" + std::to_string(t) + "_l" + std::to_string(line) + "_m" +
                       std::to_string(mcirc),
                   def, RowSense::EQ, 0.0, "ul:logic");
        at_most_one.add(zp, 1.0);
      }
      if (mmax > 0)
        ir.add_row("ul:zp_one_t" + std::to_string(t) + "_l" + std::to_string(line), at_most_one,
                   RowSense::LE, 1.0, "ul:logic");
      if (t >= 1) {
        LinExpr mono;
        for (int mcirc = 1; mcirc <= mmax; ++mcirc) {
          mono.add(u.z_p[size_t(t)][e][size_t(mcirc - 1)], double(mcirc));
          mono.add(u.z_p[size_t(t - 1)][e][size_t(mcirc - 1)], -double(mcirc));
        }
        if (mmax > 0)
          ir.add_row("ul:zp_mono_t" + std::to_string(t) + "_l" + std::to_string(line), mono,
                     RowSense::GE, 0.0, "ul:logic");
      }
    }
  }

  // a line cannot be both uprated and duplicated
  for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
    const int line = u.recon_lines[ri];
    auto it = std::find(u.corridors.begin(), u.corridors.end(), line);
    if (it == u.corridors.end()) continue;
    const size_t e = size_t(it - u.corridors.begin());
    for (int t = 0; t < T; ++t) {
      LinExpr both = term(u.z_r[size_t(t)][ri], 1.0);
      for (VarId zp : u.z_p[size_t(t)][e]) both.add(zp, 1.0);
      ir.add_row("ul:one_action_t" + std::to_string(t) + "_l" + std::to_string(line), both,
                 RowSense::LE, 1.0, "ul:logic");
    }
  }

  // ---- pin the investment decisions when a plan is supplied ----
  if (opt.fixed_plan != nullptr) {
    const InvestmentPlan& plan = *opt.fixed_plan;
    if (int(plan.config_ids.size()) != T)
      throw std::invalid_argument("pinned plan must select one configuration per period");
    for (int t = 0; t < T; ++t) {
      const int cid = plan.config_ids[size_t(t)];
      if (cid < 0 || cid >= C)
        throw std::invalid_argument("pinned plan references configuration " +
                                    std::to_string(cid) + " which does not exist");
      if (!admissible[size_t(cid)])
        throw std::invalid_argument("pinned plan selects configuration " + std::to_string(cid) +
                                    " which the robust clearing cannot run under");
      for (int c = 0; c < C; ++c) {
        Variable& v = ir.var_mutable(u.o[size_t(t)][size_t(c)]);
        v.lb = v.ub = (c == cid) ? 1.0 : 0.0;
      }
    }
    for (int t = 0; t < T; ++t)
      for (auto& row : u.b_r[size_t(t)])
        for (VarId b : row) {
          Variable& v = ir.var_mutable(b);
          v.lb = v.ub = 0.0;
        }
    for (const auto& rc : plan.recon) {
      auto it = std::find_if(u.recon_lines.begin(), u.recon_lines.end(), [&](int l) {
        return net.lines[size_t(l)].id == rc.line_id;
      });
      if (it == u.recon_lines.end())
        throw std::invalid_argument("pinned plan uprates line " + std::to_string(rc.line_id) +
                                    " which is not reconductorable");
      if (rc.from_period < 0 || rc.from_period >= T)
        throw std::invalid_argument("pinned uprate on line " + std::to_string(rc.line_id) +
                                    " starts outside the horizon");
      int j = -1;
      for (int jj = 1; jj < J; ++jj)
        if (std::fabs(factors[size_t(jj)] - rc.factor) <= 1e-9) j = jj;
      if (j < 0)
        throw std::invalid_argument("pinned uprate factor " + std::to_string(rc.factor) +
                                    " is not on the reconductoring grid");
      const size_t ri = size_t(it - u.recon_lines.begin());
      Variable& v = ir.var_mutable(u.b_r[size_t(rc.from_period)][ri][size_t(j - 1)]);
      v.lb = v.ub = 1.0;
    }
  }

  // ---- tariffs and their activation products ----
  const double tau_upper = net.tariff.tau_upper_gbp_per_mwh;
  u.tau_v.assign(u.tariff_lines.size(), -1);
  u.tau_bits.assign(u.tariff_lines.size(), {});
  std::vector<double> tau_hi(u.tariff_lines.size(), tau_upper);
  for (size_t li = 0; li < u.tariff_lines.size(); ++li) {
    const int line = u.tariff_lines[li];
    double lo = 0.0, hi = tau_upper;
    if (opt.fixed_tau_v.has_value()) {
      auto it = opt.fixed_tau_v->find(net.lines[size_t(line)].id);
      const double v = it == opt.fixed_tau_v->end() ? 0.0 : it->second;
      lo = hi = v;
      tau_hi[li] = v;
    }
    u.tau_v[li] = ir.add_var("ul:tauv_l" + std::to_string(line), VarKind::Continuous, lo, hi);
  }
  u.tau_c = ir.add_var("ul:tauc", VarKind::Continuous, 0.0, kInf);

  auto tariff_index = [&](int line) {
    auto it = std::find(u.tariff_lines.begin(), u.tariff_lines.end(), line);
    return size_t(it - u.tariff_lines.begin());
  };

  u.eta_rv.assign(size_t(T), std::vector<VarId>(u.recon_lines.size(), -1));
  u.eta_pv.assign(size_t(T), {});
  for (int t = 0; t < T; ++t) {
    u.eta_pv[size_t(t)].assign(u.corridors.size(), {});
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
      const int line = u.recon_lines[ri];
      const size_t li = tariff_index(line);
      const std::string name =
          "ul:etarv_t" + std::to_string(t) + "_l" + std::to_string(line);
      VarId eta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
      u.eta_rv[size_t(t)][ri] = eta;
      emit_product_sandwich(ir, eta, term(u.z_r[size_t(t)][ri], 1.0), term(u.tau_v[li], 1.0),
                            (1.05 * tau_hi[li] + 0.1) * bms, name, "ul:eta", m_entries);
    }
    for (size_t e = 0; e < u.corridors.size(); ++e) {
      const int line = u.corridors[e];
      const size_t li = tariff_index(line);
      for (size_t mi = 0; mi < u.z_p[size_t(t)][e].size(); ++mi) {
        const std::string name = "ul:etapv_t" + std::to_string(t) + "_l" + std::to_string(line) +
                                 "_m" + std::to_string(mi + 1);
        VarId eta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
        u.eta_pv[size_t(t)][e].push_back(eta);
        emit_product_sandwich(ir, eta, term(u.z_p[size_t(t)][e][mi], 1.0),
                              term(u.tau_v[li], 1.0), (1.05 * tau_hi[li] + 0.1) * bms, name,
                              "ul:eta", m_entries);
      }
    }
  }

  // per-period bid surcharge implied by the active tariffs (uniform allocation)
  u.surcharge.assign(size_t(T), -1);
  for (int t = 0; t < T; ++t) {
    u.surcharge[size_t(t)] =
        ir.add_var("ul:D_t" + std::to_string(t), VarKind::Continuous, 0.0, kInf);
    LinExpr def = term(u.surcharge[size_t(t)], 1.0);
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri)
      def.add(u.eta_rv[size_t(t)][ri], -net.tariff.delta_default);
    for (size_t e = 0; e < u.corridors.size(); ++e)
      for (VarId eta : u.eta_pv[size_t(t)][e]) def.add(eta, -net.tariff.delta_default);
    ir.add_row("ul:reshape_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:reshape");
  }

  // ---- investment cost ----
  u.invest_cost.assign(size_t(T), -1);
  for (int t = 0; t < T; ++t) {
    u.invest_cost[size_t(t)] =
        ir.add_var("ul:invest_t" + std::to_string(t), VarKind::Continuous, 0.0, kInf);
    LinExpr def = term(u.invest_cost[size_t(t)], 1.0);
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
      const TransmissionLine& ln = net.lines[size_t(u.recon_lines[ri])];
      const auto* cost = net.recon.cost_for(ln.id);
      for (int j = 1; j < J; ++j)
        def.add(u.b_r[size_t(t)][ri][size_t(j - 1)],
                -(cost->k_fix_mgbp + cost->k_var_mgbp_per_mw * factors[size_t(j)] *
                                         ln.capacity_mw));
    }
    for (size_t e = 0; e < u.corridors.size(); ++e) {
      const TransmissionLine& ln = net.lines[size_t(u.corridors[e])];
      for (size_t mi = 0; mi < u.z_p[size_t(t)][e].size(); ++mi) {
        def.add(u.z_p[size_t(t)][e][mi], -double(mi + 1) * ln.expansion_cost_mgbp);
        if (t >= 1)
          def.add(u.z_p[size_t(t - 1)][e][mi], double(mi + 1) * ln.expansion_cost_mgbp);
      }
    }
    ir.add_row("ul:cost_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:cost");
  }

  // ---- cleared-volume aggregates (definition rows arrive with the clearing blocks) ----
  u.volume.assign(size_t(T), -1);
  std::vector<double> vol_cap(size_t(T), 0.0);
  for (int t = 0; t < T; ++t) {
    u.volume[size_t(t)] =
        ir.add_var("ul:vol_t" + std::to_string(t), VarKind::Continuous, 0.0, kInf);
    double cap = 0;
    for (int s = 0; s < S; ++s)
      for (const BlockParticipant& bp : participants[size_t(t) * S + s]) cap += bp.q_max;
    vol_cap[size_t(t)] = (1.05 * cap + 1.0) * bms;
  }

  // ---- volumetric revenue (tariff x activation x volume products stay pending) ----
  u.vc_r.assign(size_t(T), std::vector<VarId>(u.recon_lines.size(), -1));
  u.vc_p.assign(size_t(T), std::vector<VarId>(u.corridors.size(), -1));
  u.vc.assign(size_t(T), -1);
  for (int t = 0; t < T; ++t) {
    LinExpr total;
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
      const int line = u.recon_lines[ri];
      VarId vcr = ir.add_var("ul:vcr_t" + std::to_string(t) + "_l" + std::to_string(line),
                             VarKind::Continuous, 0.0, kInf);
      u.vc_r[size_t(t)][ri] = vcr;
      total.add(vcr, 1.0);
      PendingRevenueProduct p;
      p.t = t;
      p.line = line;
      p.revenue = vcr;
      p.scale = psi * net.tariff.delta_default;
      p.eta = {u.eta_rv[size_t(t)][ri]};
      p.gate = term(u.z_r[size_t(t)][ri], 1.0);
      p.volume = u.volume[size_t(t)];
      p.volume_cap = vol_cap[size_t(t)];
      p.tau_fixed = opt.fixed_tau_v.has_value() ? tau_hi[tariff_index(line)] : -1.0;
      p.label = "vcr_t" + std::to_string(t) + "_l" + std::to_string(line);
      pending.push_back(std::move(p));
    }
    for (size_t e = 0; e < u.corridors.size(); ++e) {
      const int line = u.corridors[e];
      VarId vcp = ir.add_var("ul:vcp_t" + std::to_string(t) + "_l" + std::to_string(line),
                             VarKind::Continuous, 0.0, kInf);
      u.vc_p[size_t(t)][e] = vcp;
      total.add(vcp, 1.0);
      PendingRevenueProduct p;
      p.t = t;
      p.line = line;
      p.revenue = vcp;
      p.scale = psi * net.tariff.delta_default;
      p.eta = u.eta_pv[size_t(t)][e];
      LinExpr gate;
      for (VarId zp : u.z_p[size_t(t)][e]) gate.add(zp, 1.0);
      p.gate = gate;
      p.volume = u.volume[size_t(t)];
      p.volume_cap = vol_cap[size_t(t)];
      p.tau_fixed = opt.fixed_tau_v.has_value() ? tau_hi[tariff_index(line)] : -1.0;
      p.label = "vcp_t" + std::to_string(t) + "_l" + std::to_string(line);
      pending.push_back(std::move(p));
    }
    u.vc[size_t(t)] = ir.add_var("ul:vc_t" + std::to_string(t), VarKind::Continuous, 0.0, kInf);
    LinExpr def = term(u.vc[size_t(t)], 1.0);
    def -= total;
    ir.add_row("ul:vc_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:vc");
  }

  // ---- capacity revenue and the revenue-ratio coupling ----
  u.cc.assign(size_t(T), -1);
  for (int t = 0; t < T; ++t) {
    double capsum = 0;
    for (int s = 0; s < S; ++s)
      for (const BlockParticipant& bp : participants[size_t(t) * S + s])
        capsum += bp.kind == ParticipantKind::WindFarm
                      ? net.participants[size_t(bp.participant_index)].qty_max_mw
                      : bp.q_max;
    u.cc[size_t(t)] = ir.add_var("ul:cc_t" + std::to_string(t), VarKind::Continuous, 0.0, kInf);
    LinExpr def = term(u.cc[size_t(t)], 1.0);
    def.add(u.tau_c, -psi * capsum);
    ir.add_row("ul:cc_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:cc");
  }
  {
    LinExpr couple;
    for (int t = 0; t < T; ++t) {
      couple.add(u.cc[size_t(t)], 1.0);
      couple.add(u.vc[size_t(t)], -net.tariff.rho_vc);
    }
    ir.add_row("ul:coupling", couple, RowSense::EQ, 0.0, "ul:coupling");
  }

  // ---- merchandising surplus and the revenue-adequacy requirement ----
  u.ms.assign(size_t(T), -1);
  for (int t = 0; t < T; ++t)
    u.ms[size_t(t)] = ir.add_var("ul:ms_t" + std::to_string(t), VarKind::Continuous, -kInf, kInf);

  LinExpr adequacy;
  for (int t = 0; t < T; ++t) {
    const double disc = net.discount(t);
    adequacy.add(u.ms[size_t(t)], disc);
    adequacy.add(u.vc[size_t(t)], disc);
    adequacy.add(u.cc[size_t(t)], disc);
    adequacy.add(u.invest_cost[size_t(t)], -disc);
  }
  u.adequacy = ir.add_row("ul:adequacy", adequacy, RowSense::GE, 0.0, "ul:adequacy");

  return u;
}

// --------------------------------------------------------------------------------------
// Full single-level assembly
// --------------------------------------------------------------------------------------

SingleLevelModel assemble_single_level(const NetworkCase& net,
                                       const std::vector<Configuration>& configs,
                                       const ErrorSampleSet& train, const AmbiguityConfig& amb,
                                       SchemeParams params, Scheme scheme,
                                       const PlannerOptions& opt) {
  amb.validate();
  if (!scheme_supports_kkt(scheme))
    throw std::invalid_argument("scheme '" + scheme_name(scheme) +
                                "' has no fixed optimality system and cannot be embedded in "
                                "the investment model; use sla, la or wcvar");
  const int T = net.horizon.periods, S = net.horizon.operating_conditions;
  const int L = int(net.lines.size()), B = int(net.buses.size());
  const int C = int(configs.size());
  const int N = amb.n;
  if (C == 0) throw std::invalid_argument("no candidate configurations supplied");

  const bool has_wind = !net.participants_of(ParticipantKind::WindFarm).empty();
  if (has_wind && train.count() == 0)
    throw std::invalid_argument("case has wind farms but the training sample set is empty");
  if (train.count() > 0 && train.count() != amb.n)
    throw std::invalid_argument("training sample count disagrees with the ambiguity setting");
  if (train.count() > 0 && (train.periods != T || train.conditions != S))
    throw std::invalid_argument("training sample set does not match the planning horizon");

  if (params.kappa.empty()) params.kappa = uniform_kappa(amb.n);
  if (params.w.empty()) params.w = uniform_weights(2 * L == 0 ? 1 : 2 * L);
  params.validate(amb.n, 2 * L == 0 ? int(params.w.size()) : 2 * L);

  SingleLevelModel m;
  m.scheme = scheme;
  m.mode = opt.bilinear_mode;
  m.net = net;
  m.configs = configs;
  m.amb = amb;
  m.params = params;
  m.options = opt;
  m.n_periods = T;
  m.n_conditions = S;
  m.n_lines = L;
  m.n_buses = B;
  m.psi_mgbp = net.horizon.hours_per_period / 1e6;

  m.admissible = admissible_configurations(net, configs, amb);
  if (std::count(m.admissible.begin(), m.admissible.end(), 1) == 0)
    throw std::invalid_argument(
        "no admissible configuration: every candidate layout either disconnects a "
        "participant bus or leaves an unbuilt corridor without a circuit");

  // raw-bid participants per clearing block (the tariff surcharge enters the optimality
  // system through its own variable, so bids stay unreshaped here)
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      std::vector<BlockParticipant> parts;
      for (size_t j = 0; j < net.participants.size(); ++j) {
        const Participant& p = net.participants[j];
        BlockParticipant bp;
        bp.participant_index = int(j);
        bp.kind = p.kind;
        bp.bus = p.bus;
        bp.bid = p.bid_gbp_per_mwh;
        bp.bid_hat = p.bid_gbp_per_mwh;
        switch (p.kind) {
          case ParticipantKind::Generator: bp.q_max = p.qty_max_mw; break;
          case ParticipantKind::Consumer: bp.q_max = net.consumer_max_mw(p, t); break;
          case ParticipantKind::WindFarm:
            bp.q_max = p.forecast_mw[size_t(t)][size_t(s)];
            bp.curtail_cost = p.curtailment_cost_gbp_per_mwh;
            break;
        }
        parts.push_back(bp);
      }
      m.participants.push_back(std::move(parts));
    }

  // per-configuration aggregated error samples and headroom order statistics
  const bool flow = L > 0;
  std::vector<AggregatedErrors> agg(static_cast<size_t>(C));
  std::vector<char> has_agg(size_t(C), 0);
  QTables qt;
  bool use_qt = false;
  if (flow && has_wind) {
    for (int c = 0; c < C; ++c)
      if (m.admissible[size_t(c)]) {
        agg[size_t(c)] = aggregate_line_errors(train, net, configs[size_t(c)]);
        has_agg[size_t(c)] = 1;
      }
    qt = precompute_Q(train, net, configs, amb.eps);
    use_qt = true;
  }

  // big-M caps sized to the largest decision-reachable problem
  BigMRegistry reg;
  {
    double q_max = 1.0, q_total = 0.0, cap_max = 0.0, xi_max = 0.0;
    for (const auto& parts : m.participants) {
      double tot = 0;
      for (const BlockParticipant& bp : parts) {
        q_max = std::max(q_max, bp.q_max);
        tot += bp.q_max;
      }
      q_total = std::max(q_total, tot);
    }
    for (int l = 0; l < L; ++l) cap_max = std::max(cap_max, max_line_capacity(net, l));
    for (int c = 0; c < C; ++c)
      if (has_agg[size_t(c)])
        for (double v : agg[size_t(c)].values) xi_max = std::max(xi_max, std::fabs(v));
    const double scale = q_total + cap_max + xi_max + amb.theta / amb.eps;
    reg.primal["quantity"] = 2.0 * q_max;
    reg.primal["curtail"] = 2.0 * q_max;
    reg.primal["scheme_scalar"] = 2.0 * scale;
    reg.primal["sample"] = 4.0 * scale;
    reg.primal["threshold"] = 4.0 * scale;
    reg.primal["budget"] = 2.0 * scale * std::max(1.0, amb.eps * N) + amb.theta * N;
    for (const char* fam : {"quantity", "curtail", "scheme_scalar", "sample", "threshold",
                            "budget"})
      reg.dual[fam] = opt.dual_big_m;
    reg.scale(opt.big_m_scale);
  }

  ModelIR& ir = m.ir;
  m.upper = build_upper_constraints(ir, net, configs, m.admissible, m.participants, opt,
                                    m.m_entries, m.pending_products);
  const UpperIds& u = m.upper;

  const auto expandable = net.expandable_lines();
  const auto recon_lines = net.reconductorable_lines();
  const auto& factors = net.recon.factors;
  const double epsN = amb.eps * N;

  // rated transfer limit of line l in period t as an expression over the decisions
  auto cap_expr = [&](int t, int l) {
    const TransmissionLine& ln = net.lines[size_t(l)];
    LinExpr e(ln.capacity_mw);
    auto rit = std::find(recon_lines.begin(), recon_lines.end(), l);
    if (rit != recon_lines.end()) {
      const size_t ri = size_t(rit - recon_lines.begin());
      for (int th = 0; th <= t; ++th)
        for (size_t j = 1; j < factors.size(); ++j)
          e.add(u.b_r[size_t(th)][ri][j - 1], factors[j] * ln.capacity_mw);
    }
    auto eit = std::find(expandable.begin(), expandable.end(), l);
    if (eit != expandable.end()) {
      const size_t ei = size_t(eit - expandable.begin());
      for (size_t mi = 0; mi < u.z_p[size_t(t)][ei].size(); ++mi)
        e.add(u.z_p[size_t(t)][ei][mi], double(mi + 1) * ln.candidate_capacity_mw);
    }
    return e;
  };

  // caps for the configuration-product sandwiches
  const double m_agg = (1.05 * (1.0 + std::max(1.0, epsN)) * opt.dual_big_m + 1.0) *
                       opt.big_m_scale;
  const double m_dual = (1.05 * opt.dual_big_m + 1.0) * opt.big_m_scale;

  // ---- one optimality-system block per (period, condition) ----
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      const std::string pre = block_prefix(t, s);
      const auto& parts = m.participants[size_t(t) * S + s];
      const size_t np = parts.size();
      PlannerBlockIds b;
      b.t = t;
      b.s = s;
      b.cur.assign(np, -1);
      b.wind_identity.assign(np, -1);

      // primal clearing variables
      LinExpr balance;
      for (size_t j = 0; j < np; ++j) {
        const BlockParticipant& bp = parts[j];
        const std::string qn = pre + "q" + std::to_string(j);
        switch (bp.kind) {
          case ParticipantKind::Generator:
          case ParticipantKind::Consumer: {
            VarId q = ir.add_var(qn, VarKind::Continuous, 0.0, bp.q_max);
            b.q.push_back(q);
            balance.add(q, -kind_sign(bp.kind));
            break;
          }
          case ParticipantKind::WindFarm: {
            VarId q = ir.add_var(qn, VarKind::Continuous, -kInf, kInf);
            VarId cur =
                ir.add_var(pre + "cur" + std::to_string(j), VarKind::Continuous, 0.0, bp.q_max);
            b.q.push_back(q);
            b.cur[j] = cur;
            balance.add(q, -1.0);
            LinExpr identity;
            identity.add(q, 1.0).add(cur, 1.0);
            b.wind_identity[j] = ir.add_row(pre + "wind" + std::to_string(j), identity,
                                            RowSense::EQ, bp.q_max, "ll:wind");
            break;
          }
        }
      }
      b.balance = ir.add_row(pre + "balance", balance, RowSense::EQ, 0.0, "ll:balance");

      if (flow) {
        if (scheme == Scheme::Wcvar) {
          for (int i = 0; i < N; ++i)
            b.alpha.push_back(
                ir.add_var(pre + "cc:alpha" + std::to_string(i), VarKind::Continuous, 0, kInf));
          b.beta = ir.add_var(pre + "cc:beta", VarKind::Continuous, -kInf, kInf);
          b.tau = ir.add_var(pre + "cc:tau", VarKind::Continuous, -kInf, kInf);
        } else {
          b.s_var = ir.add_var(pre + "cc:s", VarKind::Continuous, 0, kInf);
          for (int i = 0; i < N; ++i)
            b.r.push_back(
                ir.add_var(pre + "cc:r" + std::to_string(i), VarKind::Continuous, 0, kInf));
        }
      }

      // net-injection products with the configuration choice
      std::vector<LinExpr> inj_pos(static_cast<size_t>(B)), inj_neg(static_cast<size_t>(B));
      std::vector<double> pos_cap(size_t(B), 0.0), neg_cap(size_t(B), 0.0);
      for (size_t j = 0; j < np; ++j) {
        const BlockParticipant& bp = parts[j];
        if (bp.kind == ParticipantKind::Consumer) {
          inj_neg[size_t(bp.bus)].add(b.q[j], 1.0);
          neg_cap[size_t(bp.bus)] += bp.q_max;
        } else {
          inj_pos[size_t(bp.bus)].add(b.q[j], 1.0);
          pos_cap[size_t(bp.bus)] += bp.q_max;
        }
      }
      b.eta_pos.assign(size_t(B) * C, -1);
      b.eta_neg.assign(size_t(B) * C, -1);
      if (flow)
        for (int c = 0; c < C; ++c) {
          if (!m.admissible[size_t(c)]) continue;
          const LinExpr gate = term(u.o[size_t(t)][size_t(c)], 1.0);
          for (int bus = 0; bus < B; ++bus) {
            if (pos_cap[size_t(bus)] > 0) {
              const std::string name =
                  pre + "etap_b" + std::to_string(bus) + "_c" + std::to_string(c);
              VarId eta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
              b.eta_pos[size_t(bus) * C + c] = eta;
              emit_product_sandwich(ir, eta, gate, inj_pos[size_t(bus)],
                                    (1.05 * pos_cap[size_t(bus)] + 1.0) * opt.big_m_scale, name,
                                    "sl:eta", m.m_entries);
            }
            if (neg_cap[size_t(bus)] > 0) {
              const std::string name =
                  pre + "etan_b" + std::to_string(bus) + "_c" + std::to_string(c);
              VarId eta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
              b.eta_neg[size_t(bus) * C + c] = eta;
              emit_product_sandwich(ir, eta, gate, inj_neg[size_t(bus)],
                                    (1.05 * neg_cap[size_t(bus)] + 1.0) * opt.big_m_scale, name,
                                    "sl:eta", m.m_entries);
            }
          }
        }

      // configuration-blended net flow per line
      std::vector<LinExpr> flow_expr(static_cast<size_t>(std::max(L, 1)));
      if (flow)
        for (int c = 0; c < C; ++c) {
          if (!m.admissible[size_t(c)]) continue;
          const Configuration& cfg = configs[size_t(c)];
          for (int l = 0; l < L; ++l)
            for (int bus = 0; bus < B; ++bus) {
              const double sf = cfg.s(bus, l, L);
              if (sf == 0.0) continue;
              if (b.eta_pos[size_t(bus) * C + c] >= 0)
                flow_expr[size_t(l)].add(b.eta_pos[size_t(bus) * C + c], sf);
              if (b.eta_neg[size_t(bus) * C + c] >= 0)
                flow_expr[size_t(l)].add(b.eta_neg[size_t(bus) * C + c], -sf);
            }
        }

      // configuration-blended error samples and headroom thresholds
      auto xihat = [&](int l, int i) {
        LinExpr e;
        for (int c = 0; c < C; ++c)
          if (has_agg[size_t(c)]) {
            const double v = agg[size_t(c)].at(t, s, l, i);
            if (v != 0.0) e.add(u.o[size_t(t)][size_t(c)], v);
          }
        return e;
      };
      auto qhat = [&](int l, bool upper_side) {
        LinExpr e;
        if (!use_qt) return e;
        for (int c = 0; c < C; ++c)
          if (m.admissible[size_t(c)]) {
            const double v = upper_side ? qt.at_max(t, s, l, c) : qt.at_min(t, s, l, c);
            if (v != 0.0) e.add(u.o[size_t(t)][size_t(c)], v);
          }
        return e;
      };

      // dual variables
      BlockKktIds& k = b.kkt;
      k.phi_lo.assign(np, -1);
      k.phi_hi.assign(np, -1);
      k.phi_sch.assign(np, -1);
      k.phi_cur_lo.assign(np, -1);
      k.phi_cur_hi.assign(np, -1);
      k.pi = ir.add_var(pre + "pi", VarKind::Continuous, -kInf, kInf);
      for (size_t j = 0; j < np; ++j) {
        const std::string js = std::to_string(j);
        if (parts[j].kind == ParticipantKind::WindFarm) {
          k.phi_sch[j] = ir.add_var(pre + "sch" + js, VarKind::Continuous, -kInf, kInf);
          k.phi_cur_lo[j] = ir.add_var(pre + "curlo" + js, VarKind::Continuous, 0, kInf);
          k.phi_cur_hi[j] = ir.add_var(pre + "curhi" + js, VarKind::Continuous, 0, kInf);
        } else {
          k.phi_lo[j] = ir.add_var(pre + "lo" + js, VarKind::Continuous, 0, kInf);
          k.phi_hi[j] = ir.add_var(pre + "hi" + js, VarKind::Continuous, 0, kInf);
        }
      }
      const bool with_thresholds = scheme == Scheme::Sla || scheme == Scheme::Wcvar;
      if (flow) {
        k.mu1 = ir.add_var(pre + "mu1", VarKind::Continuous, 0, kInf);
        for (int l = 0; l < L; ++l) {
          const std::string ls = std::to_string(l);
          for (int i = 0; i < N; ++i) {
            const std::string key = ls + "_" + std::to_string(i);
            k.mu2.push_back(ir.add_var(pre + "mu2_" + key, VarKind::Continuous, 0, kInf));
            k.mu3.push_back(ir.add_var(pre + "mu3_" + key, VarKind::Continuous, 0, kInf));
          }
          if (with_thresholds) {
            k.mu4.push_back(ir.add_var(pre + "mu4_" + ls, VarKind::Continuous, 0, kInf));
            k.mu5.push_back(ir.add_var(pre + "mu5_" + ls, VarKind::Continuous, 0, kInf));
          }
          k.agg2.push_back(ir.add_var(pre + "agg2_" + ls, VarKind::Continuous, 0, kInf));
          k.agg3.push_back(ir.add_var(pre + "agg3_" + ls, VarKind::Continuous, 0, kInf));
        }
        if (scheme == Scheme::Wcvar) {
          for (int i = 0; i < N; ++i)
            k.mu_alpha.push_back(
                ir.add_var(pre + "mua" + std::to_string(i), VarKind::Continuous, 0, kInf));
        } else {
          k.mu_u = ir.add_var(pre + "mu_u", VarKind::Continuous, 0, kInf);
          for (int i = 0; i < N; ++i)
            k.mu_v.push_back(
                ir.add_var(pre + "muv" + std::to_string(i), VarKind::Continuous, 0, kInf));
        }
        for (int l = 0; l < L; ++l) {
          LinExpr d2 = term(k.agg2[size_t(l)], 1.0);
          LinExpr d3 = term(k.agg3[size_t(l)], 1.0);
          for (int i = 0; i < N; ++i) {
            const double wgt = scheme == Scheme::Wcvar ? 1.0 : params.kappa[size_t(i)];
            d2.add(k.mu2[size_t(l) * N + i], -wgt);
            d3.add(k.mu3[size_t(l) * N + i], -wgt);
          }
          const std::string ls = std::to_string(l);
          ir.add_row(pre + "def_agg2_" + ls, d2, RowSense::EQ, 0.0, "sl:aggregate");
          ir.add_row(pre + "def_agg3_" + ls, d3, RowSense::EQ, 0.0, "sl:aggregate");
        }
      }

      // products of the flow duals with the configuration choice (these carry the
      // congestion price adjustment, which depends on the realized shift factors)
      b.eta2.assign(size_t(std::max(L, 1)) * C, -1);
      b.eta3.assign(size_t(std::max(L, 1)) * C, -1);
      b.eta4.assign(size_t(std::max(L, 1)) * C, -1);
      b.eta5.assign(size_t(std::max(L, 1)) * C, -1);
      if (flow)
        for (int c = 0; c < C; ++c) {
          if (!m.admissible[size_t(c)]) continue;
          const Configuration& cfg = configs[size_t(c)];
          const LinExpr gate = term(u.o[size_t(t)][size_t(c)], 1.0);
          for (int l = 0; l < L; ++l) {
            if (!cfg.line_active[size_t(l)]) continue;
            const std::string suffix = "_l" + std::to_string(l) + "_c" + std::to_string(c);
            VarId e2 = ir.add_var(pre + "eta2" + suffix, VarKind::Continuous, 0, kInf);
            VarId e3 = ir.add_var(pre + "eta3" + suffix, VarKind::Continuous, 0, kInf);
            b.eta2[size_t(l) * C + c] = e2;
            b.eta3[size_t(l) * C + c] = e3;
            emit_product_sandwich(ir, e2, gate, term(k.agg2[size_t(l)], 1.0), m_agg,
                                  pre + "eta2" + suffix, "sl:eta", m.m_entries);
            emit_product_sandwich(ir, e3, gate, term(k.agg3[size_t(l)], 1.0), m_agg,
                                  pre + "eta3" + suffix, "sl:eta", m.m_entries);
            if (scheme == Scheme::Sla) {
              VarId e4 = ir.add_var(pre + "eta4" + suffix, VarKind::Continuous, 0, kInf);
              VarId e5 = ir.add_var(pre + "eta5" + suffix, VarKind::Continuous, 0, kInf);
              b.eta4[size_t(l) * C + c] = e4;
              b.eta5[size_t(l) * C + c] = e5;
              emit_product_sandwich(ir, e4, gate, term(k.mu4[size_t(l)], 1.0), m_dual,
                                    pre + "eta4" + suffix, "sl:eta", m.m_entries);
              emit_product_sandwich(ir, e5, gate, term(k.mu5[size_t(l)], 1.0), m_dual,
                                    pre + "eta5" + suffix, "sl:eta", m.m_entries);
            }
          }
        }

      // congestion price adjustment at one bus, blended over configurations
      auto lambda_at = [&](int bus) {
        LinExpr e;
        if (!flow) return e;
        for (int c = 0; c < C; ++c) {
          if (!m.admissible[size_t(c)]) continue;
          const Configuration& cfg = configs[size_t(c)];
          for (int l = 0; l < L; ++l) {
            const double sf = cfg.s(bus, l, L);
            if (sf == 0.0 || b.eta2[size_t(l) * C + c] < 0) continue;
            if (scheme == Scheme::Wcvar) {
              e.add(b.eta2[size_t(l) * C + c], sf * params.w[size_t(2 * l)]);
              e.add(b.eta3[size_t(l) * C + c], -sf * params.w[size_t(2 * l + 1)]);
            } else {
              e.add(b.eta2[size_t(l) * C + c], sf);
              e.add(b.eta3[size_t(l) * C + c], -sf);
              if (scheme == Scheme::Sla) {
                e.add(b.eta4[size_t(l) * C + c], sf);
                e.add(b.eta5[size_t(l) * C + c], -sf);
              }
            }
          }
        }
        return e;
      };

      // stationarity over quantities and curtailment (the tariff surcharge variable
      // shifts every cleared bid by the same amount, so it enters with coefficient one)
      const VarId D = u.surcharge[size_t(t)];
      for (size_t j = 0; j < np; ++j) {
        const BlockParticipant& bp = parts[j];
        const std::string js = std::to_string(j);
        LinExpr lam = lambda_at(bp.bus);
        switch (bp.kind) {
          case ParticipantKind::Generator: {
            LinExpr st = term(k.pi, -1.0);
            st.add(k.phi_hi[j], 1.0).add(k.phi_lo[j], -1.0);
            st += lam;
            st.add(D, 1.0);
            k.stationarity.push_back(
                ir.add_row(pre + "st_q" + js, st, RowSense::EQ, -bp.bid, "sl:stationarity"));
            break;
          }
          case ParticipantKind::Consumer: {
            LinExpr st = term(k.pi, 1.0);
            st.add(k.phi_hi[j], 1.0).add(k.phi_lo[j], -1.0);
            st -= lam;
            st.add(D, 1.0);
            k.stationarity.push_back(
                ir.add_row(pre + "st_q" + js, st, RowSense::EQ, bp.bid, "sl:stationarity"));
            break;
          }
          case ParticipantKind::WindFarm: {
            LinExpr st = term(k.pi, -1.0);
            st.add(k.phi_sch[j], 1.0);
            st += lam;
            st.add(D, 1.0);
            k.stationarity.push_back(
                ir.add_row(pre + "st_q" + js, st, RowSense::EQ, -bp.bid, "sl:stationarity"));
            LinExpr sc = term(k.phi_sch[j], 1.0);
            sc.add(k.phi_cur_hi[j], 1.0).add(k.phi_cur_lo[j], -1.0);
            k.stationarity.push_back(ir.add_row(pre + "st_cur" + js, sc, RowSense::EQ,
                                                -bp.curtail_cost, "sl:stationarity"));
            break;
          }
        }
      }

      // stationarity over the scheme's own variables (no configuration dependence)
      if (flow) {
        if (scheme == Scheme::Wcvar) {
          for (int i = 0; i < N; ++i) {
            LinExpr st = term(k.mu_alpha[size_t(i)], -1.0);
            st.add(k.mu1, 1.0 / epsN);
            for (int l = 0; l < L; ++l) {
              st.add(k.mu2[size_t(l) * N + i], -1.0);
              st.add(k.mu3[size_t(l) * N + i], -1.0);
            }
            k.stationarity.push_back(ir.add_row(pre + "st_a" + std::to_string(i), st,
                                                RowSense::EQ, 0.0, "sl:stationarity"));
          }
          LinExpr sb = term(k.mu1, amb.theta / amb.eps);
          for (int l = 0; l < L; ++l) sb.add(k.mu4[size_t(l)], -1.0).add(k.mu5[size_t(l)], -1.0);
          k.stationarity.push_back(
              ir.add_row(pre + "st_beta", sb, RowSense::EQ, 0.0, "sl:stationarity"));
          LinExpr stt = term(k.mu1, 1.0);
          for (int l = 0; l < L; ++l)
            stt.add(k.agg2[size_t(l)], -1.0).add(k.agg3[size_t(l)], -1.0);
          k.stationarity.push_back(
              ir.add_row(pre + "st_tau", stt, RowSense::EQ, 0.0, "sl:stationarity"));
        } else {
          LinExpr su = term(k.mu_u, -1.0);
          su.add(k.mu1, -epsN);
          for (int l = 0; l < L; ++l)
            for (int i = 0; i < N; ++i) {
              su.add(k.mu2[size_t(l) * N + i], 1.0);
              su.add(k.mu3[size_t(l) * N + i], 1.0);
            }
          if (scheme == Scheme::Sla)
            for (int l = 0; l < L; ++l)
              su.add(k.mu4[size_t(l)], 1.0).add(k.mu5[size_t(l)], 1.0);
          k.stationarity.push_back(
              ir.add_row(pre + "st_u", su, RowSense::EQ, 0.0, "sl:stationarity"));
          for (int i = 0; i < N; ++i) {
            LinExpr sv = term(k.mu_v[size_t(i)], -1.0);
            sv.add(k.mu1, 1.0);
            for (int l = 0; l < L; ++l) {
              sv.add(k.mu2[size_t(l) * N + i], -1.0);
              sv.add(k.mu3[size_t(l) * N + i], -1.0);
            }
            k.stationarity.push_back(ir.add_row(pre + "st_v" + std::to_string(i), sv,
                                                RowSense::EQ, 0.0, "sl:stationarity"));
          }
        }
      }

      // primal feasibility of the clearing's chance-constraint scheme, blended over the
      // investment decisions, paired with its duals
      for (size_t j = 0; j < np; ++j) {
        const BlockParticipant& bp = parts[j];
        if (bp.kind == ParticipantKind::WindFarm) {
          m.pairs.push_back({term(b.cur[j], 1.0), k.phi_cur_lo[j], "curtail"});
          LinExpr ub(bp.q_max);
          ub.add(b.cur[j], -1.0);
          m.pairs.push_back({ub, k.phi_cur_hi[j], "curtail"});
        } else {
          m.pairs.push_back({term(b.q[j], 1.0), k.phi_lo[j], "quantity"});
          LinExpr ub(bp.q_max);
          ub.add(b.q[j], -1.0);
          m.pairs.push_back({ub, k.phi_hi[j], "quantity"});
        }
      }
      if (flow) {
        if (scheme == Scheme::Wcvar) {
          LinExpr budget = term(b.tau, 1.0);
          budget.add(b.beta, amb.theta / amb.eps);
          for (int i = 0; i < N; ++i) budget.add(b.alpha[size_t(i)], 1.0 / epsN);
          RowId brow = ir.add_row(pre + "cc:budget", budget, RowSense::LE, 0.0, "sl:budget");
          for (int i = 0; i < N; ++i)
            m.pairs.push_back(
                {term(b.alpha[size_t(i)], 1.0), k.mu_alpha[size_t(i)], "scheme_scalar"});
          m.pairs.push_back({row_slack(ir, brow), k.mu1, "budget"});
          for (int l = 0; l < L; ++l) {
            const double w2 = params.w[size_t(2 * l)], w3 = params.w[size_t(2 * l + 1)];
            const std::string ls = std::to_string(l);
            for (int i = 0; i < N; ++i) {
              const std::string key = ls + "_" + std::to_string(i);
              LinExpr up = term(b.alpha[size_t(i)], 1.0);
              up.add(b.tau, 1.0);
              up -= scaled(flow_expr[size_t(l)], w2);
              up += scaled(cap_expr(t, l), w2);
              up -= scaled(xihat(l, i), w2);
              RowId ru = ir.add_row(pre + "cc:up_" + key, up, RowSense::GE, 0.0, "sl:sample");
              m.pairs.push_back({row_slack(ir, ru), k.mu2[size_t(l) * N + i], "sample"});
              LinExpr lo = term(b.alpha[size_t(i)], 1.0);
              lo.add(b.tau, 1.0);
              lo += scaled(flow_expr[size_t(l)], w3);
              lo += scaled(cap_expr(t, l), w3);
              lo += scaled(xihat(l, i), w3);
              RowId rl = ir.add_row(pre + "cc:dn_" + key, lo, RowSense::GE, 0.0, "sl:sample");
              m.pairs.push_back({row_slack(ir, rl), k.mu3[size_t(l) * N + i], "sample"});
            }
            RowId nu = ir.add_row(pre + "cc:norm_up" + ls, term(b.beta, 1.0), RowSense::GE, w2,
                                  "sl:dualnorm");
            m.pairs.push_back({row_slack(ir, nu), k.mu4[size_t(l)], "threshold"});
            RowId nl = ir.add_row(pre + "cc:norm_dn" + ls, term(b.beta, 1.0), RowSense::GE, w3,
                                  "sl:dualnorm");
            m.pairs.push_back({row_slack(ir, nl), k.mu5[size_t(l)], "threshold"});
          }
        } else {
          LinExpr budget = term(b.s_var, epsN);
          for (int i = 0; i < N; ++i) budget.add(b.r[size_t(i)], -1.0);
          RowId brow =
              ir.add_row(pre + "cc:budget", budget, RowSense::GE, amb.theta * N, "sl:budget");
          m.pairs.push_back({term(b.s_var, 1.0), k.mu_u, "scheme_scalar"});
          for (int i = 0; i < N; ++i)
            m.pairs.push_back({term(b.r[size_t(i)], 1.0), k.mu_v[size_t(i)], "scheme_scalar"});
          m.pairs.push_back({row_slack(ir, brow), k.mu1, "budget"});
          for (int l = 0; l < L; ++l) {
            const std::string ls = std::to_string(l);
            for (int i = 0; i < N; ++i) {
              const double kap = params.kappa[size_t(i)];
              const std::string key = ls + "_" + std::to_string(i);
              LinExpr up = scaled(flow_expr[size_t(l)], -kap);
              up += scaled(cap_expr(t, l), kap);
              up -= scaled(xihat(l, i), kap);
              up.add(b.s_var, -1.0).add(b.r[size_t(i)], 1.0);
              RowId ru = ir.add_row(pre + "cc:up_" + key, up, RowSense::GE, 0.0, "sl:sample");
              m.pairs.push_back({row_slack(ir, ru), k.mu2[size_t(l) * N + i], "sample"});
              LinExpr lo = scaled(flow_expr[size_t(l)], kap);
              lo += scaled(cap_expr(t, l), kap);
              lo += scaled(xihat(l, i), kap);
              lo.add(b.s_var, -1.0).add(b.r[size_t(i)], 1.0);
              RowId rl = ir.add_row(pre + "cc:dn_" + key, lo, RowSense::GE, 0.0, "sl:sample");
              m.pairs.push_back({row_slack(ir, rl), k.mu3[size_t(l) * N + i], "sample"});
            }
            if (scheme == Scheme::Sla) {
              LinExpr up = scaled(flow_expr[size_t(l)], -1.0);
              up += cap_expr(t, l);
              up += qhat(l, true);
              up.add(b.s_var, -1.0);
              RowId ru =
                  ir.add_row(pre + "cc:str_up" + ls, up, RowSense::GE, 0.0, "sl:strengthen");
              m.pairs.push_back({row_slack(ir, ru), k.mu4[size_t(l)], "threshold"});
              LinExpr lo = flow_expr[size_t(l)];
              lo += cap_expr(t, l);
              lo += qhat(l, false);
              lo.add(b.s_var, -1.0);
              RowId rl =
                  ir.add_row(pre + "cc:str_dn" + ls, lo, RowSense::GE, 0.0, "sl:strengthen");
              m.pairs.push_back({row_slack(ir, rl), k.mu5[size_t(l)], "threshold"});
            }
          }
        }
      }
      m.blocks.push_back(std::move(b));
    }

  // ---- cleared volume per period (all participants' scheduled quantities) ----
  for (int t = 0; t < T; ++t) {
    LinExpr def = term(u.volume[size_t(t)], 1.0);
    for (int s = 0; s < S; ++s)
      for (VarId q : m.block(t, s).q) def.add(q, -1.0);
    ir.add_row("ul:vol_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:volume");
  }

  // ---- merchandising surplus rows (price-quantity products eliminated) ----
  for (int t = 0; t < T; ++t) {
    LinExpr def = term(u.ms[size_t(t)], 1.0);
    def.add(u.vc[size_t(t)], 1.0);
    for (int s = 0; s < S; ++s) {
      const PlannerBlockIds& blk = m.block(t, s);
      MsBlockRefs refs;
      refs.participants = &m.participants[size_t(t) * S + s];
      refs.q = blk.q;
      refs.cur = blk.cur;
      refs.phi_hi = blk.kkt.phi_hi;
      refs.phi_sch = blk.kkt.phi_sch;
      refs.phi_cur_hi = blk.kkt.phi_cur_hi;
      def -= scaled(substitute_ms(refs), m.psi_mgbp);
    }
    ir.add_row("ul:ms_t" + std::to_string(t), def, RowSense::EQ, 0.0, "ul:ms");
  }

  // ---- objective: discounted market welfare at submitted bids minus investment ----
  LinExpr obj;
  for (int t = 0; t < T; ++t) {
    const double disc = net.discount(t);
    for (int s = 0; s < S; ++s) {
      const PlannerBlockIds& blk = m.block(t, s);
      const auto& parts = m.participants[size_t(t) * S + s];
      for (size_t j = 0; j < parts.size(); ++j) {
        const BlockParticipant& bp = parts[j];
        obj.add(blk.q[j], disc * m.psi_mgbp * kind_sign(bp.kind) * -1.0 * bp.bid);
        if (blk.cur[j] >= 0) obj.add(blk.cur[j], -disc * m.psi_mgbp * bp.curtail_cost);
      }
    }
    obj.add(u.invest_cost[size_t(t)], -disc);
  }
  ir.set_objective(ObjSense::Max, obj);

  // ---- complementarity, then the tariff-revenue products ----
  m.comp_binaries = linearize_complementarity(ir, m.pairs, reg, "slc:");
  for (size_t n = 0; n < m.pairs.size(); ++n) {
    const KktPair& pr = m.pairs[n];
    const VarId y = m.comp_binaries[n];
    LinExpr off(1.0);
    off.add(y, -1.0);
    m.m_entries.push_back({"slc:" + pr.family + ":slack" + std::to_string(n), pr.slack,
                           term(y, 1.0), reg.primal_for(pr.family)});
    m.m_entries.push_back({"slc:" + pr.family + ":dual" + std::to_string(n),
                           term(pr.dual, 1.0), off, reg.dual_for(pr.family)});
  }

  m.products_pending = !m.pending_products.empty();
  if (m.products_pending && !opt.defer_bilinear)
    linearize_bilinear_terms(m, opt.bilinear_mode);
  return m;
}

// --------------------------------------------------------------------------------------
// Tariff-revenue products
// --------------------------------------------------------------------------------------

void linearize_bilinear_terms(SingleLevelModel& m, BilinearMode mode) {
  if (!m.products_pending)
    throw std::logic_error("tariff-revenue products are already resolved (nothing pending)");
  ModelIR& ir = m.ir;

  if (mode == BilinearMode::Passthrough) {
    for (const PendingRevenueProduct& p : m.pending_products) {
      RowId row = ir.add_row("ul:vcdef_" + p.label, term(p.revenue, 1.0), RowSense::EQ, 0.0,
                             "ul:vc");
      for (VarId eta : p.eta) ir.add_row_bilinear(row, eta, p.volume, -p.scale);
    }
  } else if (mode == BilinearMode::BinaryExpansion) {
    const int bits = m.net.tariff.expansion_bits;
    auto tariff_index = [&](int line) {
      auto it = std::find(m.upper.tariff_lines.begin(), m.upper.tariff_lines.end(), line);
      return size_t(it - m.upper.tariff_lines.begin());
    };
    for (const PendingRevenueProduct& p : m.pending_products) {
      if (p.tau_fixed >= 0.0) {
        // pinned tariff: a single gated copy of the volume suffices, no grid needed
        const std::string name = "ul:zeta_" + p.label;
        VarId zeta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
        emit_product_sandwich(ir, zeta, p.gate, term(p.volume, 1.0), p.volume_cap, name,
                              "ul:eta", m.m_entries);
        LinExpr def = term(p.revenue, 1.0);
        def.add(zeta, -p.scale * p.tau_fixed);
        ir.add_row("ul:vcdef_" + p.label, def, RowSense::EQ, 0.0, "ul:vc");
        continue;
      }
      if (bits <= 0)
        throw std::invalid_argument("tariff grid needs a positive bit width");
      const size_t li = tariff_index(p.line);
      const double step =
          m.net.tariff.tau_upper_gbp_per_mwh / double((1 << bits) - 1);
      if (m.upper.tau_bits[li].empty()) {
        LinExpr grid = term(m.upper.tau_v[li], 1.0);
        for (int bb = 0; bb < bits; ++bb) {
          VarId y = ir.add_var("ul:bit_l" + std::to_string(p.line) + "_b" + std::to_string(bb),
                               VarKind::Binary, 0.0, 1.0);
          m.upper.tau_bits[li].push_back(y);
          grid.add(y, -step * double(1 << bb));
        }
        ir.add_row("ul:grid_l" + std::to_string(p.line), grid, RowSense::EQ, 0.0, "ul:tariff");
      }
      LinExpr def = term(p.revenue, 1.0);
      for (int bb = 0; bb < bits; ++bb) {
        const VarId y = m.upper.tau_bits[li][size_t(bb)];
        const std::string suffix = "_" + p.label + "_b" + std::to_string(bb);
        // w = bit AND gate, exact at solutions since both sides are 0/1-valued
        VarId w = ir.add_var("ul:and" + suffix, VarKind::Continuous, 0.0, 1.0);
        LinExpr r1 = term(w, 1.0);
        r1.add(y, -1.0);
        ir.add_row("ul:and_bit" + suffix, r1, RowSense::LE, 0.0, "ul:eta");
        LinExpr r2 = term(w, 1.0);
        r2 -= p.gate;
        ir.add_row("ul:and_gate" + suffix, r2, RowSense::LE, 0.0, "ul:eta");
        LinExpr r3 = term(y, 1.0);
        r3 += p.gate;
        r3.add(w, -1.0);
        ir.add_row("ul:and_both" + suffix, r3, RowSense::LE, 1.0, "ul:eta");

        const std::string name = "ul:zeta" + suffix;
        VarId zeta = ir.add_var(name, VarKind::Continuous, 0.0, kInf);
        emit_product_sandwich(ir, zeta, term(w, 1.0), term(p.volume, 1.0), p.volume_cap, name,
                              "ul:eta", m.m_entries);
        def.add(zeta, -p.scale * step * double(1 << bb));
      }
      ir.add_row("ul:vcdef_" + p.label, def, RowSense::EQ, 0.0, "ul:vc");
    }
  } else {
    throw std::invalid_argument("unknown bilinear mode");
  }
  m.products_pending = false;
  m.mode = mode;
}

// --------------------------------------------------------------------------------------
// Solving and reporting
// --------------------------------------------------------------------------------------

PlannerSolution solve_single_level(const SingleLevelModel& m, SolverBackend& backend,
                                   const SolverConfig& cfg) {
  if (m.products_pending)
    throw std::logic_error(
        "model still carries unresolved tariff-revenue products; call "
        "linearize_bilinear_terms first");
  if (m.ir.has_bilinear())
    throw std::invalid_argument(
        "model was built in passthrough mode and carries bilinear rows; the bundled solver "
        "cannot handle those (export the model or rebuild with binary-expansion)");

  SolveResult r = solve_certified(backend, m.ir, cfg);
  PlannerSolution sol;
  sol.status = r.status;
  sol.message = r.message;
  sol.solve_time_s = r.solve_time_s;
  sol.incumbents = r.incumbents;
  sol.objective_mgbp = r.objective;
  if (!r.has_solution()) return sol;
  sol.x = r.x;
  const std::vector<double>& x = sol.x;
  const UpperIds& u = m.upper;
  const auto& factors = m.net.recon.factors;

  for (int t = 0; t < m.n_periods; ++t) {
    int best = -1;
    double best_v = -1;
    for (size_t c = 0; c < m.configs.size(); ++c) {
      const double v = x[size_t(u.o[size_t(t)][c])];
      if (v > best_v) {
        best_v = v;
        best = int(c);
      }
    }
    sol.plan.config_ids.push_back(best);
  }

  for (int t = 0; t < m.n_periods; ++t)
    for (size_t ri = 0; ri < u.recon_lines.size(); ++ri) {
      const TransmissionLine& ln = m.net.lines[size_t(u.recon_lines[ri])];
      for (size_t j = 1; j < factors.size(); ++j) {
        if (x[size_t(u.b_r[size_t(t)][ri][j - 1])] <= 0.5) continue;
        sol.plan.recon.push_back({ln.id, t, factors[j]});
        const auto* cost = m.net.recon.cost_for(ln.id);
        const double added = factors[j] * ln.capacity_mw;
        sol.actions.push_back({t, ln.id, "reconductor", added,
                               cost->k_fix_mgbp + cost->k_var_mgbp_per_mw * added});
      }
    }

  for (size_t e = 0; e < u.corridors.size(); ++e) {
    const TransmissionLine& ln = m.net.lines[size_t(u.corridors[e])];
    int prev = 0;
    for (int t = 0; t < m.n_periods; ++t) {
      const int circ = m.configs[size_t(sol.plan.config_ids[size_t(t)])].circuits[e];
      if (circ > prev)
        sol.actions.push_back({t, ln.id, "parallel", (circ - prev) * ln.candidate_capacity_mw,
                               (circ - prev) * ln.expansion_cost_mgbp});
      prev = circ;
    }
  }
  std::sort(sol.actions.begin(), sol.actions.end(),
            [](const InvestmentAction& a, const InvestmentAction& b) {
              return a.t != b.t ? a.t < b.t : a.line < b.line;
            });

  for (size_t li = 0; li < u.tariff_lines.size(); ++li)
    sol.plan.tau_v[m.net.lines[size_t(u.tariff_lines[li])].id] = x[size_t(u.tau_v[li])];
  sol.plan.tau_c = x[size_t(u.tau_c)];

  for (int t = 0; t < m.n_periods; ++t) {
    sol.ms_mgbp.push_back(x[size_t(u.ms[size_t(t)])]);
    sol.vc_mgbp.push_back(x[size_t(u.vc[size_t(t)])]);
    sol.cc_mgbp.push_back(x[size_t(u.cc[size_t(t)])]);
    sol.invest_mgbp.push_back(x[size_t(u.invest_cost[size_t(t)])]);
    sol.adequacy_mgbp +=
        m.net.discount(t) * (sol.ms_mgbp.back() + sol.vc_mgbp.back() + sol.cc_mgbp.back() -
                             sol.invest_mgbp.back());
  }
  return sol;
}

BigMReport verify_big_m(const SingleLevelModel& m, const std::vector<double>& x, double margin) {
  BigMReport rep;
  for (const BigMEntry& e : m.m_entries) {
    if (eval_expr(e.gate, x) <= 0.5) continue;  // bound not in force for this entry
    const double v = eval_expr(e.value, x);
    const double ratio = e.cap > 0 ? v / e.cap : 0.0;
    rep.worst_ratio = std::max(rep.worst_ratio, ratio);
    if (ratio > margin) rep.flagged.push_back({e.label, v, e.cap, ratio});
  }
  return rep;
}

std::string investment_csv(const SingleLevelModel& m, const PlannerSolution& sol) {
  (void)m;
  std::ostringstream out;
  out.precision(10);
  out << "t,corridor,action,added_mw,cost_mgbp\n";
  for (const InvestmentAction& a : sol.actions)
    out << a.t << "," << a.line << "," << a.action << "," << a.added_mw << "," << a.cost_mgbp
        << "\n";
  return out.str();
}

std::string tariff_csv(const SingleLevelModel& m, const PlannerSolution& sol) {
  std::ostringstream out;
  out.precision(10);
  out << "line,tau_v,tau_c\n";
  for (int l : m.upper.tariff_lines) {
    const int id = m.net.lines[size_t(l)].id;
    const auto it = sol.plan.tau_v.find(id);
    out << id << "," << (it == sol.plan.tau_v.end() ? 0.0 : it->second) << "," << sol.plan.tau_c
        << "\n";
  }
  return out.str();
}

}  // namespace drtep
