#include "drtep/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace drtep {

using nlohmann::json;

std::vector<int> NetworkCase::expandable_lines() const {
  std::vector<int> out;
  for (const auto& l : lines)
    if (l.expandable) out.push_back(l.id);
  return out;
}

std::vector<int> NetworkCase::reconductorable_lines() const {
  std::vector<int> out;
  for (const auto& l : lines)
    if (l.reconductorable) out.push_back(l.id);
  return out;
}

std::vector<int> NetworkCase::participants_at(int bus, ParticipantKind kind) const {
  std::vector<int> out;
  for (const auto& p : participants)
    if (p.bus == bus && p.kind == kind) out.push_back(p.id);
  return out;
}

std::vector<int> NetworkCase::participants_of(ParticipantKind kind) const {
  std::vector<int> out;
  for (const auto& p : participants)
    if (p.kind == kind) out.push_back(p.id);
  return out;
}

bool NetworkCase::bus_hosts_participant(int bus) const {
  for (const auto& p : participants)
    if (p.bus == bus) return true;
  return false;
}

double NetworkCase::demand_scale(int t) const { return std::pow(1.0 + horizon.demand_growth, t); }

double NetworkCase::consumer_max_mw(const Participant& p, int t) const {
  return p.kind == ParticipantKind::Consumer ? p.qty_max_mw * demand_scale(t) : p.qty_max_mw;
}

double NetworkCase::discount(int t) const { return std::pow(1.0 + horizon.discount_rate, -t); }

namespace {

[[noreturn]] void schema_error(const std::string& what) {
  throw std::runtime_error("case schema error: " + what);
}

template <typename T>
T req(const json& j, const char* key) {
  if (!j.contains(key)) schema_error(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const std::exception& e) {
    schema_error(std::string("bad field '") + key + "': " + e.what());
  }
}

template <typename T>
T opt(const json& j, const char* key, T def) {
  return j.contains(key) ? j.at(key).get<T>() : def;
}

void validate(const NetworkCase& c) {
  const int nb = int(c.buses.size());
  if (nb == 0) schema_error("no buses");
  for (int i = 0; i < nb; ++i)
    if (c.buses[size_t(i)].id != i) schema_error("bus ids must be contiguous from 0");
  int slack_count = 0;
  for (const auto& b : c.buses) slack_count += b.slack ? 1 : 0;
  if (slack_count > 1) schema_error("more than one slack bus");

  std::set<int> line_ids;
  for (size_t i = 0; i < c.lines.size(); ++i) {
    const auto& l = c.lines[i];
    if (l.id != int(i)) schema_error("line ids must be contiguous from 0");
    if (!line_ids.insert(l.id).second) schema_error("duplicate line id");
    if (l.from < 0 || l.from >= nb || l.to < 0 || l.to >= nb || l.from == l.to)
      schema_error("line " + std::to_string(l.id) + " endpoints invalid");
    if (l.capacity_mw > 0 && l.reactance <= 0)
      schema_error("line " + std::to_string(l.id) + " needs a positive reactance");
    if (l.capacity_mw < 0) schema_error("negative capacity");
    if (l.capacity_mw == 0 && !l.expandable)
      schema_error("line " + std::to_string(l.id) + " has no circuit and is not expandable");
    if (l.expandable) {
      if (l.candidate_capacity_mw <= 0 || l.candidate_reactance <= 0 || l.max_circuits <= 0)
        schema_error("expandable line " + std::to_string(l.id) + " needs candidate data");
    }
  }
  for (const auto& lc : c.recon.lines) {
    if (lc.line_id < 0 || lc.line_id >= int(c.lines.size()))
      schema_error("reconductoring references unknown line");
    if (!c.lines[size_t(lc.line_id)].reconductorable)
      schema_error("reconductoring cost on a non-reconductorable line");
  }
  for (int lid : c.reconductorable_lines()) {
    if (!c.recon.cost_for(lid))
      schema_error("reconductorable line " + std::to_string(lid) + " lacks cost data");
    if (c.lines[size_t(lid)].capacity_mw <= 0)
      schema_error("reconductorable line " + std::to_string(lid) + " has no existing circuit");
  }
  if (!c.recon.lines.empty()) {
    if (c.recon.factors.empty() || c.recon.factors.front() != 0.0)
      schema_error("reconductoring factors must start at 0");
    for (size_t i = 1; i < c.recon.factors.size(); ++i)
      if (c.recon.factors[i] <= c.recon.factors[i - 1])
        schema_error("reconductoring factors must be ascending");
  }

  const auto& h = c.horizon;
  if (h.periods < 1 || h.periods > 4) schema_error("periods must be in 1..4");
  if (h.operating_conditions < 1) schema_error("operating_conditions must be >= 1");
  if (h.hours_per_period <= 0) schema_error("hours_per_period must be positive");
  if (h.discount_rate < 0 || h.demand_growth < -1) schema_error("bad horizon rates");
  if (c.tariff.rho_vc < 0) schema_error("rho_vc must be nonnegative");
  if (c.tariff.tau_upper_gbp_per_mwh < 0 || c.tariff.expansion_bits < 1 ||
      c.tariff.expansion_bits > 20)
    schema_error("bad tariff policy");

  for (size_t i = 0; i < c.participants.size(); ++i) {
    const auto& p = c.participants[i];
    if (p.id != int(i)) schema_error("participant ids must be contiguous from 0");
    if (p.bus < 0 || p.bus >= nb) schema_error("participant on unknown bus");
    if (p.qty_max_mw < p.qty_min_mw || p.qty_min_mw < 0) schema_error("participant bounds invalid");
    if (p.kind == ParticipantKind::WindFarm) {
      if (int(p.forecast_mw.size()) != h.periods)
        schema_error("wind forecast must cover every period");
      for (const auto& row : p.forecast_mw) {
        if (int(row.size()) != h.operating_conditions)
          schema_error("wind forecast must cover every operating condition");
        for (double f : row)
          if (f < 0 || f > p.qty_max_mw + 1e-9)
            schema_error("wind forecast outside [0, capacity]");
      }
    }
  }

  // reachability with every candidate circuit built: a participant-hosting bus that is
  // still cut off can never clear the market, so the case is rejected outright
  std::vector<std::vector<int>> adj(static_cast<size_t>(nb));
  for (const auto& l : c.lines) {
    if (l.capacity_mw > 0 || l.expandable) {
      adj[size_t(l.from)].push_back(l.to);
      adj[size_t(l.to)].push_back(l.from);
    }
  }
  std::vector<char> seen(static_cast<size_t>(nb), 0);
  std::queue<int> q;
  q.push(c.slack_bus);
  seen[size_t(c.slack_bus)] = 1;
  while (!q.empty()) {
    int b = q.front();
    q.pop();
    for (int n : adj[size_t(b)])
      if (!seen[size_t(n)]) {
        seen[size_t(n)] = 1;
        q.push(n);
      }
  }
  for (const auto& p : c.participants)
    if (!seen[size_t(p.bus)])
      schema_error("bus " + std::to_string(p.bus) +
                   " hosts a participant but no corridor can ever reach it");
}

}  // namespace

NetworkCase load_case(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    schema_error(std::string("invalid JSON: ") + e.what());
  }
  NetworkCase c;
  c.schema_version = req<int>(j, "schema_version");
  if (c.schema_version != 1) schema_error("unsupported schema_version");
  c.name = opt<std::string>(j, "name", "case");

  for (const auto& jb : req<json>(j, "buses")) {
    Bus b;
    b.id = req<int>(jb, "id");
    b.slack = opt<bool>(jb, "slack", false);
    b.label = opt<std::string>(jb, "label", "");
    c.buses.push_back(b);
  }
  std::sort(c.buses.begin(), c.buses.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
  c.slack_bus = 0;
  for (const auto& b : c.buses)
    if (b.slack) c.slack_bus = b.id;

  for (const auto& jl : req<json>(j, "lines")) {
    TransmissionLine l;
    l.id = req<int>(jl, "id");
    l.from = req<int>(jl, "from");
    l.to = req<int>(jl, "to");
    l.reactance = req<double>(jl, "reactance");
    l.capacity_mw = req<double>(jl, "capacity_mw");
    l.reconductorable = opt<bool>(jl, "reconductorable", false);
    c.lines.push_back(l);
  }
  std::sort(c.lines.begin(), c.lines.end(),
            [](const TransmissionLine& a, const TransmissionLine& b) { return a.id < b.id; });

  if (j.contains("corridors")) {
    for (const auto& jc : j.at("corridors")) {
      int line_id = req<int>(jc, "line_id");
      if (line_id < 0 || line_id >= int(c.lines.size()))
        schema_error("corridor references unknown line");
      TransmissionLine& l = c.lines[size_t(line_id)];
      l.expandable = true;
      l.candidate_capacity_mw = req<double>(jc, "candidate_capacity_mw");
      l.candidate_reactance = req<double>(jc, "candidate_reactance");
      l.max_circuits = req<int>(jc, "max_circuits");
      l.expansion_cost_mgbp = req<double>(jc, "cost_mgbp_per_circuit");
    }
  }

  if (j.contains("reconductoring")) {
    const auto& jr = j.at("reconductoring");
    c.recon.factors = req<std::vector<double>>(jr, "factors");
    for (const auto& jl : req<json>(jr, "lines")) {
      ReconductoringPolicy::LineCost lc;
      lc.line_id = req<int>(jl, "line_id");
      lc.k_fix_mgbp = req<double>(jl, "k_fix_mgbp");
      lc.k_var_mgbp_per_mw = req<double>(jl, "k_var_mgbp_per_mw");
      c.recon.lines.push_back(lc);
      c.lines[size_t(lc.line_id)].reconductorable = true;
    }
  }

  for (const auto& jp : req<json>(j, "participants")) {
    Participant p;
    p.id = req<int>(jp, "id");
    std::string kind = req<std::string>(jp, "kind");
    if (kind == "generator")
      p.kind = ParticipantKind::Generator;
    else if (kind == "consumer")
      p.kind = ParticipantKind::Consumer;
    else if (kind == "windfarm")
      p.kind = ParticipantKind::WindFarm;
    else
      schema_error("unknown participant kind: " + kind);
    p.bus = req<int>(jp, "bus");
    p.qty_min_mw = opt<double>(jp, "qty_min_mw", 0.0);
    p.qty_max_mw = req<double>(jp, "qty_max_mw");
    p.bid_gbp_per_mwh = opt<double>(jp, "bid_gbp_per_mwh", 0.0);
    if (p.kind == ParticipantKind::WindFarm) {
      p.curtailment_cost_gbp_per_mwh = req<double>(jp, "curtailment_cost_gbp_per_mwh");
      p.forecast_mw = req<std::vector<std::vector<double>>>(jp, "forecast_mw");
    }
    c.participants.push_back(p);
  }
  std::sort(c.participants.begin(), c.participants.end(),
            [](const Participant& a, const Participant& b) { return a.id < b.id; });

  const auto& jh = req<json>(j, "horizon");
  c.horizon.periods = req<int>(jh, "periods");
  c.horizon.operating_conditions = req<int>(jh, "operating_conditions");
  c.horizon.hours_per_period = req<double>(jh, "hours_per_period");
  c.horizon.discount_rate = req<double>(jh, "discount_rate");
  c.horizon.demand_growth = req<double>(jh, "demand_growth");

  if (j.contains("tariff_policy")) {
    const auto& jt = j.at("tariff_policy");
    c.tariff.rho_vc = opt<double>(jt, "rho_vc", 1.0);
    c.tariff.tau_upper_gbp_per_mwh = opt<double>(jt, "tau_upper_gbp_per_mwh", 12.7);
    c.tariff.expansion_bits = opt<int>(jt, "expansion_bits", 7);
    c.tariff.delta_default = opt<double>(jt, "delta", 1.0);
  }

  if (j.contains("slack_bus")) c.slack_bus = j.at("slack_bus").get<int>();

  validate(c);
  return c;
}

NetworkCase load_case_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open case file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return load_case(ss.str());
}

std::string save_case(const NetworkCase& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["name"] = c.name;
  j["slack_bus"] = c.slack_bus;
  for (const auto& b : c.buses) {
    json jb{{"id", b.id}};
    if (b.slack) jb["slack"] = true;
    if (!b.label.empty()) jb["label"] = b.label;
    j["buses"].push_back(jb);
  }
  for (const auto& l : c.lines) {
    json jl{{"id", l.id},
            {"from", l.from},
            {"to", l.to},
            {"reactance", l.reactance},
            {"capacity_mw", l.capacity_mw}};
    if (l.reconductorable) jl["reconductorable"] = true;
    j["lines"].push_back(jl);
  }
  j["corridors"] = json::array();
  for (const auto& l : c.lines)
    if (l.expandable)
      j["corridors"].push_back({{"line_id", l.id},
                                {"candidate_capacity_mw", l.candidate_capacity_mw},
                                {"candidate_reactance", l.candidate_reactance},
                                {"max_circuits", l.max_circuits},
                                {"cost_mgbp_per_circuit", l.expansion_cost_mgbp}});
  if (!c.recon.lines.empty()) {
    j["reconductoring"]["factors"] = c.recon.factors;
    for (const auto& lc : c.recon.lines)
      j["reconductoring"]["lines"].push_back({{"line_id", lc.line_id},
                                              {"k_fix_mgbp", lc.k_fix_mgbp},
                                              {"k_var_mgbp_per_mw", lc.k_var_mgbp_per_mw}});
  }
  for (const auto& p : c.participants) {
    json jp{{"id", p.id},
            {"bus", p.bus},
            {"qty_min_mw", p.qty_min_mw},
            {"qty_max_mw", p.qty_max_mw},
            {"bid_gbp_per_mwh", p.bid_gbp_per_mwh}};
    switch (p.kind) {
      case ParticipantKind::Generator: jp["kind"] = "generator"; break;
      case ParticipantKind::Consumer: jp["kind"] = "consumer"; break;
      case ParticipantKind::WindFarm:
        jp["kind"] = "windfarm";
        jp["curtailment_cost_gbp_per_mwh"] = p.curtailment_cost_gbp_per_mwh;
        jp["forecast_mw"] = p.forecast_mw;
        break;
    }
    j["participants"].push_back(jp);
  }
  j["horizon"] = {{"periods", c.horizon.periods},
                  {"operating_conditions", c.horizon.operating_conditions},
                  {"hours_per_period", c.horizon.hours_per_period},
                  {"discount_rate", c.horizon.discount_rate},
                  {"demand_growth", c.horizon.demand_growth}};
  j["tariff_policy"] = {{"rho_vc", c.tariff.rho_vc},
                        {"tau_upper_gbp_per_mwh", c.tariff.tau_upper_gbp_per_mwh},
                        {"expansion_bits", c.tariff.expansion_bits},
                        {"delta", c.tariff.delta_default}};
  return j.dump(2) + "\n";
}

void save_case_file(const NetworkCase& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << save_case(c);
}

std::vector<double> compute_ptdf(const NetworkCase& c, const std::vector<int>& circuits) {
  const int nb = int(c.buses.size());
  const int nl = int(c.lines.size());
  auto expandable = c.expandable_lines();
  if (circuits.size() != expandable.size())
    throw std::invalid_argument("compute_ptdf: circuit vector does not match corridors");

  std::vector<double> suscept(size_t(nl), 0.0);
  for (int l = 0; l < nl; ++l) {
    const auto& line = c.lines[size_t(l)];
    if (line.capacity_mw > 0) suscept[size_t(l)] += 1.0 / line.reactance;
  }
  for (size_t k = 0; k < expandable.size(); ++k) {
    const auto& line = c.lines[size_t(expandable[k])];
    if (circuits[k] < 0 || circuits[k] > line.max_circuits)
      throw std::invalid_argument("compute_ptdf: circuit count out of range");
    suscept[size_t(expandable[k])] += double(circuits[k]) / line.candidate_reactance;
  }

  // slack component under this circuit pattern
  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<size_t>(nb));  // (neighbor, line)
  for (int l = 0; l < nl; ++l)
    if (suscept[size_t(l)] > 0) {
      adj[size_t(c.lines[size_t(l)].from)].push_back({c.lines[size_t(l)].to, l});
      adj[size_t(c.lines[size_t(l)].to)].push_back({c.lines[size_t(l)].from, l});
    }
  std::vector<char> connected(size_t(nb), 0);
  {
    std::queue<int> q;
    q.push(c.slack_bus);
    connected[size_t(c.slack_bus)] = 1;
    while (!q.empty()) {
      int b = q.front();
      q.pop();
      for (auto [n, l] : adj[size_t(b)])
        if (!connected[size_t(n)]) {
          connected[size_t(n)] = 1;
          q.push(n);
        }
    }
  }

  // reduced susceptance system over the slack component minus the slack itself
  std::vector<int> reduced_index(size_t(nb), -1);
  std::vector<int> reduced_buses;
  for (int b = 0; b < nb; ++b)
    if (connected[size_t(b)] && b != c.slack_bus) {
      reduced_index[size_t(b)] = int(reduced_buses.size());
      reduced_buses.push_back(b);
    }
  const int nr = int(reduced_buses.size());

  std::vector<double> ptdf(size_t(nb) * size_t(nl), 0.0);
  if (nr == 0) return ptdf;

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nr, nr);
  for (int l = 0; l < nl; ++l) {
    double y = suscept[size_t(l)];
    if (y <= 0) continue;
    int fi = reduced_index[size_t(c.lines[size_t(l)].from)];
    int ti = reduced_index[size_t(c.lines[size_t(l)].to)];
    if (fi >= 0) B(fi, fi) += y;
    if (ti >= 0) B(ti, ti) += y;
    if (fi >= 0 && ti >= 0) {
      B(fi, ti) -= y;
      B(ti, fi) -= y;
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
  if (!lu.isInvertible())
    throw std::runtime_error("singular reduced susceptance system (circuits " + [&] {
      std::string s;
      for (int m : circuits) s += std::to_string(m) + ",";
      return s;
    }() + ")");
  Eigen::MatrixXd Theta = lu.inverse();  // node angles per unit injection

  for (int b = 0; b < nb; ++b) {
    int bi = reduced_index[size_t(b)];
    if (bi < 0) continue;  // slack or islanded: zero column
    for (int l = 0; l < nl; ++l) {
      double y = suscept[size_t(l)];
      if (y <= 0) continue;
      int fi = reduced_index[size_t(c.lines[size_t(l)].from)];
      int ti = reduced_index[size_t(c.lines[size_t(l)].to)];
      if (!connected[size_t(c.lines[size_t(l)].from)]) continue;  // line outside slack component
      double th_f = fi >= 0 ? Theta(fi, bi) : 0.0;
      double th_t = ti >= 0 ? Theta(ti, bi) : 0.0;
      ptdf[size_t(b) * size_t(nl) + size_t(l)] = y * (th_f - th_t);
    }
  }
  return ptdf;
}

Configuration make_configuration(const NetworkCase& c, const std::vector<int>& circuits, int id) {
  Configuration cfg;
  cfg.id = id;
  cfg.circuits = circuits;
  cfg.ptdf = compute_ptdf(c, circuits);

  const int nb = int(c.buses.size());
  const int nl = int(c.lines.size());
  auto expandable = c.expandable_lines();
  std::vector<double> suscept(size_t(nl), 0.0);
  for (int l = 0; l < nl; ++l)
    if (c.lines[size_t(l)].capacity_mw > 0) suscept[size_t(l)] += 1.0 / c.lines[size_t(l)].reactance;
  for (size_t k = 0; k < expandable.size(); ++k)
    suscept[size_t(expandable[k])] +=
        double(circuits[k]) / c.lines[size_t(expandable[k])].candidate_reactance;

  cfg.line_active.assign(size_t(nl), 0);
  for (int l = 0; l < nl; ++l) cfg.line_active[size_t(l)] = suscept[size_t(l)] > 0;

  std::vector<std::vector<int>> adj(static_cast<size_t>(nb));
  for (int l = 0; l < nl; ++l)
    if (suscept[size_t(l)] > 0) {
      adj[size_t(c.lines[size_t(l)].from)].push_back(c.lines[size_t(l)].to);
      adj[size_t(c.lines[size_t(l)].to)].push_back(c.lines[size_t(l)].from);
    }
  cfg.bus_connected.assign(size_t(nb), 0);
  std::queue<int> q;
  q.push(c.slack_bus);
  cfg.bus_connected[size_t(c.slack_bus)] = 1;
  while (!q.empty()) {
    int b = q.front();
    q.pop();
    for (int n : adj[size_t(b)])
      if (!cfg.bus_connected[size_t(n)]) {
        cfg.bus_connected[size_t(n)] = 1;
        q.push(n);
      }
  }
  cfg.valid = true;
  for (const auto& p : c.participants)
    if (!cfg.bus_connected[size_t(p.bus)]) cfg.valid = false;
  return cfg;
}

std::vector<Configuration> enumerate_configurations(const NetworkCase& c) {
  auto expandable = c.expandable_lines();
  std::vector<int> maxes;
  for (int lid : expandable) maxes.push_back(c.lines[size_t(lid)].max_circuits);
  int total = 1;
  for (int m : maxes) total *= m + 1;

  std::vector<Configuration> out;
  out.reserve(size_t(total));
  std::vector<int> counts(expandable.size(), 0);
  for (int id = 0; id < total; ++id) {
    // id -> counts, first corridor most significant
    int rem = id;
    for (size_t k = 0; k < expandable.size(); ++k) {
      int radix = 1;
      for (size_t k2 = k + 1; k2 < expandable.size(); ++k2) radix *= maxes[k2] + 1;
      counts[k] = rem / radix;
      rem %= radix;
    }
    out.push_back(make_configuration(c, counts, id));
  }
  return out;
}

double line_capacity_mw(const NetworkCase& c, const std::vector<Configuration>& cfgs,
                        const InvestmentPlan& plan, int t, int line) {
  const auto& l = c.lines[size_t(line)];
  double cap = l.capacity_mw;
  if (const auto* r = plan.recon_for(line); r && t >= r->from_period)
    cap *= 1.0 + r->factor;
  auto expandable = c.expandable_lines();
  const Configuration& cfg = cfgs[size_t(plan.config_ids[size_t(t)])];
  for (size_t k = 0; k < expandable.size(); ++k)
    if (expandable[k] == line) cap += double(cfg.circuits[k]) * l.candidate_capacity_mw;
  return cap;
}

}  // namespace drtep
