#include "drtep/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "drtep/rng.hpp"

namespace drtep {

namespace {

std::string fmt_g(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

}  // namespace

// --------------------------------------------------------------------------------------
// Case generation
// --------------------------------------------------------------------------------------

NetworkCase generate_garver_case(std::uint64_t seed, const GarverTemplate& tpl) {
  if (tpl.participants_per_node < 1)
    throw std::invalid_argument("template needs at least one participant per node");
  if (!(tpl.recon_factor_step > 0))
    throw std::invalid_argument("reconductoring factor step must be positive");

  NetworkCase c;
  c.name = "garver6-seed" + std::to_string(seed);
  for (int b = 0; b < 6; ++b) c.buses.push_back({b, b == 0, std::to_string(b + 1)});
  c.slack_bus = 0;

  int lid = 0;
  std::vector<int> recon_ids;
  for (const auto& e : tpl.existing) {
    TransmissionLine l;
    l.id = lid++;
    l.from = e.from - 1;
    l.to = e.to - 1;
    l.reactance = e.reactance_pu;
    l.capacity_mw = e.capacity_mw;
    l.reconductorable = e.reconductorable;
    if (e.reconductorable) recon_ids.push_back(l.id);
    c.lines.push_back(l);
  }
  for (const auto& cand : tpl.candidates) {
    TransmissionLine l;
    l.id = lid++;
    l.from = cand.from - 1;
    l.to = cand.to - 1;
    l.reactance = cand.reactance_pu;
    l.capacity_mw = 0;
    l.expandable = true;
    l.candidate_capacity_mw = cand.capacity_mw;
    l.candidate_reactance = cand.reactance_pu;
    l.max_circuits = cand.max_circuits;
    l.expansion_cost_mgbp = cand.cost_mgbp;
    c.lines.push_back(l);
  }

  const int steps = int(std::lround(tpl.recon_factor_max / tpl.recon_factor_step));
  for (int j = 0; j <= steps; ++j) c.recon.factors.push_back(j * tpl.recon_factor_step);
  for (int id : recon_ids)
    c.recon.lines.push_back({id, tpl.recon_k_fix_mgbp, tpl.recon_k_var_mgbp_per_mw});

  c.horizon.periods = tpl.periods;
  c.horizon.operating_conditions = tpl.conditions;
  c.horizon.discount_rate = tpl.discount_rate;
  c.horizon.demand_growth = tpl.demand_growth;
  c.tariff.tau_upper_gbp_per_mwh = tpl.tau_upper_gbp;
  c.tariff.expansion_bits = tpl.expansion_bits;

  Rng gbid(seed_stream(seed, "gen_bids"));
  Rng gcap(seed_stream(seed, "gen_caps"));
  Rng dcap(seed_stream(seed, "dem_caps"));
  int pid = 0;

  for (const auto& [node, ref] : tpl.gen_capacity_ref_mw) {
    const double avg = ref / tpl.participants_per_node;
    const double mean_bid = tpl.gen_bid_mean_gbp.at(node);
    for (int u = 0; u < tpl.participants_per_node; ++u) {
      Participant p;
      p.id = pid++;
      p.kind = ParticipantKind::Generator;
      p.bus = node - 1;
      p.qty_max_mw = gcap.uniform(tpl.gen_capacity_lo, tpl.gen_capacity_hi) * avg;
      p.bid_gbp_per_mwh = std::max(0.5, mean_bid * (1.0 + tpl.gen_bid_sd_frac * gbid.normal()));
      c.participants.push_back(p);
    }
  }
  for (const auto& [node, ref] : tpl.demand_capacity_ref_mw) {
    const double avg = ref / tpl.participants_per_node;
    const double bid = tpl.demand_bid_gbp.at(node);
    for (int u = 0; u < tpl.participants_per_node; ++u) {
      Participant p;
      p.id = pid++;
      p.kind = ParticipantKind::Consumer;
      p.bus = node - 1;
      p.qty_max_mw = dcap.uniform(tpl.demand_capacity_lo, tpl.demand_capacity_hi) * avg;
      p.bid_gbp_per_mwh = bid;
      c.participants.push_back(p);
    }
  }
  auto add_wind = [&](int node, double mw) {
    Participant p;
    p.id = pid++;
    p.kind = ParticipantKind::WindFarm;
    p.bus = node - 1;
    p.qty_max_mw = mw;
    p.bid_gbp_per_mwh = 0;
    p.curtailment_cost_gbp_per_mwh = tpl.wind_curtail_cost_gbp;
    p.forecast_mw.assign(size_t(tpl.periods),
                         std::vector<double>(size_t(tpl.conditions), tpl.wind_forecast_cf * mw));
    c.participants.push_back(p);
  };
  add_wind(6, tpl.wind_total_mw * tpl.wind_share_bus6);
  add_wind(3, tpl.wind_total_mw * (1.0 - tpl.wind_share_bus6));

  // the JSON round-trip runs the full schema validation, so a generated case can never
  // silently violate an invariant a hand-written file would be rejected for
  return load_case(save_case(c));
}

std::vector<std::vector<double>> synthetic_error_history(int rows, int farms, double rho,
                                                         double sd, std::uint64_t seed) {
  if (rows < 1 || farms < 1) throw std::invalid_argument("history needs rows and farms");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("shared-factor weight must lie in [0,1]");
  if (!(sd > 0)) throw std::invalid_argument("history sd must be positive");
  Rng rng(seed);
  std::vector<std::vector<double>> out(static_cast<size_t>(rows),
                                       std::vector<double>(static_cast<size_t>(farms)));
  const double wf = std::sqrt(rho), wo = std::sqrt(1.0 - rho);
  for (int r = 0; r < rows; ++r) {
    const double z = rng.normal();
    for (int f = 0; f < farms; ++f) {
      double e = sd * (wf * z + wo * rng.normal());
      out[size_t(r)][size_t(f)] = std::clamp(e, -0.5, 0.5);
    }
  }
  return out;
}

ErrorSampleSet default_error_samples(const NetworkCase& net, int count, std::uint64_t seed,
                                     const std::string& role) {
  const auto farm_ids = net.participants_of(ParticipantKind::WindFarm);
  if (farm_ids.empty() || count <= 0) {
    ErrorSampleSet set;
    set.role = role;
    set.seed = seed;
    set.periods = net.horizon.periods;
    set.conditions = net.horizon.operating_conditions;
    set.farm_ids = farm_ids;
    return set;
  }
  auto history = synthetic_error_history(156, int(farm_ids.size()), 0.5, 0.15,
                                         seed_stream(seed, "error_history"));
  return sample_error_set(fit_copula(history), net, count, seed_stream(seed, role + "_samples"),
                          role);
}

// --------------------------------------------------------------------------------------
// Out-of-sample reliability
// --------------------------------------------------------------------------------------

ReliabilityReport evaluate_reliability(const DispatchProblem& prob,
                                       const DispatchSolution& sol,
                                       const std::vector<Configuration>& configs,
                                       const ErrorSampleSet& test, double tol_mw) {
  if (test.count() <= 0)
    throw std::invalid_argument("reliability evaluation needs a nonempty test sample set");
  if (!sol.ok() || sol.blocks.size() != prob.blocks.size())
    throw std::invalid_argument("reliability evaluation needs a complete dispatch solution");
  const int T = prob.n_periods, S = prob.n_conditions, L = prob.n_lines;
  if (test.periods != T || test.conditions != S)
    throw std::invalid_argument("test sample set does not match the dispatch horizon");

  ReliabilityReport rep;
  rep.periods = T;
  rep.conditions = S;
  rep.samples = test.count();

  std::map<int, AggregatedErrors> agg_by_cfg;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const DispatchBlock& db = prob.block(t, s);
      const BlockSolution& bs = sol.blocks[size_t(t) * S + s];
      std::vector<double> flow(size_t(std::max(L, 1)), 0.0);
      for (int l = 0; l < L; ++l)
        for (size_t j = 0; j < db.participants.size(); ++j)
          flow[size_t(l)] += db.line_weight[size_t(l)][j] * bs.quantity[j];

      const AggregatedErrors* agg = nullptr;
      if (L > 0 && !test.farm_ids.empty()) {
        if (db.config_id < 0 || size_t(db.config_id) >= configs.size())
          throw std::invalid_argument("dispatch references a configuration that is not in the list");
        auto it = agg_by_cfg.find(db.config_id);
        if (it == agg_by_cfg.end())
          it = agg_by_cfg
                   .emplace(db.config_id,
                            aggregate_line_errors(test, prob.net, configs[size_t(db.config_id)]))
                   .first;
        agg = &it->second;
      }

      int ok = 0;
      for (int i = 0; i < rep.samples; ++i) {
        bool all_ok = true;
        for (int l = 0; l < L && all_ok; ++l) {
          const double xi = agg ? agg->at(t, s, l, i) : 0.0;
          const double f = flow[size_t(l)] + xi;
          const double cap = db.capacity_mw[size_t(l)];
          if (f > cap + tol_mw || f < -(cap + tol_mw)) all_ok = false;
        }
        ok += all_ok ? 1 : 0;
      }
      rep.joint_pct.push_back(100.0 * ok / rep.samples);
    }
  }
  double sum = 0;
  for (double v : rep.joint_pct) sum += v;
  rep.mean_pct = rep.joint_pct.empty() ? 0.0 : sum / double(rep.joint_pct.size());
  return rep;
}

// --------------------------------------------------------------------------------------
// Metrics bookkeeping
// --------------------------------------------------------------------------------------

double time_to_comparable(const std::vector<std::pair<double, double>>& incumbents,
                          double target_obj, double rel_gap, double time_limit_s) {
  const double tol = rel_gap * std::max(1.0, std::fabs(target_obj));
  double best = time_limit_s;
  for (const auto& [tm, obj] : incumbents)
    if (obj >= target_obj - tol) best = std::min(best, tm);
  return best;
}

std::string metrics_csv_header(int periods, int conditions) {
  std::ostringstream os;
  os << "scheme,eps,theta,T,seed,timef_s,time_s,solvable,obj_mgbp,obj_diff_pct,reli_mean_pct";
  for (int t = 0; t < periods; ++t)
    for (int s = 0; s < conditions; ++s) {
      os << ",reli_t" << (t + 1);
      if (conditions > 1) os << "s" << (s + 1);
    }
  os << ",m_suspect";
  return os.str();
}

std::string metrics_csv_row(const MetricsRow& row, int conditions) {
  std::ostringstream os;
  os << row.scheme << ',' << fmt_g(row.eps) << ',' << fmt_g(row.theta) << ',' << row.periods
     << ',' << row.seed << ',' << fmt_g(row.timef_s) << ',' << fmt_g(row.time_s) << ','
     << (row.solvable ? 1 : 0) << ',';
  if (std::isfinite(row.obj_mgbp)) os << fmt_g(row.obj_mgbp, 10);
  os << ',';
  if (row.obj_diff_pct) os << fmt_g(*row.obj_diff_pct);
  os << ',';
  if (std::isfinite(row.reli_mean_pct)) os << fmt_g(row.reli_mean_pct);
  const size_t cells = size_t(row.periods) * size_t(std::max(conditions, 1));
  for (size_t k = 0; k < cells; ++k) {
    os << ',';
    if (k < row.reli_pct.size() && std::isfinite(row.reli_pct[k])) os << fmt_g(row.reli_pct[k]);
  }
  os << ',' << (row.m_suspect ? 1 : 0);
  return os.str();
}

std::vector<MetricsRow> metrics_rows_from_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  int reli_cols = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.push_back("");
    if (header) {
      header = false;
      for (const auto& name : f)
        if (name.rfind("reli_t", 0) == 0) ++reli_cols;
      continue;
    }
    if (int(f.size()) != 12 + reli_cols) continue;  // malformed line: skip, never throw
    MetricsRow r;
    r.scheme = f[0];
    r.eps = std::stod(f[1]);
    r.theta = std::stod(f[2]);
    r.periods = std::stoi(f[3]);
    r.seed = std::stoull(f[4]);
    r.timef_s = std::stod(f[5]);
    r.time_s = std::stod(f[6]);
    r.solvable = f[7] == "1";
    if (!f[8].empty()) r.obj_mgbp = std::stod(f[8]);
    if (!f[9].empty()) r.obj_diff_pct = std::stod(f[9]);
    if (!f[10].empty()) r.reli_mean_pct = std::stod(f[10]);
    for (int k = 0; k < reli_cols; ++k)
      if (!f[size_t(11 + k)].empty()) r.reli_pct.push_back(std::stod(f[size_t(11 + k)]));
    r.m_suspect = f[11 + size_t(reli_cols)] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

// --------------------------------------------------------------------------------------
// Grid runner
// --------------------------------------------------------------------------------------

void RunSpec::validate() const {
  if (eps_grid.empty() || theta_grid.empty())
    throw std::invalid_argument("risk and radius grids must be nonempty");
  for (double e : eps_grid)
    if (!(e > 0 && e < 1)) throw std::invalid_argument("risk level must be in (0,1)");
  for (double th : theta_grid)
    if (!(th > 0)) throw std::invalid_argument("ambiguity radius must be positive");
  if (seeds.empty()) throw std::invalid_argument("need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw std::invalid_argument("seeds must be distinct");
  if (schemes.empty()) throw std::invalid_argument("need at least one scheme");
  for (Scheme s : schemes)
    if (s != Scheme::Sla && s != Scheme::La && s != Scheme::Wcvar)
      throw std::invalid_argument("scheme '" + scheme_name(s) +
                                  "' has no fixed optimality system and cannot run in the "
                                  "investment grid; use sla, la or wcvar");
  if (periods < 1 || conditions < 1) throw std::invalid_argument("horizon must be nonempty");
  if (n_train < 1) throw std::invalid_argument("need at least one training sample");
  if (n_test < 1) throw std::invalid_argument("need at least one test sample");
  if (!(time_limit_s > 0)) throw std::invalid_argument("time limit must be positive");
  if (!(mip_rel_gap > 0)) throw std::invalid_argument("relative gap must be positive");
  if (workers < 1) throw std::invalid_argument("need at least one worker");
}

namespace {

// Minimal TOML value: string, number, boolean, or a single-line array of those.
struct TomlValue {
  enum class Kind { Str, Num, Bool, Arr };
  Kind kind = Kind::Num;
  std::string str;
  double num = 0;
  bool flag = false;
  std::vector<TomlValue> items;
};

[[noreturn]] void toml_fail(int line, const std::string& what) {
  throw std::invalid_argument("run spec line " + std::to_string(line) + ": " + what);
}

size_t toml_skip_ws(const std::string& s, size_t i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return i;
}

TomlValue toml_parse_value(const std::string& s, size_t& i, int line) {
  i = toml_skip_ws(s, i);
  if (i >= s.size()) toml_fail(line, "missing value");
  TomlValue v;
  if (s[i] == '"') {
    v.kind = TomlValue::Kind::Str;
    for (++i; i < s.size(); ++i) {
      if (s[i] == '\\') {
        if (i + 1 >= s.size() || (s[i + 1] != '"' && s[i + 1] != '\\'))
          toml_fail(line, "unsupported escape in string");
        v.str += s[++i];
      } else if (s[i] == '"') {
        ++i;
        return v;
      } else {
        v.str += s[i];
      }
    }
    toml_fail(line, "unterminated string");
  }
  if (s[i] == '[') {
    v.kind = TomlValue::Kind::Arr;
    ++i;
    while (true) {
      i = toml_skip_ws(s, i);
      if (i >= s.size()) toml_fail(line, "unterminated array");
      if (s[i] == ']') {
        ++i;
        return v;
      }
      v.items.push_back(toml_parse_value(s, i, line));
      i = toml_skip_ws(s, i);
      if (i < s.size() && s[i] == ',') {
        ++i;
        continue;
      }
      if (i < s.size() && s[i] == ']') {
        ++i;
        return v;
      }
      toml_fail(line, "expected ',' or ']' in array");
    }
  }
  if (s.compare(i, 4, "true") == 0) {
    v.kind = TomlValue::Kind::Bool;
    v.flag = true;
    i += 4;
    return v;
  }
  if (s.compare(i, 5, "false") == 0) {
    v.kind = TomlValue::Kind::Bool;
    v.flag = false;
    i += 5;
    return v;
  }
  char* end = nullptr;
  v.num = std::strtod(s.c_str() + i, &end);
  if (end == s.c_str() + i) toml_fail(line, "cannot parse value");
  i = size_t(end - s.c_str());
  v.kind = TomlValue::Kind::Num;
  return v;
}

double toml_number(const TomlValue& v, int line) {
  if (v.kind != TomlValue::Kind::Num) toml_fail(line, "expected a number");
  return v.num;
}

int toml_int(const TomlValue& v, int line) {
  const double d = toml_number(v, line);
  if (d != std::floor(d) || std::fabs(d) > 2e9) toml_fail(line, "expected an integer");
  return int(d);
}

std::string toml_string(const TomlValue& v, int line) {
  if (v.kind != TomlValue::Kind::Str) toml_fail(line, "expected a quoted string");
  return v.str;
}

// Scalars count as one-element arrays.
std::vector<TomlValue> toml_list(const TomlValue& v) {
  if (v.kind == TomlValue::Kind::Arr) return v.items;
  return {v};
}

}  // namespace

RunSpec run_spec_from_toml(const std::string& text) {
  RunSpec spec;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    size_t i = toml_skip_ws(raw, 0);
    if (i >= raw.size() || raw[i] == '#') continue;
    if (raw[i] == '[') toml_fail(line_no, "tables are not supported in run specs");
    size_t key_start = i;
    while (i < raw.size() && (std::isalnum(static_cast<unsigned char>(raw[i])) ||
                              raw[i] == '_' || raw[i] == '-'))
      ++i;
    const std::string key = raw.substr(key_start, i - key_start);
    if (key.empty()) toml_fail(line_no, "expected a key");
    i = toml_skip_ws(raw, i);
    if (i >= raw.size() || raw[i] != '=') toml_fail(line_no, "expected '=' after '" + key + "'");
    ++i;
    TomlValue v = toml_parse_value(raw, i, line_no);
    i = toml_skip_ws(raw, i);
    if (i < raw.size() && raw[i] != '#')
      toml_fail(line_no, "unexpected trailing text after the value");

    auto numbers = [&](const TomlValue& val) {
      std::vector<double> out;
      for (const auto& item : toml_list(val)) out.push_back(toml_number(item, line_no));
      if (out.empty()) toml_fail(line_no, "'" + key + "' must not be empty");
      return out;
    };

    if (key == "eps") {
      spec.eps_grid = numbers(v);
    } else if (key == "theta") {
      spec.theta_grid = numbers(v);
    } else if (key == "seeds") {
      spec.seeds.clear();
      for (double d : numbers(v)) {
        if (d != std::floor(d) || d < 0) toml_fail(line_no, "seeds must be non-negative integers");
        spec.seeds.push_back(std::uint64_t(d));
      }
    } else if (key == "schemes") {
      spec.schemes.clear();
      for (const auto& item : toml_list(v)) {
        try {
          spec.schemes.push_back(scheme_from_name(toml_string(item, line_no)));
        } catch (const std::invalid_argument& e) {
          toml_fail(line_no, e.what());
        }
      }
      if (spec.schemes.empty()) toml_fail(line_no, "'schemes' must not be empty");
    } else if (key == "periods") {
      spec.periods = toml_int(v, line_no);
    } else if (key == "conditions") {
      spec.conditions = toml_int(v, line_no);
    } else if (key == "n_train") {
      spec.n_train = toml_int(v, line_no);
    } else if (key == "n_test") {
      spec.n_test = toml_int(v, line_no);
    } else if (key == "time_limit_s") {
      spec.time_limit_s = toml_number(v, line_no);
    } else if (key == "mip_rel_gap") {
      spec.mip_rel_gap = toml_number(v, line_no);
    } else if (key == "bilinear") {
      try {
        spec.bilinear_mode = bilinear_mode_from_name(toml_string(v, line_no));
      } catch (const std::invalid_argument& e) {
        toml_fail(line_no, e.what());
      }
    } else if (key == "workers") {
      spec.workers = toml_int(v, line_no);
    } else if (key == "out_dir") {
      spec.out_dir = toml_string(v, line_no);
    } else if (key == "participants_per_node") {
      spec.base.participants_per_node = toml_int(v, line_no);
    } else if (key == "expansion_bits") {
      spec.base.expansion_bits = toml_int(v, line_no);
    } else if (key == "max_circuits") {
      const int mc = toml_int(v, line_no);
      if (mc < 1) toml_fail(line_no, "max_circuits must be at least 1");
      for (auto& cand : spec.base.candidates) cand.max_circuits = mc;
    } else if (key == "reconductoring") {
      if (v.kind != TomlValue::Kind::Bool) toml_fail(line_no, "expected true or false");
      if (!v.flag)
        for (auto& e : spec.base.existing) e.reconductorable = false;
    } else {
      toml_fail(line_no,
                "unknown key '" + key +
                    "' (valid: eps, theta, seeds, schemes, periods, conditions, n_train, "
                    "n_test, time_limit_s, mip_rel_gap, bilinear, workers, out_dir, "
                    "participants_per_node, expansion_bits, max_circuits, reconductoring)");
    }
  }
  return spec;
}

namespace {

struct GridCell {
  double eps = 0, theta = 0;
  std::uint64_t seed = 0;
};

std::string row_key(const std::string& scheme, double eps, double theta, std::uint64_t seed) {
  return scheme + "|" + fmt_g(eps) + "|" + fmt_g(theta) + "|" + std::to_string(seed);
}

std::string cell_tag(const GridCell& c) {
  return "eps" + fmt_g(c.eps) + "_theta" + fmt_g(c.theta) + "_seed" + std::to_string(c.seed);
}

// Executes one grid cell: shared case/sample generation, then one planner run per
// scheme (SLA first so comparability metrics exist). Never throws: failures land in
// the row's error field.
std::vector<MetricsRow> run_cell(const RunSpec& spec, const GridCell& cell,
                                 SolverBackend& backend) {
  std::vector<Scheme> order = spec.schemes;
  std::stable_partition(order.begin(), order.end(),
                        [](Scheme s) { return s == Scheme::Sla; });

  auto blank_row = [&](Scheme sch) {
    MetricsRow r;
    r.scheme = scheme_name(sch);
    r.eps = cell.eps;
    r.theta = cell.theta;
    r.periods = spec.periods;
    r.seed = cell.seed;
    r.timef_s = spec.time_limit_s;
    r.time_s = spec.time_limit_s;
    return r;
  };

  NetworkCase net;
  ErrorSampleSet train, test;
  std::vector<Configuration> configs;
  try {
    GarverTemplate tpl = spec.base;
    tpl.periods = spec.periods;
    tpl.conditions = spec.conditions;
    net = generate_garver_case(cell.seed, tpl);
    train = default_error_samples(net, spec.n_train, cell.seed, "train");
    test = default_error_samples(net, spec.n_test, cell.seed, "test");
    configs = enumerate_configurations(net);
  } catch (const std::exception& e) {
    std::vector<MetricsRow> rows;
    for (Scheme sch : spec.schemes) {
      MetricsRow r = blank_row(sch);
      r.error = std::string("case generation failed: ") + e.what();
      rows.push_back(std::move(r));
    }
    return rows;
  }

  AmbiguityConfig amb;
  amb.eps = cell.eps;
  amb.theta = cell.theta;
  amb.n = spec.n_train;

  std::map<std::string, MetricsRow> by_scheme;
  std::map<std::string, std::vector<std::pair<double, double>>> incumbents;

  for (Scheme sch : order) {
    MetricsRow r = blank_row(sch);
    try {
      PlannerOptions opt;
      opt.bilinear_mode = spec.bilinear_mode;
      SingleLevelModel m = assemble_single_level(net, configs, train, amb, {}, sch, opt);
      SolverConfig cfg;
      cfg.time_limit_s = spec.time_limit_s;
      cfg.mip_rel_gap = spec.mip_rel_gap;
      cfg.log_to_stdout = false;
      cfg.seed = int(cell.seed & 0x7fffffff);
      PlannerSolution ps = solve_single_level(m, backend, cfg);
      incumbents[r.scheme] = ps.incumbents;
      r.solvable = ps.ok() && !ps.x.empty();
      r.time_s = ps.status == SolveStatus::Optimal ? ps.solve_time_s : spec.time_limit_s;
      if (r.solvable) {
        r.obj_mgbp = ps.objective_mgbp;
        r.m_suspect = verify_big_m(m, ps.x).m_suspect();
        // out-of-sample check: clear the market under the extracted plan, then count
        // test samples with every line limit met
        DispatchProblem dp = make_dispatch_problem(net, ps.plan, configs, train, amb, {}, sch);
        DispatchSolution ds = solve_dispatch_direct(dp, backend, cfg);
        if (ds.ok()) {
          ReliabilityReport rep = evaluate_reliability(dp, ds, configs, test);
          r.reli_pct = rep.joint_pct;
          r.reli_mean_pct = rep.mean_pct;
        } else {
          r.error = "dispatch re-clearing failed: " + ds.message;
        }
        if (!spec.out_dir.empty()) {
          const std::string stem =
              spec.out_dir + "/" + r.scheme + "_" + cell_tag(cell);
          std::ofstream(stem + "_investment.csv") << investment_csv(m, ps);
          std::ofstream(stem + "_tariffs.csv") << tariff_csv(m, ps);
        }
      } else if (!ps.message.empty()) {
        r.error = ps.message;
      }
    } catch (const std::exception& e) {
      r.error = e.what();
      r.solvable = false;
    }
    by_scheme.emplace(r.scheme, std::move(r));
  }

  // comparability metrics against the cell's SLA run
  const std::string sla = scheme_name(Scheme::Sla);
  const MetricsRow* sla_row = nullptr;
  if (auto it = by_scheme.find(sla); it != by_scheme.end()) sla_row = &it->second;
  const bool sla_ok = sla_row && sla_row->solvable;

  for (auto& [name, r] : by_scheme) {
    const auto& inc = incumbents[name];
    if (sla_ok) {
      const double target = sla_row->obj_mgbp;
      r.timef_s = time_to_comparable(inc, target, spec.mip_rel_gap, spec.time_limit_s);
      // a run whose own solution qualifies had a comparable incumbent no later than
      // its solve time; incumbent log timestamps can lag the measured time slightly
      const double tol = spec.mip_rel_gap * std::max(1.0, std::fabs(target));
      if (r.solvable && r.obj_mgbp >= target - tol) r.timef_s = std::min(r.timef_s, r.time_s);
      if (name != sla && r.solvable)
        r.obj_diff_pct = 100.0 * (r.obj_mgbp - target) / std::max(1e-12, std::fabs(target));
    } else {
      // no SLA yardstick: report the first feasible time instead
      double first = spec.time_limit_s;
      for (const auto& [tm, obj] : inc) first = std::min(first, tm);
      r.timef_s = r.solvable ? std::min(first, r.time_s) : first;
    }
  }

  std::vector<MetricsRow> rows;
  for (Scheme sch : spec.schemes) rows.push_back(by_scheme.at(scheme_name(sch)));
  return rows;
}

}  // namespace

std::vector<MetricsRow> run_grid(const RunSpec& spec) {
  return run_grid(spec, [] { return make_highs_backend(); });
}

std::vector<MetricsRow> run_grid(const RunSpec& spec,
                                 const BackendFactory& make_backend_for_worker) {
  spec.validate();

  std::vector<GridCell> all_cells;
  for (double e : spec.eps_grid)
    for (double th : spec.theta_grid)
      for (std::uint64_t sd : spec.seeds) all_cells.push_back({e, th, sd});

  // resume: rows already present in out_dir/metrics.csv are kept, their cells skipped
  std::vector<MetricsRow> done;
  std::set<std::string> have;
  std::string metrics_path;
  if (!spec.out_dir.empty()) {
    std::filesystem::create_directories(spec.out_dir);
    metrics_path = spec.out_dir + "/metrics.csv";
    if (std::filesystem::exists(metrics_path)) {
      std::ifstream in(metrics_path);
      std::stringstream ss;
      ss << in.rdbuf();
      done = metrics_rows_from_csv(ss.str());
      for (const auto& r : done) have.insert(row_key(r.scheme, r.eps, r.theta, r.seed));
    }
  }
  std::vector<GridCell> todo;
  for (const auto& c : all_cells) {
    bool complete = true;
    for (Scheme sch : spec.schemes)
      complete = complete && have.count(row_key(scheme_name(sch), c.eps, c.theta, c.seed));
    if (!complete) todo.push_back(c);
  }

  std::vector<MetricsRow> fresh;
  std::mutex sink_mutex;
  std::ofstream metrics_file;
  if (!metrics_path.empty()) {
    const bool new_file = !std::filesystem::exists(metrics_path) ||
                          std::filesystem::file_size(metrics_path) == 0;
    metrics_file.open(metrics_path, std::ios::app);
    if (new_file) metrics_file << metrics_csv_header(spec.periods, spec.conditions) << "\n";
  }
  auto sink = [&](std::vector<MetricsRow>&& rows) {
    std::lock_guard<std::mutex> lock(sink_mutex);
    for (auto& r : rows) {
      if (metrics_file.is_open())
        metrics_file << metrics_csv_row(r, spec.conditions) << "\n" << std::flush;
      if (!r.error.empty() && !spec.out_dir.empty())
        std::ofstream(spec.out_dir + "/errors.log", std::ios::app)
            << row_key(r.scheme, r.eps, r.theta, r.seed) << ": " << r.error << "\n";
      fresh.push_back(std::move(r));
    }
  };

  std::atomic<size_t> next{0};
  auto worker = [&] {
    auto backend = make_backend_for_worker();
    for (size_t i = next.fetch_add(1); i < todo.size(); i = next.fetch_add(1))
      sink(run_cell(spec, todo[i], *backend));
  };
  const int n_workers = int(std::min<size_t>(size_t(spec.workers), todo.size()));
  if (n_workers <= 1) {
    if (!todo.empty()) worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<MetricsRow> out = std::move(done);
  for (auto& r : fresh) out.push_back(std::move(r));
  return out;
}

// --------------------------------------------------------------------------------------
// Summaries
// --------------------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const size_t lo = size_t(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

std::vector<SchemeSummary> compare_schemes(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("no metrics rows to summarize");

  std::vector<std::string> schemes;
  for (const auto& r : rows)
    if (std::find(schemes.begin(), schemes.end(), r.scheme) == schemes.end())
      schemes.push_back(r.scheme);

  // a cell is comparable when every scheme present in the input solved it
  auto cell_key = [](const MetricsRow& r) {
    return fmt_g(r.eps) + "|" + fmt_g(r.theta) + "|" + std::to_string(r.periods) + "|" +
           std::to_string(r.seed);
  };
  std::map<std::string, std::set<std::string>> solved_in_cell;
  for (const auto& r : rows)
    if (r.solvable) solved_in_cell[cell_key(r)].insert(r.scheme);
  std::set<std::string> comparable_cells;
  for (const auto& [key, solved] : solved_in_cell)
    if (solved.size() == schemes.size()) comparable_cells.insert(key);

  std::vector<SchemeSummary> out;
  for (const auto& name : schemes) {
    SchemeSummary s;
    s.scheme = name;
    std::vector<double> ar_timef, ar_time, cr_timef, cr_time, cr_obj, cr_diff, reli;
    for (const auto& r : rows) {
      if (r.scheme != name) continue;
      ++s.n_rows;
      ar_timef.push_back(r.timef_s);
      ar_time.push_back(r.time_s);
      if (r.solvable) {
        ++s.n_solvable;
        if (std::isfinite(r.reli_mean_pct)) reli.push_back(r.reli_mean_pct);
      }
      if (comparable_cells.count(cell_key(r))) {
        ++s.n_comparable;
        cr_timef.push_back(r.timef_s);
        cr_time.push_back(r.time_s);
        if (std::isfinite(r.obj_mgbp)) cr_obj.push_back(r.obj_mgbp);
        if (r.obj_diff_pct) cr_diff.push_back(*r.obj_diff_pct);
      }
    }
    s.ar_timef_mean_s = mean_of(ar_timef);
    s.ar_time_mean_s = mean_of(ar_time);
    s.cr_timef_mean_s = mean_of(cr_timef);
    s.cr_time_mean_s = mean_of(cr_time);
    s.cr_time_p2_5_s = percentile(cr_time, 0.025);
    s.cr_time_p97_5_s = percentile(cr_time, 0.975);
    s.cr_obj_mean_mgbp = mean_of(cr_obj);
    s.cr_obj_diff_mean_pct = mean_of(cr_diff);
    s.reli_mean_pct = mean_of(reli);
    out.push_back(std::move(s));
  }
  return out;
}

std::string summary_markdown(const std::vector<SchemeSummary>& summaries) {
  std::ostringstream os;
  os << "| Scheme | Runs | Solvable | TimeF AR (s) | Time AR (s) | TimeF CR (s) | "
        "Time CR (s) | Time CR 95% band (s) | Obj CR (M GBP) | Obj diff CR (%) | Reli (%) |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  auto cell = [](double v, int digits = 4) {
    return std::isfinite(v) ? fmt_g(v, digits) : std::string("-");
  };
  for (const auto& s : summaries) {
    os << "| " << s.scheme << " | " << s.n_rows << " | " << s.n_solvable << " | "
       << cell(s.ar_timef_mean_s) << " | " << cell(s.ar_time_mean_s) << " | "
       << cell(s.cr_timef_mean_s) << " | " << cell(s.cr_time_mean_s) << " | ";
    if (std::isfinite(s.cr_time_p2_5_s) && std::isfinite(s.cr_time_p97_5_s))
      os << "[" << fmt_g(s.cr_time_p2_5_s, 4) << ", " << fmt_g(s.cr_time_p97_5_s, 4) << "]";
    else
      os << "-";
    os << " | " << cell(s.cr_obj_mean_mgbp, 8) << " | " << cell(s.cr_obj_diff_mean_pct) << " | "
       << cell(s.reli_mean_pct) << " |\n";
  }
  return os.str();
}

}  // namespace drtep
