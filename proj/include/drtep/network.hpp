#pragma once
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drtep {

struct Bus {
  int id = 0;
  bool slack = false;
  std::string label;
};

// One corridor of the network. Existing circuits are described by reactance/capacity_mw
// (capacity_mw == 0 means the corridor has no circuit yet, which is only legal when it is
// expandable). Candidate circuits are identical copies added in parallel; susceptances
// add. Reconductoring uprates the existing circuit's capacity and leaves reactance alone.
struct TransmissionLine {
  int id = 0;
  int from = 0, to = 0;
  double reactance = 0;      // p.u., existing circuit
  double capacity_mw = 0;    // existing circuit rating (0 = none built yet)
  bool reconductorable = false;
  bool expandable = false;
  double candidate_capacity_mw = 0;  // per added circuit
  double candidate_reactance = 0;    // p.u. per added circuit
  int max_circuits = 0;
  double expansion_cost_mgbp = 0;    // per circuit
};

struct ReconductoringPolicy {
  std::vector<double> factors;  // fractional uprates including 0, ascending
  struct LineCost {
    int line_id;
    double k_fix_mgbp;
    double k_var_mgbp_per_mw;
  };
  std::vector<LineCost> lines;

  const LineCost* cost_for(int line_id) const {
    for (const auto& lc : lines)
      if (lc.line_id == line_id) return &lc;
    return nullptr;
  }
};

enum class ParticipantKind { Generator, Consumer, WindFarm };

struct Participant {
  int id = 0;
  ParticipantKind kind = ParticipantKind::Generator;
  int bus = 0;
  double qty_min_mw = 0;
  double qty_max_mw = 0;                    // capacity (wind: installed capacity)
  double bid_gbp_per_mwh = 0;               // marginal cost / utility; wind bids zero
  double curtailment_cost_gbp_per_mwh = 0;  // wind only
  std::vector<std::vector<double>> forecast_mw;  // wind only: [periods][conditions]
};

struct PlanningHorizon {
  int periods = 1;               // investment periods (years)
  int operating_conditions = 1;  // representative operating conditions per period
  double hours_per_period = 8760.0;
  double discount_rate = 0.05;
  double demand_growth = 0.05;
};

struct TariffPolicy {
  double rho_vc = 1.0;                  // total capacity revenue = rho_vc * total volumetric revenue
  double tau_upper_gbp_per_mwh = 12.7;  // volumetric tariff cap
  int expansion_bits = 7;               // binary-expansion width for the tariff grid
  double delta_default = 1.0;           // line-to-bus tariff allocation weight
};

struct NetworkCase {
  int schema_version = 1;
  std::string name;
  std::vector<Bus> buses;
  std::vector<TransmissionLine> lines;
  ReconductoringPolicy recon;
  std::vector<Participant> participants;
  PlanningHorizon horizon;
  TariffPolicy tariff;
  int slack_bus = 0;

  std::vector<int> expandable_lines() const;
  std::vector<int> reconductorable_lines() const;
  std::vector<int> participants_at(int bus, ParticipantKind kind) const;
  std::vector<int> participants_of(ParticipantKind kind) const;
  bool bus_hosts_participant(int bus) const;

  // demand capacity growth factor for 0-based period index
  double demand_scale(int t) const;
  double consumer_max_mw(const Participant& p, int t) const;
  double discount(int t) const;  // 1/(1+r)^t for 0-based t
};

NetworkCase load_case(const std::string& json_text);
NetworkCase load_case_file(const std::string& path);
std::string save_case(const NetworkCase& c);
void save_case_file(const NetworkCase& c, const std::string& path);

// A candidate-circuit configuration: how many circuits each expandable corridor carries.
// Enumeration is lexicographic over corridors ordered by line id (first corridor most
// significant), counts 0..max_circuits, so id <-> counts is a bijection.
struct Configuration {
  int id = 0;
  std::vector<int> circuits;        // aligned with NetworkCase::expandable_lines()
  bool valid = false;               // false if an islanded bus hosts a participant
  std::vector<double> ptdf;         // bus-major: ptdf[b * n_lines + l]
  std::vector<char> line_active;    // susceptance > 0 under this configuration
  std::vector<char> bus_connected;  // true if in the slack component

  double s(int bus, int line, int n_lines) const { return ptdf[size_t(bus) * n_lines + line]; }
};

std::vector<Configuration> enumerate_configurations(const NetworkCase& c);
Configuration make_configuration(const NetworkCase& c, const std::vector<int>& circuits, int id);

// Injection-shift factors for the given circuit counts on expandable corridors. Row
//ization: result[b*n_lines + l] = MW on line l (from->to positive) per MW injected at
// bus b and withdrawn at the slack. Slack column and islanded buses are identically zero.
std::vector<double> compute_ptdf(const NetworkCase& c, const std::vector<int>& circuits);

// Upper-level decisions pinned down, as consumed by the dispatch builder and reports.
struct InvestmentPlan {
  std::vector<int> config_ids;  // per period
  struct Recon {
    int line_id;
    int from_period;  // 0-based period the uprate becomes active
    double factor;
  };
  std::vector<Recon> recon;
  std::map<int, double> tau_v;  // volumetric tariff by line id (only invested lines levy it)
  double tau_c = 0;

  const Recon* recon_for(int line_id) const {
    for (const auto& r : recon)
      if (r.line_id == line_id) return &r;
    return nullptr;
  }
};

// Rated transfer limit of line l in period t under the plan: existing rating scaled by
// any active reconductoring uprate plus candidate circuits added by the configuration.
double line_capacity_mw(const NetworkCase& c, const std::vector<Configuration>& cfgs,
                        const InvestmentPlan& plan, int t, int line);

}  // namespace drtep
