#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "drtep/network.hpp"

using namespace drtep;

namespace {

NetworkCase two_bus(double reactance = 0.4) {
  NetworkCase c;
  c.buses = {{0, true, ""}, {1, false, ""}};
  TransmissionLine l;
  l.id = 0;
  l.from = 0;
  l.to = 1;
  l.reactance = reactance;
  l.capacity_mw = 100;
  c.lines = {l};
  c.slack_bus = 0;
  return c;
}

NetworkCase triangle(double reactance = 0.2) {
  NetworkCase c;
  c.buses = {{0, true, ""}, {1, false, ""}, {2, false, ""}};
  auto mk = [&](int id, int f, int t) {
    TransmissionLine l;
    l.id = id;
    l.from = f;
    l.to = t;
    l.reactance = reactance;
    l.capacity_mw = 100;
    return l;
  };
  c.lines = {mk(0, 0, 1), mk(1, 1, 2), mk(2, 0, 2)};
  c.slack_bus = 0;
  return c;
}

}  // namespace

TEST_CASE("shift factors: two-bus case routes the full injection back to the slack") {
  auto c = two_bus();
  auto s = compute_ptdf(c, {});
  // slack column is zero; the non-slack bus pushes 1 MW against the line orientation
  CHECK(s[0 * 1 + 0] == doctest::Approx(0.0));
  CHECK(s[1 * 1 + 0] == doctest::Approx(-1.0));
}

TEST_CASE("shift factors: equal-reactance triangle splits 2/3 vs 1/3") {
  auto c = triangle();
  auto s = compute_ptdf(c, {});
  const int L = 3;
  // injection at bus 1: direct path carries 2/3, the two-hop path 1/3
  CHECK(s[1 * L + 0] == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
  CHECK(s[1 * L + 1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s[1 * L + 2] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  // injection at bus 2 mirrors it
  CHECK(s[2 * L + 2] == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
  CHECK(s[2 * L + 1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  CHECK(s[2 * L + 0] == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("shift factors: invariant to a common reactance base change") {
  auto a = compute_ptdf(triangle(0.2), {});
  auto b = compute_ptdf(triangle(1.7), {});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("shift factors: a candidate circuit in parallel equals halving the reactance") {
  // corridor 0-1 carries one existing circuit plus one identical candidate circuit
  auto c = triangle(0.5);
  c.lines[0].expandable = true;
  c.lines[0].candidate_reactance = 0.5;
  c.lines[0].candidate_capacity_mw = 100;
  c.lines[0].max_circuits = 2;
  auto with_candidate = compute_ptdf(c, {1});

  auto h = triangle(0.5);
  h.lines[0].reactance = 0.25;  // two parallel circuits of 0.5 each
  auto halved = compute_ptdf(h, {});

  REQUIRE(with_candidate.size() == halved.size());
  for (size_t i = 0; i < with_candidate.size(); ++i)
    CHECK(with_candidate[i] == doctest::Approx(halved[i]).epsilon(1e-12));
}

TEST_CASE("shift factors: islanded bus gets a zero column and stays out of the slack set") {
  NetworkCase c = two_bus();
  c.buses.push_back({2, false, ""});
  TransmissionLine l;  // unbuilt corridor 1-2
  l.id = 1;
  l.from = 1;
  l.to = 2;
  l.reactance = 0.3;
  l.capacity_mw = 0;
  l.expandable = true;
  l.candidate_reactance = 0.3;
  l.candidate_capacity_mw = 80;
  l.max_circuits = 2;
  c.lines.push_back(l);

  auto cfg0 = make_configuration(c, {0}, 0);
  CHECK_FALSE(cfg0.bus_connected[2]);
  CHECK(cfg0.s(2, 0, 2) == doctest::Approx(0.0));
  CHECK(cfg0.s(2, 1, 2) == doctest::Approx(0.0));
  CHECK(cfg0.valid);  // nothing lives on bus 2 yet

  Participant p;
  p.id = 0;
  p.kind = ParticipantKind::Generator;
  p.bus = 2;
  p.qty_max_mw = 50;
  p.bid_gbp_per_mwh = 20;
  c.participants.push_back(p);
  auto cfg0p = make_configuration(c, {0}, 0);
  CHECK_FALSE(cfg0p.valid);  // now the islanded bus hosts a participant
  auto cfg1p = make_configuration(c, {1}, 1);
  CHECK(cfg1p.valid);
  CHECK(cfg1p.s(2, 1, 2) == doctest::Approx(-1.0));
}

TEST_CASE("configuration enumeration is a lexicographic bijection") {
  NetworkCase c = triangle();
  c.lines[0].expandable = true;
  c.lines[0].candidate_reactance = 0.2;
  c.lines[0].candidate_capacity_mw = 100;
  c.lines[0].max_circuits = 3;
  c.lines[2].expandable = true;
  c.lines[2].candidate_reactance = 0.2;
  c.lines[2].candidate_capacity_mw = 100;
  c.lines[2].max_circuits = 3;

  auto cfgs = enumerate_configurations(c);
  REQUIRE(cfgs.size() == 16);
  for (int id = 0; id < 16; ++id) {
    CHECK(cfgs[id].id == id);
    CHECK(cfgs[id].circuits[0] == id / 4);  // first corridor most significant
    CHECK(cfgs[id].circuits[1] == id % 4);
    CHECK(cfgs[id].valid);  // fully meshed triangle stays connected regardless
  }
}

TEST_CASE("demand growth and discounting helpers") {
  NetworkCase c = two_bus();
  c.horizon.demand_growth = 0.05;
  c.horizon.discount_rate = 0.05;
  Participant d;
  d.kind = ParticipantKind::Consumer;
  d.qty_max_mw = 240;
  CHECK(c.consumer_max_mw(d, 0) == doctest::Approx(240.0));
  CHECK(c.consumer_max_mw(d, 3) == doctest::Approx(277.83).epsilon(1e-4));
  CHECK(c.discount(0) == doctest::Approx(1.0));
  CHECK(c.discount(2) == doctest::Approx(1.0 / 1.1025).epsilon(1e-12));
}

TEST_CASE("line capacity composes reconductoring uprates with added circuits") {
  NetworkCase c = triangle();
  c.lines[1].reconductorable = true;
  c.recon.factors = {0.0, 0.5, 1.0};
  c.recon.lines = {{1, 1.0, 0.1}};
  c.lines[0].expandable = true;
  c.lines[0].candidate_reactance = 0.2;
  c.lines[0].candidate_capacity_mw = 100;
  c.lines[0].max_circuits = 3;
  c.horizon.periods = 2;

  auto cfgs = enumerate_configurations(c);
  InvestmentPlan plan;
  plan.config_ids = {1, 2};                // one circuit in t=0, two from t=1
  plan.recon = {{1, 1, 0.5}};              // +50% on line 1, active from period 1

  CHECK(line_capacity_mw(c, cfgs, plan, 0, 0) == doctest::Approx(200.0));
  CHECK(line_capacity_mw(c, cfgs, plan, 1, 0) == doctest::Approx(300.0));
  CHECK(line_capacity_mw(c, cfgs, plan, 0, 1) == doctest::Approx(100.0));
  CHECK(line_capacity_mw(c, cfgs, plan, 1, 1) == doctest::Approx(150.0));
  CHECK(line_capacity_mw(c, cfgs, plan, 0, 2) == doctest::Approx(100.0));
}

TEST_CASE("case files round-trip through JSON") {
  NetworkCase c = triangle();
  c.name = "tri";
  c.lines[0].expandable = true;
  c.lines[0].candidate_reactance = 0.2;
  c.lines[0].candidate_capacity_mw = 100;
  c.lines[0].max_circuits = 3;
  c.lines[0].expansion_cost_mgbp = 30;
  c.lines[1].reconductorable = true;
  c.recon.factors = {0.0, 0.25, 0.5};
  c.recon.lines = {{1, 1.0, 0.1}};
  c.horizon = {2, 3, 8760.0, 0.05, 0.05};
  Participant g;
  g.id = 0;
  g.kind = ParticipantKind::Generator;
  g.bus = 0;
  g.qty_max_mw = 150;
  g.bid_gbp_per_mwh = 18.0;
  Participant d;
  d.id = 1;
  d.kind = ParticipantKind::Consumer;
  d.bus = 1;
  d.qty_max_mw = 80;
  d.bid_gbp_per_mwh = 55.0;
  Participant w;
  w.id = 2;
  w.kind = ParticipantKind::WindFarm;
  w.bus = 2;
  w.qty_max_mw = 120;
  w.curtailment_cost_gbp_per_mwh = 60.0;
  w.forecast_mw = {{60, 55, 50}, {62, 58, 52}};
  c.participants = {g, d, w};

  auto text = save_case(c);
  auto back = load_case(text);
  CHECK(back.name == c.name);
  REQUIRE(back.lines.size() == 3);
  CHECK(back.lines[0].expandable);
  CHECK(back.lines[0].max_circuits == 3);
  CHECK(back.lines[0].expansion_cost_mgbp == doctest::Approx(30.0));
  CHECK(back.lines[1].reconductorable);
  REQUIRE(back.recon.lines.size() == 1);
  CHECK(back.recon.cost_for(1)->k_var_mgbp_per_mw == doctest::Approx(0.1));
  REQUIRE(back.participants.size() == 3);
  CHECK(back.participants[2].kind == ParticipantKind::WindFarm);
  CHECK(back.participants[2].forecast_mw[1][2] == doctest::Approx(52.0));
  CHECK(back.horizon.periods == 2);
  // second trip is byte-stable
  CHECK(save_case(back) == text);
}

TEST_CASE("case validation rejects broken inputs") {
  NetworkCase base = triangle();
  Participant g;
  g.id = 0;
  g.kind = ParticipantKind::Generator;
  g.bus = 0;
  g.qty_max_mw = 150;
  base.participants = {g};

  SUBCASE("zero-capacity line that is not expandable") {
    auto c = base;
    c.lines[1].capacity_mw = 0;
    CHECK_THROWS_WITH_AS(load_case(save_case(c)), doctest::Contains("not expandable"),
                         std::runtime_error);
  }
  SUBCASE("participant on a bus no corridor can reach") {
    auto c = base;
    c.buses.push_back({3, false, ""});
    c.participants[0].bus = 3;
    CHECK_THROWS_WITH_AS(load_case(save_case(c)), doctest::Contains("no corridor can ever reach"),
                         std::runtime_error);
  }
  SUBCASE("non-contiguous bus ids") {
    auto c = base;
    c.buses[2].id = 5;
    CHECK_THROWS_AS(load_case(save_case(c)), std::runtime_error);
  }
  SUBCASE("wind forecast shape must match the horizon") {
    auto c = base;
    c.horizon.periods = 2;
    Participant w;
    w.id = 1;
    w.kind = ParticipantKind::WindFarm;
    w.bus = 1;
    w.qty_max_mw = 100;
    w.curtailment_cost_gbp_per_mwh = 60;
    w.forecast_mw = {{50.0}};  // one period only
    c.participants.push_back(w);
    CHECK_THROWS_WITH_AS(load_case(save_case(c)), doctest::Contains("every period"),
                         std::runtime_error);
  }
  SUBCASE("missing required field") {
    CHECK_THROWS_WITH_AS(load_case("{\"schema_version\":1}"), doctest::Contains("missing field"),
                         std::runtime_error);
  }
  SUBCASE("malformed JSON") {
    CHECK_THROWS_WITH_AS(load_case("{nope"), doctest::Contains("invalid JSON"), std::runtime_error);
  }
}
