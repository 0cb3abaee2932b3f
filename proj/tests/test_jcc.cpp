#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "drtep/backend.hpp"
#include "drtep/jcc.hpp"
#include "drtep/model_ir.hpp"
#include "drtep/rng.hpp"

using namespace drtep;

namespace {

// The hand-checkable fixture used across emitters: two samples {0, 1}, one safety row
// xi <= x (written as -xi + x >= 0), eps=1/2, theta as given. For x >= 1 the sample
// distances are {x, x-1}; the exact budget maximum is x-1, so the minimal feasible x
// is 1 + 2*theta.
JccInstance tiny_instance(double theta = 0.1) {
  JccInstance inst;
  inst.set = make_safety_set({{-1.0}}, {{-1.0}}, {0.0});
  inst.samples = {{0.0}, {1.0}};
  inst.eps = 0.5;
  inst.theta = theta;
  return inst;
}

using Emitter = std::function<ConstraintBlock(ModelIR&, std::span<const VarId>)>;

struct OptResult {
  SolveStatus status = SolveStatus::Error;
  double obj = 0;
  std::vector<double> x;
};

OptResult minimize(const JccInstance& inst, const Emitter& emit, std::span<const double> c,
                   double x_lo = -5, double x_hi = 5) {
  ModelIR ir;
  std::vector<VarId> x;
  for (int k = 0; k < inst.set.x_dim(); ++k)
    x.push_back(ir.add_var("x" + std::to_string(k), VarKind::Continuous, x_lo, x_hi));
  emit(ir, x);
  LinExpr obj;
  for (int k = 0; k < inst.set.x_dim(); ++k) obj.add(x[size_t(k)], c[size_t(k)]);
  ir.set_objective(ObjSense::Min, obj);

  auto backend = make_highs_backend();
  SolverConfig cfg;
  cfg.mip_rel_gap = 1e-9;
  auto res = backend->solve(ir, cfg);
  OptResult out;
  out.status = res.status;
  out.obj = res.objective;
  if (res.has_solution())
    for (int k = 0; k < inst.set.x_dim(); ++k) out.x.push_back(res.x[size_t(k)]);
  return out;
}

double min_x(const JccInstance& inst, const Emitter& emit, double lo = -50, double hi = 50) {
  std::vector<double> c{1.0};
  auto r = minimize(inst, emit, c, lo, hi);
  REQUIRE(r.status == SolveStatus::Optimal);
  return r.obj;
}

// Feasibility of the exact mixed-integer block at a pinned decision.
bool exact_block_feasible(const JccInstance& inst, std::span<const double> x0) {
  ModelIR ir;
  std::vector<VarId> x;
  for (int k = 0; k < inst.set.x_dim(); ++k)
    x.push_back(
        ir.add_var("x" + std::to_string(k), VarKind::Continuous, x0[size_t(k)], x0[size_t(k)]));
  emit_exact(ir, inst, x, 1e4, "jc_");
  auto backend = make_highs_backend();
  auto res = backend->solve(ir, SolverConfig{});
  REQUIRE((res.status == SolveStatus::Optimal || res.status == SolveStatus::Infeasible));
  return res.status == SolveStatus::Optimal;
}

JccInstance random_instance(Rng& rng, int max_n = 10) {
  JccInstance inst;
  int P = rng.uniform_int(1, 3), D = rng.uniform_int(1, 3), X = rng.uniform_int(1, 2);
  int N = rng.uniform_int(2, max_n);
  std::vector<std::vector<double>> a, b;
  std::vector<double> d;
  for (int p = 0; p < P; ++p) {
    std::vector<double> ap, bp;
    double nn = 0;
    while (nn < 0.01) {
      bp.clear();
      nn = 0;
      for (int k = 0; k < D; ++k) {
        bp.push_back(rng.uniform(-1, 1));
        nn += bp.back() * bp.back();
      }
    }
    for (int k = 0; k < X; ++k) ap.push_back(rng.uniform(-1, 1));
    a.push_back(ap);
    b.push_back(bp);
    d.push_back(rng.uniform(0.3, 1.5));
  }
  inst.set = make_safety_set(a, b, d);
  for (int i = 0; i < N; ++i) {
    std::vector<double> xi;
    for (int k = 0; k < D; ++k) xi.push_back(0.8 * rng.normal());
    inst.samples.push_back(xi);
  }
  inst.eps = rng.uniform(0.1, 0.6);
  inst.theta = rng.uniform(0.02, 0.2);
  return inst;
}

std::vector<double> random_cost(Rng& rng, int xdim) {
  std::vector<double> c;
  for (int k = 0; k < xdim; ++k) c.push_back(rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1 : 1));
  return c;
}

}  // namespace

TEST_CASE("point-to-set distance: slack, clamp, and min rule") {
  auto set1 = make_safety_set({{1.0}}, {{1.0}}, {0.0});  // xi - x >= 0
  std::vector<double> x{1.0};
  std::vector<double> xi_in{3.0}, xi_out{0.0};
  CHECK(distance(xi_in, set1, x) == doctest::Approx(2.0));
  CHECK(distance(xi_out, set1, x) == doctest::Approx(0.0));

  // two rows whose normalized slacks at (xi, x) are 2.0 and 0.5
  auto set2 = make_safety_set({{0.0}, {0.0}}, {{1.0}, {2.0}}, {0.0, -5.0});
  std::vector<double> xi{2.0};  // row1: 2/1 = 2.0; row2: (4-5+...)? -> (2*xi-5)/2
  xi[0] = 3.0;                  // row1 slack 3.0; row2 (6-5)/2 = 0.5
  std::vector<double> x0{0.0};
  CHECK(distance(xi, set2, x0) == doctest::Approx(0.5));
}

TEST_CASE("safety set construction computes L2 norms and validates") {
  auto set = make_safety_set({{1, 0}}, {{3.0, 4.0}}, {1.0});
  CHECK(set.rows[0].dual_norm_b == doctest::Approx(5.0));
  CHECK_THROWS(make_safety_set({{1.0}}, {{0.0}}, {0.0}));          // zero loading
  CHECK_THROWS(make_safety_set({{1.0}, {1.0}}, {{1.0}}, {0.0}));   // ragged
}

TEST_CASE("fixture: every scheme pins the minimal decision at 1.2") {
  auto inst = tiny_instance(0.1);
  auto kap = uniform_kappa(2);
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_exact(ir, inst, x, 1e3, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_exact_strengthened(ir, inst, x, 1e3, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_sla(ir, inst, x, kap, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_la(ir, inst, x, kap, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_sfla(ir, inst, x, kap, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
  std::vector<double> w{1.0};
  CHECK(min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
          return emit_wcvar(ir, inst, x, w, "jc_");
        }) == doctest::Approx(1.2).epsilon(1e-6));
}

TEST_CASE("fixture: the radius controls how far past the worst sample to stand") {
  auto inst = tiny_instance(1e-5);
  double x_star = min_x(inst, [&](ModelIR& ir, std::span<const VarId> x) {
    return emit_exact(ir, inst, x, 1e3, "jc_");
  });
  CHECK(x_star > 1.0);
  CHECK(x_star < 1.001);
  CHECK(x_star == doctest::Approx(1.0 + 2e-5).epsilon(1e-4));
}

TEST_CASE("fixture: deep interior decisions are feasible outright") {
  auto inst = tiny_instance(0.1);
  std::vector<double> x{5.0};
  CHECK(exact_feasible(inst, x));
  CHECK(exact_block_feasible(inst, x));
  CHECK(exact_budget_margin(inst, x) == doctest::Approx((5.0 - 1.0) - 0.2));
}

TEST_CASE("zero tightening makes the linear schemes infeasible") {
  auto inst = tiny_instance(0.1);
  auto kap = uniform_kappa(2, 0.0);
  std::vector<double> c{1.0};
  auto r = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
    return emit_sla(ir, inst, x, kap, "jc_");
  }, c);
  CHECK(r.status == SolveStatus::Infeasible);
  auto r2 = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
    return emit_la(ir, inst, x, kap, "jc_");
  }, c);
  CHECK(r2.status == SolveStatus::Infeasible);
}

TEST_CASE("parameter validation") {
  auto inst = tiny_instance();
  ModelIR ir;
  std::vector<VarId> x{ir.add_var("x", VarKind::Continuous, -5, 5)};
  std::vector<double> bad_kappa{0.5, 1.5};
  CHECK_THROWS(emit_sla(ir, inst, x, bad_kappa, "a_"));
  std::vector<double> short_kappa{0.5};
  CHECK_THROWS(emit_la(ir, inst, x, short_kappa, "b_"));
  std::vector<double> bad_w{0.0};
  CHECK_THROWS(emit_wcvar(ir, inst, x, bad_w, "c_"));
  CHECK_THROWS(emit_exact(ir, inst, x, -1.0, "d_"));
  SchemeParams p;
  p.kappa = {0.5, 1.0};
  p.w = {1.0};
  CHECK_NOTHROW(p.validate(2, 1));
  p.big_m = 0;
  CHECK_THROWS(p.validate(2, 1));
}

TEST_CASE("block bookkeeping matches the closed-form counts") {
  Rng rng(314);
  auto inst = random_instance(rng);
  const int N = inst.n(), P = int(inst.set.rows.size());
  auto kap = uniform_kappa(N, 0.8);

  ModelIR ir;
  std::vector<VarId> x;
  for (int k = 0; k < inst.set.x_dim(); ++k)
    x.push_back(ir.add_var("x" + std::to_string(k), VarKind::Continuous, -5, 5));

  auto ex = emit_exact(ir, inst, x, 1e4, "ex_");
  CHECK(int(ex.rows.size()) == 1 + N * P + N);
  CHECK(int(ex.z.size()) == N);
  auto exs = emit_exact_strengthened(ir, inst, x, 1e4, "exs_");
  CHECK(int(exs.rows.size()) == 1 + N * P + N + P);
  auto sla = emit_sla(ir, inst, x, kap, "sla_");
  CHECK(int(sla.rows.size()) == 1 + N * P + P);
  auto la = emit_la(ir, inst, x, kap, "la_");
  CHECK(int(la.rows.size()) == int(sla.rows.size()) - P);
  auto sfla = emit_sfla(ir, inst, x, kap, "sfla_");
  int k_budget = int(std::floor(inst.eps * N));
  CHECK(sfla.sample_rows <= k_budget * P);
  CHECK(int(sfla.rows.size()) == 1 + sfla.sample_rows + P);
  auto wc = emit_wcvar(ir, inst, x, uniform_weights(P), "wc_");
  CHECK(int(wc.rows.size()) == 1 + N * P + P);
  CHECK(int(wc.alpha.size()) == N);
}

TEST_CASE("reduced index set: strict tie exclusion and the k=0 collapse") {
  JccInstance inst;
  inst.set = make_safety_set({{-1.0}}, {{-1.0}}, {0.0});
  inst.samples = {{0.0}, {0.0}, {1.0}};  // b·xi = {0, 0, -1}
  inst.theta = 0.05;

  SUBCASE("tie at the threshold stays out (strict <)") {
    inst.eps = 0.4;  // k = floor(1.2) = 1, q = 2nd smallest of {0,0,-1} = 0
    ModelIR ir;
    std::vector<VarId> x{ir.add_var("x", VarKind::Continuous, -5, 5)};
    auto blk = emit_sfla(ir, inst, x, uniform_kappa(3), "f_");
    CHECK(blk.sample_rows == 1);  // only the xi=1 sample has b·xi=-1 < 0
  }
  SUBCASE("k=0 leaves only the threshold rows") {
    inst.eps = 0.2;  // k = 0, q = min = -1, nothing strictly below
    ModelIR ir;
    std::vector<VarId> x{ir.add_var("x", VarKind::Continuous, -5, 5)};
    auto blk = emit_sfla(ir, inst, x, uniform_kappa(3), "f_");
    CHECK(blk.sample_rows == 0);
    CHECK(int(blk.rows.size()) == 1 + 1);  // budget + one threshold row
  }
}

TEST_CASE("closed-form feasibility oracle agrees with the exact block") {
  Rng rng(2718);
  int checked = 0, feas_seen = 0, infeas_seen = 0;
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng, 8);
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<double> x;
      for (int k = 0; k < inst.set.x_dim(); ++k) x.push_back(rng.uniform(-3, 3));
      double margin = exact_budget_margin(inst, x);
      if (std::abs(margin) < 1e-6) continue;  // knife-edge: both answers defensible
      bool oracle = margin > 0;
      bool solver = exact_block_feasible(inst, x);
      CHECK(oracle == solver);
      ++checked;
      (oracle ? feas_seen : infeas_seen)++;
    }
  }
  CHECK(checked >= 60);
  CHECK(feas_seen >= 10);    // the comparison must exercise both outcomes
  CHECK(infeas_seen >= 10);
}

TEST_CASE("tightened linear scheme is an inner approximation of the exact set") {
  Rng rng(161803);
  int tested = 0;
  for (int trial = 0; trial < 100 && tested < 60; ++trial) {
    auto inst = random_instance(rng);
    auto kap = uniform_kappa(inst.n(), rng.uniform(0.3, 1.0));
    auto c = random_cost(rng, inst.set.x_dim());
    auto r = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sla(ir, inst, x, kap, "jc_");
    }, c);
    if (r.status != SolveStatus::Optimal) continue;
    // the scheme's optimum must already satisfy the exact requirement
    CHECK(exact_feasible(inst, r.x, 1e-6));
    ++tested;
  }
  CHECK(tested >= 40);
}

TEST_CASE("dropping the threshold rows never changes the optimum") {
  Rng rng(577215);
  int agreed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    std::vector<double> kap;
    for (int i = 0; i < inst.n(); ++i) kap.push_back(rng.uniform(0.0, 1.0));
    auto c = random_cost(rng, inst.set.x_dim());
    auto full = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sla(ir, inst, x, kap, "jc_");
    }, c);
    auto bare = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_la(ir, inst, x, kap, "jc_");
    }, c);
    REQUIRE(full.status == bare.status);
    if (full.status == SolveStatus::Optimal) {
      CHECK(full.obj == doctest::Approx(bare.obj).epsilon(1e-6));
      ++agreed;
    }
  }
  CHECK(agreed >= 20);
}

TEST_CASE("sample-filtered relaxation only widens, and closes at kappa=1") {
  Rng rng(884);
  int compared = 0, tight = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = random_instance(rng);
    double kval = (trial % 2 == 0) ? 1.0 : rng.uniform(0.3, 1.0);
    auto kap = uniform_kappa(inst.n(), kval);
    auto c = random_cost(rng, inst.set.x_dim());
    auto sla = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sla(ir, inst, x, kap, "jc_");
    }, c);
    auto sfla = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sfla(ir, inst, x, kap, "jc_");
    }, c);
    if (sla.status == SolveStatus::Optimal) {
      REQUIRE(sfla.status == SolveStatus::Optimal);
      CHECK(sfla.obj <= sla.obj + 1e-6);
      ++compared;
      if (kval == 1.0) {
        CHECK(sfla.obj == doctest::Approx(sla.obj).epsilon(1e-6));
        ++tight;
      }
    }
  }
  CHECK(compared >= 15);
  CHECK(tight >= 8);
}

TEST_CASE("inverse-norm weights make the CVaR scheme match the linear scheme") {
  Rng rng(424243);
  int agreed = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = random_instance(rng);
    auto kap = uniform_kappa(inst.n(), 1.0);
    auto w = inverse_norm_weights(inst.set);
    auto c = random_cost(rng, inst.set.x_dim());
    auto sla = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sla(ir, inst, x, kap, "jc_");
    }, c);
    auto wc = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_wcvar(ir, inst, x, w, "jc_");
    }, c);
    REQUIRE(sla.status == wc.status);
    if (sla.status == SolveStatus::Optimal) {
      CHECK(sla.obj == doctest::Approx(wc.obj).epsilon(1e-6));
      ++agreed;
    }
  }
  CHECK(agreed >= 15);
}

TEST_CASE("strengthened exact equals exact, and the linear scheme is exact at small eps") {
  Rng rng(101);
  int thm_checked = 0, cor_checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = random_instance(rng, 6);
    auto c = random_cost(rng, inst.set.x_dim());
    auto ex = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_exact(ir, inst, x, 1e4, "jc_");
    }, c);
    auto exs = minimize(inst, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_exact_strengthened(ir, inst, x, 1e4, "jc_");
    }, c);
    REQUIRE(ex.status == exs.status);
    if (ex.status == SolveStatus::Optimal) {
      CHECK(ex.obj == doctest::Approx(exs.obj).epsilon(1e-6));
      ++thm_checked;
    }

    // shrink the risk budget below 1/N: the tightened linear scheme becomes exact
    auto small = inst;
    small.eps = 0.9 / double(inst.n());
    auto ex0 = minimize(small, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_exact(ir, small, x, 1e4, "jc_");
    }, c);
    auto sla0 = minimize(small, [&](ModelIR& ir, std::span<const VarId> x) {
      return emit_sla(ir, small, x, uniform_kappa(small.n(), 1.0), "jc_");
    }, c);
    REQUIRE(ex0.status == sla0.status);
    if (ex0.status == SolveStatus::Optimal) {
      CHECK(ex0.obj == doctest::Approx(sla0.obj).epsilon(1e-6));
      ++cor_checked;
    }
  }
  CHECK(thm_checked >= 10);
  CHECK(cor_checked >= 10);
}

TEST_CASE("optima move the right way in the radius and the risk budget") {
  Rng rng(55);
  int theta_checked = 0, eps_checked = 0;
  for (int trial = 0; trial < 15; ++trial) {
    auto inst = random_instance(rng);
    auto kap = uniform_kappa(inst.n(), 1.0);
    auto c = random_cost(rng, inst.set.x_dim());
    auto solve_at = [&](double eps, double theta) {
      auto v = inst;
      v.eps = eps;
      v.theta = theta;
      return minimize(v, [&](ModelIR& ir, std::span<const VarId> x) {
        return emit_sla(ir, v, x, kap, "jc_");
      }, c);
    };
    auto lo = solve_at(inst.eps, 0.02), hi = solve_at(inst.eps, 0.2);
    if (lo.status == SolveStatus::Optimal && hi.status == SolveStatus::Optimal) {
      CHECK(lo.obj <= hi.obj + 1e-7);
      ++theta_checked;
    }
    auto tight = solve_at(0.1, inst.theta), loose = solve_at(0.5, inst.theta);
    if (tight.status == SolveStatus::Optimal && loose.status == SolveStatus::Optimal) {
      CHECK(tight.obj >= loose.obj - 1e-7);
      ++eps_checked;
    }
  }
  CHECK(theta_checked >= 5);
  CHECK(eps_checked >= 5);
}

TEST_CASE("joint out-of-sample probability counts full satisfaction only") {
  auto set = make_safety_set({{1.0}, {-1.0}}, {{1.0}, {1.0}}, {0.0, 5.0});
  // rows: xi - x >= 0 and xi + 5 + x >= 0
  std::vector<double> x{0.0};
  std::vector<std::vector<double>> inside{{1.0}, {2.0}, {0.0}};
  CHECK(oos_probability(x, set, inside) == doctest::Approx(1.0));
  std::vector<std::vector<double>> half{{1.0}, {-1.0}, {2.0}, {-2.0}};
  CHECK(oos_probability(x, set, half) == doctest::Approx(0.5));
  CHECK_THROWS(oos_probability(x, set, {}));
  // the -1e-9 tolerance admits boundary points
  std::vector<std::vector<double>> boundary{{0.0}};
  CHECK(oos_probability(x, set, boundary) == doctest::Approx(1.0));
}

TEST_CASE("instances round-trip through the fixture format") {
  Rng rng(12321);
  auto inst = random_instance(rng);
  auto text = jcc_to_json(inst);
  auto back = jcc_from_json(text);
  CHECK(back.eps == doctest::Approx(inst.eps));
  CHECK(back.theta == doctest::Approx(inst.theta));
  REQUIRE(back.set.rows.size() == inst.set.rows.size());
  for (size_t p = 0; p < inst.set.rows.size(); ++p) {
    CHECK(back.set.rows[p].a == inst.set.rows[p].a);
    CHECK(back.set.rows[p].b == inst.set.rows[p].b);
    CHECK(back.set.rows[p].dual_norm_b == doctest::Approx(inst.set.rows[p].dual_norm_b));
  }
  CHECK(back.samples == inst.samples);
}
