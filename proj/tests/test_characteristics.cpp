#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "milnelab/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

using namespace milnelab;

namespace {

// Depth tests only consume nu(|v|); a bare operator with a synthetic linear
// profile nu(r) = (1 + r)/2 keeps them independent of the kernel assembly
// (pchip reproduces linear data exactly).
CollisionOperator linear_nu_op() {
  CollisionOperator op{VelocityGrid(7.2, 4, 8)};
  std::vector<double> x, y;
  for (int i = 0; i <= 16; ++i) {
    x.push_back(0.5 * i);
    y.push_back(0.5 * (1.0 + 0.5 * i));
  }
  op.nu_radial = PchipTable(x, y);
  return op;
}

// Real collision frequency on the default grid (no gain matrix needed).
const CollisionOperator& real_nu_op() {
  static const CollisionOperator op = [] {
    CollisionOperator o{VelocityGrid(7.2, 16, 32)};
    o.q0 = calibrate_q0(o.grid);
    o.nu_radial = radial_nu_table(o.grid, o.q0);
    double lo = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 720; ++i) {
      const double r = 7.2 * i / 720.0;
      lo = std::min(lo, o.nu_radial(r) / (1.0 + r));
    }
    o.nu0 = lo;
    return o;
  }();
  return op;
}

// Time-parametrized path integral: depth = nu * elapsed time, since
// d eta = eps' ds. Integrates the path ODE backward from the state until
// eta crosses eta_prime, bisecting the final step. Shares nothing with the
// closed forms under test.
double rk_depth(const CollisionOperator& op, const ForceField& field,
                const PathState& s, double eta_prime, double ds) {
  auto deriv = [&field](const double* u, double* du) {
    const double g = field.G(std::max(u[0], 0.0));
    du[0] = u[1];
    du[1] = g * u[2] * u[2];
    du[2] = -g * u[1] * u[2];
  };
  auto step = [&deriv](double* y, double h) {
    double k1[3], k2[3], k3[3], k4[3], t[3];
    deriv(y, k1);
    for (int i = 0; i < 3; ++i) t[i] = y[i] + 0.5 * h * k1[i];
    deriv(t, k2);
    for (int i = 0; i < 3; ++i) t[i] = y[i] + 0.5 * h * k2[i];
    deriv(t, k3);
    for (int i = 0; i < 3; ++i) t[i] = y[i] + h * k3[i];
    deriv(t, k4);
    for (int i = 0; i < 3; ++i)
      y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  };
  double y[3] = {s.eta, std::abs(s.v.v_eta), s.v.v_phi};
  double time = 0;
  for (int guard = 0; guard < 4000000; ++guard) {
    double trial[3] = {y[0], y[1], y[2]};
    step(trial, -ds);
    if (trial[0] > eta_prime) {
      y[0] = trial[0];
      y[1] = trial[1];
      y[2] = trial[2];
      time += ds;
      continue;
    }
    double lo = 0, hi = ds;  // partial step crosses eta_prime
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      double probe[3] = {y[0], y[1], y[2]};
      step(probe, -mid);
      (probe[0] > eta_prime ? lo : hi) = mid;
    }
    return op.nu_at(s.v.speed()) * (time + 0.5 * (lo + hi));
  }
  FAIL("runaway path integration");
  return 0;
}

}  // namespace

TEST_CASE("path invariants carry the potential gauge") {
  const ForceField geo(0.1, ForceMode::geometric);
  const ForceField cls(0.1, ForceMode::classical);
  const PathState s{1.3, Velocity{0.4, -0.8}};
  const PathInvariants ig = path_invariants(geo, s);
  const PathInvariants ic = path_invariants(cls, s);
  CHECK(ig.E == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ic.E == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ic.C2 == -0.8);
  CHECK(ig.C2 ==
        doctest::Approx(-0.8 * std::exp(-geo.W(1.3))).epsilon(1e-15));
}

TEST_CASE("classical transport leaves velocities unchanged") {
  const ForceField cls(0.05, ForceMode::classical);
  const PathState s{2.0, Velocity{0.7, -0.3}};
  for (double ep : {0.0, 1.0, 17.0}) {
    const Velocity v = transported_velocity(cls, s, ep);
    CHECK(v.v_eta == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(v.v_phi == doctest::Approx(-0.3).epsilon(1e-15));
    const Velocity m = transported_velocity(cls, s, ep, true);
    CHECK(m.v_eta == doctest::Approx(-0.7).epsilon(1e-15));
    CHECK(m.v_phi == v.v_phi);
  }
}

TEST_CASE("transport round trips and composes along the path") {
  const ForceField geo(0.1, ForceMode::geometric);
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    const double eta = rng.uniform(0.0, 4.0);
    const double speed = rng.uniform(0.3, 3.0);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const PathState s{eta,
                      Velocity{speed * std::cos(ang), speed * std::sin(ang)}};
    const double mid = rng.uniform(0.0, eta);  // downward: always reachable
    const double low = rng.uniform(0.0, mid);
    const Velocity vm = transported_velocity(geo, s, mid);
    const Velocity vl_direct = transported_velocity(geo, s, low);
    const Velocity vl_chained =
        transported_velocity(geo, PathState{mid, vm}, low);
    CHECK(std::abs(vl_direct.v_eta - vl_chained.v_eta) <= 1e-12);
    CHECK(std::abs(vl_direct.v_phi - vl_chained.v_phi) <= 1e-12);
    const Velocity back =
        transported_velocity(geo, PathState{low, vl_direct}, eta);
    CHECK(std::abs(back.v_eta - std::abs(s.v.v_eta)) <= 1e-12);
    CHECK(std::abs(back.v_phi - s.v.v_phi) <= 1e-12);
  }
}

TEST_CASE("worked turning point hits the closed form and the bisection "
          "oracle") {
  const ForceField geo(0.01, ForceMode::geometric);
  const PathState s{0.0, Velocity{0.1, std::sqrt(0.99)}};
  REQUIRE(path_turns(geo, s));
  const double plus = eta_plus(geo, s);
  const double exact = (1.0 - std::sqrt(0.99)) / 0.01;
  CHECK(plus == doctest::Approx(exact).epsilon(1e-12));
  CHECK(plus == doctest::Approx(0.50126).epsilon(1e-4));

  // Independent bracketing bisection on phi'^2 - E.
  const double E = s.v.speed2();
  auto excess = [&](double ep) {
    const double phi = s.v.v_phi * std::exp(geo.W(ep) - geo.W(0.0));
    return phi * phi - E;
  };
  double lo = 0, hi = geo.eta_cut();
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) < 0 ? lo : hi) = mid;
  }
  CHECK(std::abs(plus - 0.5 * (lo + hi)) <= 1e-8);

  // Residual in the defining equation, and the vanishing normal component.
  const Velocity at_turn = transported_velocity(geo, s, plus);
  CHECK(std::abs(E - at_turn.v_phi * at_turn.v_phi) <= 1e-12 * E);
  CHECK(at_turn.v_eta <= 1e-6 * std::sqrt(E));
}

TEST_CASE("turning classification and residuals across random states") {
  const ForceField geo(0.1, ForceMode::geometric);
  Rng rng(47);
  int turned = 0, passed_through = 0;
  for (int i = 0; i < 200; ++i) {
    const double eta = rng.uniform(0.0, 1.5 * geo.eta_cut());
    const double speed = rng.uniform(0.3, 3.0);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const PathState s{eta,
                      Velocity{speed * std::cos(ang), speed * std::sin(ang)}};
    const double E = s.v.speed2();
    if (path_turns(geo, s)) {
      ++turned;
      const double plus = eta_plus(geo, s);
      CHECK(plus >= eta);
      const Velocity vt = transported_velocity(geo, s, plus);
      CHECK(std::abs(E - vt.v_phi * vt.v_phi) <= 1e-12 * E);
    } else {
      ++passed_through;
      CHECK_THROWS_AS(eta_plus(geo, s), Error);
      // The transported momentum never absorbs the energy, even past the
      // cutoff where the potential saturates.
      const Velocity far = transported_velocity(geo, s, 2.0 * geo.eta_cut());
      CHECK(far.v_eta > 0);
    }
  }
  CHECK(turned > 20);
  CHECK(passed_through > 20);
}

TEST_CASE("turning errors identify their cases") {
  const ForceField geo(0.1, ForceMode::geometric);
  const ForceField cls(0.1, ForceMode::classical);
  // Early turn: transport past it must refuse.
  const PathState s{0.0, Velocity{0.05, 1.0}};
  REQUIRE(path_turns(geo, s));
  CHECK_THROWS_AS(transported_velocity(geo, s, 1.0), Error);
  // Fast normal mover escapes: no turning point.
  const PathState fast{0.0, Velocity{2.0, 0.1}};
  CHECK(!path_turns(geo, fast));
  CHECK_THROWS_AS(eta_plus(geo, fast), Error);
  // Classical paths are straight.
  CHECK(!path_turns(cls, s));
  CHECK_THROWS_AS(eta_plus(cls, s), Error);
  // Pure normal motion never bends.
  const PathState normal{1.0, Velocity{0.8, 0.0}};
  CHECK(!path_turns(geo, normal));
  CHECK_THROWS_AS(eta_plus(geo, normal), Error);
  // Already at the turning point.
  const PathState grazing{1.0, Velocity{0.0, 0.9}};
  CHECK(eta_plus(geo, grazing) == 1.0);
}

TEST_CASE("optical depth reduces to the straight-line formula") {
  const CollisionOperator op = linear_nu_op();
  const ForceField cls(0.1, ForceMode::classical);
  const ForceField geo(0.1, ForceMode::geometric);
  const PathState s{3.0, Velocity{0.5, 1.2}};
  const double nu = op.nu_at(s.v.speed());
  CHECK(optical_depth(op, cls, s, 1.0) ==
        doctest::Approx(nu * 2.0 / 0.5).epsilon(1e-14));
  // v_phi = 0: no bending even in geometric mode.
  const PathState n{3.0, Velocity{0.7, 0.0}};
  CHECK(optical_depth(op, geo, n, 0.5) ==
        doctest::Approx(op.nu_at(0.7) * 2.5 / 0.7).epsilon(1e-14));
  // Degenerate cases.
  CHECK(optical_depth(op, geo, s, 3.0) == 0.0);
  CHECK(std::isinf(optical_depth(op, cls, PathState{2.0, Velocity{0.0, 0.0}},
                                 1.0)));
  CHECK(std::isinf(optical_depth(op, cls, PathState{2.0, Velocity{0.0, 0.9}},
                                 1.0)));
}

TEST_CASE("optical depth matches the time-parametrized oracle") {
  const CollisionOperator op = linear_nu_op();
  Rng rng(59);
  for (double eps : {0.1, 0.01}) {
    const ForceField geo(eps, ForceMode::geometric);
    for (int i = 0; i < 50; ++i) {
      const double b = rng.uniform(0.5, 0.8 * geo.eta_cut());
      const double a = rng.uniform(0.0, b);
      const double speed = rng.uniform(0.5, 2.5);
      // Any angle; small normal components exercise the near-turning
      // quadrature path.
      const double ve =
          (i % 5 == 0) ? 0.02 : rng.uniform(0.05, 1.0) * speed;
      const double vp2 = speed * speed - ve * ve;
      if (vp2 <= 0) continue;
      const double vp = (i % 2 ? 1 : -1) * std::sqrt(vp2);
      const PathState s{b, Velocity{ve, vp}};
      const double direct = optical_depth(op, geo, s, a);
      CHECK(direct == optical_depth(op, geo, s, a, true));
      const double oracle = rk_depth(op, geo, s, a, 2e-4);
      CHECK(std::abs(direct - oracle) <= 1e-7 * std::max(1.0, oracle));
    }
  }
}

TEST_CASE("optical depth spans bridge and plateau regions") {
  const CollisionOperator op = linear_nu_op();
  const ForceField geo(0.1, ForceMode::geometric);  // knee 1.58, cut 2.37
  const PathState s{5.0, Velocity{0.9, 0.6}};
  const double direct = optical_depth(op, geo, s, 0.2);
  const double oracle = rk_depth(op, geo, s, 0.2, 1e-4);
  CHECK(direct == doctest::Approx(oracle).epsilon(1e-7));
  // Plateau-grazing path never advances: infinite depth.
  const double w_inf = geo.w_inf();
  const PathState trapped{4.0, Velocity{0.0, 0.7}};
  REQUIRE(geo.W(4.0) == w_inf);
  CHECK(std::isinf(optical_depth(op, geo, trapped, 1.0)));
}

TEST_CASE("optical depth dominates the collision-frequency floor") {
  const CollisionOperator& op = real_nu_op();
  REQUIRE(op.nu0 > 0.4);
  const ForceField geo(0.1, ForceMode::geometric);
  Rng rng(71);
  for (int i = 0; i < 100; ++i) {
    const double b = rng.uniform(0.3, 6.0);
    const double a = rng.uniform(0.0, b);
    const double speed = rng.uniform(0.2, 6.0);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const PathState s{b,
                      Velocity{speed * std::cos(ang), speed * std::sin(ang)}};
    const double depth = optical_depth(op, geo, s, a);
    CHECK(depth >= op.nu0 * (b - a) * (1.0 - 1e-12));
  }
}

TEST_CASE("traced paths conserve their invariants") {
  const ForceField geo(0.01, ForceMode::geometric);
  // Escaping trace: long integration at the acceptance step count.
  const PathState esc{0.0, Velocity{0.6, 0.8}};
  REQUIRE(!path_turns(geo, esc));
  const PathTrace t1 = trace_path(geo, esc, 10000, 2e-3);
  CHECK(t1.e_drift <= 1e-10);
  CHECK(t1.c2_drift <= 1e-10);
  // Turning trace: rides up to the turn and back down, staying interior.
  const PathState turn{0.0, Velocity{0.1, std::sqrt(0.99)}};
  REQUIRE(path_turns(geo, turn));
  const PathTrace t2 = trace_path(geo, turn, 10000, 1.5e-3);
  CHECK(t2.e_drift <= 1e-10);
  CHECK(t2.c2_drift <= 1e-10);
  CHECK(*std::min_element(t2.eta.begin(), t2.eta.end()) >= 0.0);
  // Speed stays constant: rotation-only force.
  for (size_t k = 0; k < t2.eta.size(); k += 500) {
    const double sp = std::hypot(t2.v_eta[k], t2.v_phi[k]);
    CHECK(std::abs(sp - 1.0) <= 1e-12);
  }
}

TEST_CASE("traced endpoints agree with closed-form transport") {
  const ForceField geo(0.1, ForceMode::geometric);
  const PathState s{0.3, Velocity{0.8, 0.5}};
  const PathTrace t = trace_path(geo, s, 4000, 1e-3);
  const size_t last = t.eta.size() - 1;
  const Velocity v =
      transported_velocity(geo, s, t.eta[last], t.v_eta[last] < 0);
  CHECK(std::abs(v.v_eta - t.v_eta[last]) <= 1e-8);
  CHECK(std::abs(v.v_phi - t.v_phi[last]) <= 1e-8);
}

TEST_CASE("classical traces are straight lines") {
  const ForceField cls(0.1, ForceMode::classical);
  const PathState s{1.0, Velocity{0.5, -0.25}};
  const PathTrace t = trace_path(cls, s, 100, 1e-2);
  for (size_t k = 0; k < t.eta.size(); ++k) {
    CHECK(std::abs(t.eta[k] - (1.0 + 0.5 * 1e-2 * k)) <= 1e-13);
    CHECK(t.v_eta[k] == 0.5);
    CHECK(t.v_phi[k] == -0.25);
  }
}

TEST_CASE("trace rejects degenerate arguments") {
  const ForceField geo(0.1, ForceMode::geometric);
  const PathState s{0.0, Velocity{1.0, 0.0}};
  CHECK_THROWS_AS(trace_path(geo, s, 1, 1e-2), Error);
  CHECK_THROWS_AS(trace_path(geo, s, 100, 0.0), Error);
}
