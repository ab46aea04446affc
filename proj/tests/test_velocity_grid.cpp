#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "milnelab/velocity_grid.hpp"

#include <cmath>
#include <numbers>

using namespace milnelab;

namespace {

// Worst relative error over the even Gaussian moments that the solver
// relies on: mass, both second moments, |v|^2, |v|^4, and the squared
// thermal mode ((|v|^2 - 2)/2)^2. Exact values 1, 1, 1, 2, 8, 1.
double worst_moment_error(const VelocityGrid& g) {
  const int n = g.size();
  Vec m0(n), m1(n), m2(n), e1(n), e2(n), t2(n);
  for (int k = 0; k < n; ++k) {
    const Velocity& v = g.velocity(k);
    const double mu = maxwellian(v);
    const double s2 = v.speed2();
    m0[k] = mu;
    m1[k] = v.v_eta * v.v_eta * mu;
    m2[k] = v.v_phi * v.v_phi * mu;
    e1[k] = s2 * mu;
    e2[k] = s2 * s2 * mu;
    const double psi3 = 0.5 * (s2 - 2.0);
    t2[k] = psi3 * psi3 * mu;
  }
  double worst = 0;
  worst = std::max(worst, std::abs(g.integrate(m0) - 1.0));
  worst = std::max(worst, std::abs(g.integrate(m1) - 1.0));
  worst = std::max(worst, std::abs(g.integrate(m2) - 1.0));
  worst = std::max(worst, std::abs(g.integrate(e1) - 2.0) / 2.0);
  worst = std::max(worst, std::abs(g.integrate(e2) - 8.0) / 8.0);
  worst = std::max(worst, std::abs(g.integrate(t2) - 1.0));
  return worst;
}

double worst_odd_moment(const VelocityGrid& g) {
  const int n = g.size();
  Vec a(n), b(n), c(n), d(n);
  for (int k = 0; k < n; ++k) {
    const Velocity& v = g.velocity(k);
    const double mu = maxwellian(v);
    a[k] = v.v_eta * mu;
    b[k] = v.v_phi * mu;
    c[k] = v.v_eta * v.v_eta * v.v_eta * mu;
    d[k] = v.v_eta * v.v_phi * v.v_phi * mu;
  }
  double worst = 0;
  for (const Vec* f : {&a, &b, &c, &d})
    worst = std::max(worst, std::abs(g.integrate(*f)));
  return worst;
}

}  // namespace

TEST_CASE("gaussian moments at production resolution") {
  VelocityGrid g(7.2, 16, 32);
  CHECK(worst_moment_error(g) <= 1e-8);
  CHECK(worst_odd_moment(g) <= 1e-12);
}

TEST_CASE("refinement never worsens the moment battery") {
  VelocityGrid coarse(7.2, 16, 32);
  VelocityGrid mid(7.2, 20, 40);
  VelocityGrid fine(7.2, 24, 48);
  const double e0 = worst_moment_error(coarse);
  const double e1 = worst_moment_error(mid);
  const double e2 = worst_moment_error(fine);
  CHECK(e1 <= e0 + 1e-12);
  CHECK(e2 <= e1 + 1e-12);
}

TEST_CASE("a 6-sigma box leaves visible tail mass in the thermal moment") {
  // With v_max = 6 the squared thermal mode loses about 5e-6 of its mass to
  // truncation, which is why the default box extends to 7.2.
  VelocityGrid g(6.0, 16, 32);
  const int n = g.size();
  Vec t2(n);
  for (int k = 0; k < n; ++k) {
    const Velocity& v = g.velocity(k);
    const double psi3 = 0.5 * (v.speed2() - 2.0);
    t2[k] = psi3 * psi3 * maxwellian(v);
  }
  const double err = g.integrate(t2) - 1.0;
  CHECK(err == doctest::Approx(-4.950e-6).epsilon(0.02));
  CHECK(worst_moment_error(g) > 1e-8);
}

TEST_CASE("node layout and weights") {
  VelocityGrid g(7.2, 16, 32);
  CHECK(g.size() == 16 * 32);
  for (int k = 0; k < g.size(); ++k) {
    CHECK(g.weight(k) > 0);
    const Velocity& v = g.velocity(k);
    const double r = g.ring_speed(g.ring_of(k));
    CHECK(v.speed() == doctest::Approx(r).epsilon(1e-14));
    // Half-offset angles keep every node strictly off the v_eta = 0 axis.
    CHECK(std::abs(v.v_eta) > 1e-12);
  }
  // Constant integrand: quadrature recovers the disk area exactly.
  Vec ones = Vec::Ones(g.size());
  const double area = std::numbers::pi * 7.2 * 7.2;
  CHECK(g.integrate(ones) == doctest::Approx(area).epsilon(1e-13));
}

TEST_CASE("specular reflection is an exact node permutation") {
  VelocityGrid g(7.2, 12, 24);
  for (int k = 0; k < g.size(); ++k) {
    const int s = g.specular_index(k);
    CHECK(g.ring_of(s) == g.ring_of(k));
    CHECK(g.specular_index(s) == k);
    const Velocity& v = g.velocity(k);
    const Velocity& vs = g.velocity(s);
    CHECK(vs.v_eta == doctest::Approx(-v.v_eta).epsilon(1e-13));
    CHECK(vs.v_phi == doctest::Approx(v.v_phi).epsilon(1e-13));
  }
}

TEST_CASE("inner product matches integrate of the product") {
  VelocityGrid g(7.2, 8, 16);
  Rng rng(17);
  Vec f(g.size()), h(g.size());
  for (int k = 0; k < g.size(); ++k) {
    f[k] = rng.normal();
    h[k] = rng.normal();
  }
  Vec prod = f.array() * h.array();
  CHECK(g.inner(f, h) == doctest::Approx(g.integrate(prod)).epsilon(1e-13));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(VelocityGrid(0.0, 16, 32), Error);
  CHECK_THROWS_AS(VelocityGrid(7.2, 3, 32), Error);
  CHECK_THROWS_AS(VelocityGrid(7.2, 16, 6), Error);
  CHECK_THROWS_AS(VelocityGrid(7.2, 16, 31), Error);
  VelocityGrid g(7.2, 8, 16);
  Vec wrong = Vec::Zero(g.size() + 1);
  CHECK_THROWS_AS(g.integrate(wrong), Error);
}
