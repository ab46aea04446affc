#include "milnelab/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace milnelab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Below this fraction of the path speed, eps' counts as turning-adjacent and
// the depth quadrature hands the slice to the sigma substitution.
constexpr double kTurnFraction = 0.05;

double sq(double x) { return x * x; }

}  // namespace

PathInvariants path_invariants(const ForceField& field, const PathState& s) {
  PathInvariants inv;
  inv.E = s.v.speed2();
  inv.C2 = s.v.v_phi * std::exp(-field.W(s.eta));
  return inv;
}

Velocity transported_velocity(const ForceField& field, const PathState& s,
                              double eta_prime, bool mirrored) {
  const double E = s.v.speed2();
  const double phi =
      s.v.v_phi * std::exp(field.W(eta_prime) - field.W(s.eta));
  double e2 = E - phi * phi;
  require(e2 >= -1e-12 * E, ErrorKind::parameter,
          "transported velocity: path turns before eta_prime; use eta_plus");
  e2 = std::max(e2, 0.0);
  const double eps = std::sqrt(e2);
  return Velocity{mirrored ? -eps : eps, phi};
}

bool path_turns(const ForceField& field, const PathState& s) {
  if (field.mode() == ForceMode::classical) return false;
  if (s.v.v_phi == 0) return false;
  const double E = s.v.speed2();
  return sq(s.v.v_phi) * std::exp(2.0 * (field.w_inf() - field.W(s.eta))) >=
         E;
}

double eta_plus(const ForceField& field, const PathState& s) {
  require(s.v.v_phi != 0, ErrorKind::parameter,
          "eta_plus: a path with v_phi = 0 never turns");
  require(path_turns(field, s), ErrorKind::parameter,
          "eta_plus: no turning point on this path (Case III)");
  if (s.v.v_eta == 0) return s.eta;
  // Turning height solves W(eta+) = w*, the potential that lets the gauge
  // momentum absorb the whole energy.
  const double E = s.v.speed2();
  const double w_star =
      field.W(s.eta) + 0.5 * std::log(E / sq(s.v.v_phi));
  if (w_star >= field.w_inf()) return field.eta_cut();
  return field.eta_at_W(w_star);
}

double optical_depth(const CollisionOperator& op, const ForceField& field,
                     const PathState& s, double eta_prime, bool /*mirrored*/) {
  // The reflected path has the same speed profile at every height, so the
  // mirrored depth equals the direct one; the flag is call-site notation.
  const double b = s.eta, a = eta_prime;
  require(a >= 0 && a <= b, ErrorKind::parameter,
          "optical depth: need 0 <= eta_prime <= state eta");
  if (a == b) return 0;

  const double E = s.v.speed2();
  if (E == 0) return kInf;
  const double nu = op.nu_at(std::sqrt(E));

  if (field.mode() == ForceMode::classical || s.v.v_phi == 0) {
    const double eps = std::sqrt(std::max(E - sq(s.v.v_phi), 0.0));
    return eps == 0 ? kInf : nu * (b - a) / eps;
  }

  const double c2 = s.v.v_phi * std::exp(-field.W(s.eta));
  const double c22 = sq(c2);
  const double eps_f = field.epsilon();
  const double knee = field.eta_knee(), cut = field.eta_cut();
  double total = 0;

  // Plateau: constant speed, so the time integral is a ratio.
  if (b > cut) {
    const double s3sq = E - c22 * std::exp(2.0 * field.w_inf());
    if (s3sq <= 0) return kInf;
    total += nu * (b - std::max(a, cut)) / std::sqrt(s3sq);
  }

  // Uncut region: with p = e^W = 1/(1 - eps y) the time integral has the
  // antiderivative -sqrt(E - C2^2 p^2) / (E p), which stays finite at a
  // turning endpoint (the sqrt singularity integrates away analytically).
  if (a < knee) {
    const double y1 = std::min(b, knee);
    const double p_lo = 1.0 / (1.0 - eps_f * a);
    const double p_hi = 1.0 / (1.0 - eps_f * y1);
    const double s_lo = std::sqrt(std::max(E - c22 * sq(p_lo), 0.0));
    const double s_hi = std::sqrt(std::max(E - c22 * sq(p_hi), 0.0));
    total += nu / (eps_f * E) * (s_lo / p_lo - s_hi / p_hi);
  }

  // Bridge: numeric. eps'(y) decreases in y, so only the top end can close
  // in on a turning point or the plateau separatrix. The top slice runs in
  // u = sqrt(y1 - y), which absorbs a turning-endpoint square root and keeps
  // the integrand bounded through every near-trapped case; the remainder
  // integrates plainly in y. Both integrands use only forward W values.
  if (b > knee && a < cut) {
    const double y0 = std::max(a, knee), y1 = std::min(b, cut);
    auto eps_at = [&](double y) {
      return std::sqrt(std::max(E - c22 * std::exp(2.0 * field.W(y)), 0.0));
    };
    const double s1 = eps_at(y1);
    double y_s = y1;
    if (s1 < kTurnFraction * std::sqrt(E)) {
      const double s_cut = kTurnFraction * std::sqrt(E);
      const double w_split = 0.5 * std::log((E - sq(s_cut)) / c22);
      y_s = w_split > field.W(y0)
                ? field.eta_at_W(
                      std::min(w_split, std::nextafter(field.w_inf(), 0.0)))
                : y0;
    }
    if (y_s > y0) {
      const double rough = nu * (y_s - y0) / std::min(eps_at(y0), eps_at(y_s));
      total += adaptive_simpson([&](double y) { return nu / eps_at(y); }, y0,
                                y_s, 1e-9 * std::max(rough, 1e-3));
    }
    if (y_s < y1) {
      const double g1 = -field.G(y1);
      // Grazing exactly at the cut: the approach time diverges.
      if (s1 == 0 && g1 == 0) return kInf;
      auto integrand = [&](double u) {
        if (u == 0)
          return s1 > 0 ? 0.0 : 2.0 * nu / std::sqrt(2.0 * E * g1);
        return 2.0 * nu * u / eps_at(y1 - u * u);
      };
      const double u1 = std::sqrt(y1 - y_s);
      const double rough = u1 * integrand(0.5 * u1);
      total +=
          adaptive_simpson(integrand, 0, u1, 1e-9 * std::max(rough, 1e-3));
    }
  }
  return total;
}

PathTrace trace_path(const ForceField& field, const PathState& s, int steps,
                     double ds) {
  require(steps >= 2, ErrorKind::parameter, "trace_path: steps must be >= 2");
  require(ds > 0, ErrorKind::parameter, "trace_path: step must be positive");
  PathTrace out;
  out.eta.reserve(steps + 1);
  out.v_eta.reserve(steps + 1);
  out.v_phi.reserve(steps + 1);

  const PathInvariants start = path_invariants(field, s);
  double y[3] = {s.eta, s.v.v_eta, s.v.v_phi};
  auto deriv = [&field](const double* u, double* du) {
    const double g = field.G(u[0]);
    du[0] = u[1];
    du[1] = g * u[2] * u[2];
    du[2] = -g * u[1] * u[2];
  };
  auto record = [&] {
    out.eta.push_back(y[0]);
    out.v_eta.push_back(y[1]);
    out.v_phi.push_back(y[2]);
    const PathInvariants inv =
        path_invariants(field, PathState{y[0], Velocity{y[1], y[2]}});
    out.e_drift = std::max(out.e_drift, std::abs(inv.E - start.E));
    out.c2_drift = std::max(out.c2_drift, std::abs(inv.C2 - start.C2));
  };
  record();
  double k1[3], k2[3], k3[3], k4[3], tmp[3];
  for (int n = 0; n < steps; ++n) {
    deriv(y, k1);
    for (int i = 0; i < 3; ++i) tmp[i] = y[i] + 0.5 * ds * k1[i];
    deriv(tmp, k2);
    for (int i = 0; i < 3; ++i) tmp[i] = y[i] + 0.5 * ds * k2[i];
    deriv(tmp, k3);
    for (int i = 0; i < 3; ++i) tmp[i] = y[i] + ds * k3[i];
    deriv(tmp, k4);
    for (int i = 0; i < 3; ++i)
      y[i] += ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    record();
  }
  return out;
}

}  // namespace milnelab
