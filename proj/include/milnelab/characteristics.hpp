/// Exact characteristic flow of the forced transport operator: conserved
/// path quantities, velocity transport between heights, turning points, and
/// optical-depth integrals. The solver consumes the closed forms; the ODE
/// tracer exists as an independent oracle.
#pragma once

#include "milnelab/collision.hpp"
#include "milnelab/geometry_force.hpp"
#include "milnelab/velocity_grid.hpp"

namespace milnelab {

struct PathState {
  double eta = 0;
  Velocity v;
};

/// Conserved quantities of the flow: E = |v|^2 (the force only rotates
/// velocity) and C2 = v_phi e^{-W(eta)} (tangential momentum in the
/// potential gauge). Together they determine the path through a point.
struct PathInvariants {
  double E = 0;
  double C2 = 0;
};

PathInvariants path_invariants(const ForceField& field, const PathState& s);

/// Velocity of the path through `s` when it crosses height eta_prime, on the
/// upward branch: (eps', phi') with eps' = sqrt(E - phi'^2) >= 0 and
/// phi' = v_phi e^{W(eta') - W(eta)}. `mirrored` flips the normal component
/// (the downward branch / specular image). Requires the path to actually
/// reach eta_prime: E >= phi'^2 there, else a turning-point error points the
/// caller at eta_plus.
Velocity transported_velocity(const ForceField& field, const PathState& s,
                              double eta_prime, bool mirrored = false);

/// Whether the path through `s` turns at finite height: the gauge momentum
/// can absorb the whole energy, v_phi^2 e^{2(W_inf - W(eta))} >= E. Always
/// false in classical mode and for v_phi = 0.
bool path_turns(const ForceField& field, const PathState& s);

/// The turning height eta_plus >= s.eta where the normal velocity vanishes.
/// Solved on the monotone potential to |E - phi'^2| <= 1e-12 E. Errors:
/// v_phi = 0 (never turns), or no turn (Case III configurations).
double eta_plus(const ForceField& field, const PathState& s);

/// Optical depth int_{eta'}^{eta} nu(v'(y)) / eps'(y) dy along the path
/// through `s`, for eta' <= s.eta. The speed is conserved, so nu factors
/// out; the remaining travel-time integral is closed-form below the bridge
/// knee and on the plateau, quadrature with a sqrt substitution at a
/// turning endpoint otherwise. Relative accuracy 1e-8. Returns +infinity
/// for paths with no normal motion (grazing states that never advance).
/// `mirrored` selects the reflected path, which has the same speed profile;
/// the flag keeps call sites aligned with the mild formulas.
double optical_depth(const CollisionOperator& op, const ForceField& field,
                     const PathState& s, double eta_prime,
                     bool mirrored = false);

/// Explicit high-order trace of the path ODE (d eta/ds = v_eta,
/// d v_eta/ds = G v_phi^2, d v_phi/ds = -G v_eta v_phi), fixed step ds.
/// Oracle only: reports the worst invariant drift over the trace.
struct PathTrace {
  std::vector<double> eta, v_eta, v_phi;
  double e_drift = 0;   // max |E - E(0)| over samples
  double c2_drift = 0;  // max |C2 - C2(0)| over samples
};

PathTrace trace_path(const ForceField& field, const PathState& s, int steps,
                     double ds);

}  // namespace milnelab
