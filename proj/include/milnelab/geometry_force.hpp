/// Geometric correction of the half-space problem: plateau cutoffs, the
/// inward force G(eta), its potential W(eta), and quantitative checks on the
/// construction (bounds and decay integrals used by the layer analysis).
#pragma once

#include "milnelab/common.hpp"

namespace milnelab {

enum class ForceMode { geometric, classical };

/// Plateau cutoff: 1 for z <= 1/2, 0 for z >= 3/4, reversed quintic
/// smoothstep across the bridge. Only the plateaus are pinned by the
/// construction; the bridge shape is a local choice and is part of the
/// reported configuration.
double upsilon(double z);
/// Same profile with knees at 1/4 and 1/2.
double upsilon0(double z);

/// Curvature-induced force on the half-space, parametrized by the Knudsen
/// number. Geometric mode carries G(eta) = -eps Ups(sqrt(eps) eta)/(1 - eps
/// eta) and its potential W = -int_0^eta G, held exactly constant beyond the
/// cutoff eta_cut = (3/4) eps^{-1/2}. Classical mode is the flat half-space:
/// G and W identically zero. Immutable after construction; shareable.
class ForceField {
public:
  /// Requires 0 < epsilon <= 1/4.
  ForceField(double epsilon, ForceMode mode);

  double epsilon() const { return eps_; }
  ForceMode mode() const { return mode_; }

  /// Force value, <= 0 everywhere and exactly 0 for eta >= eta_cut().
  double G(double eta) const;
  /// Potential, increasing from W(0) = 0 to the plateau w_inf(). Closed form
  /// -ln(1 - eps eta) below the bridge, quadrature-exact across it.
  double W(double eta) const;
  /// Plateau value of W (exact constant past the cutoff).
  double w_inf() const { return w_inf_; }
  /// Cutoff position (3/4) eps^{-1/2}.
  double eta_cut() const { return eta_cut_; }
  /// Lower bridge knee (1/2) eps^{-1/2}; below it W has the closed form
  /// -ln(1 - eps eta), which path integrals exploit.
  double eta_knee() const { return eta_lo_; }

  /// Inverse of W: the eta with W(eta) = w, for 0 <= w < w_inf(). Feeds the
  /// characteristic turning-point solve. Geometric mode only.
  double eta_at_W(double w) const;

private:
  double bridge_W(double eta) const;

  double eps_ = 0, sqrt_eps_ = 0;
  ForceMode mode_ = ForceMode::classical;
  double eta_lo_ = 0, eta_cut_ = 0;  // bridge endpoints (1/2, 3/4) eps^{-1/2}
  double w_lo_ = 0, w_inf_ = 0;      // W at the bridge endpoints
  std::vector<double> bridge_x_;     // bridge nodes
  std::vector<double> bridge_w_;     // cumulative W at the bridge nodes
};

/// Free-function spellings of the field evaluations.
double force_G(const ForceField& field, double eta);
double potential_W(const ForceField& field, double eta);

/// Integral diagnostics of the force construction. All integrals run over
/// eta in [0, inf); every integrand vanishes beyond the cutoff.
struct ForceLemmaReport {
  double epsilon = 0;
  double w_inf = 0;           // plateau of W
  double w_inf_bound = 0;     // -ln(1 - (3/4) sqrt(eps))
  double decay_l2 = 0;        // int (e^{-W} - e^{-w_inf})^2
  double force_l2 = 0;        // int G^2
  double force_l2_bound = 0;  // -eps ln(1 - (3/4) sqrt(eps))
  double tail_l2 = 0;         // int_0^inf int_eta^inf G^2 (Fubini: int y G^2)
};

/// Verifies the construction pointwise and in the mean: W within [0, 1],
/// non-decreasing, and constant past the cutoff; w_inf under its closed-form
/// bound; the three integrals finite with force_l2 under its bound. Any
/// violation is an assembly error. Classical mode returns an all-zero report
/// (every property holds trivially).
ForceLemmaReport check_force_lemma(const ForceField& field);

/// check_force_lemma across a strictly descending epsilon ladder, requiring
/// w_inf strictly decreasing along it (the plateau vanishes with epsilon).
std::vector<ForceLemmaReport> check_force_ladder(
    const std::vector<double>& epsilons);

}  // namespace milnelab
