/// Polar discretization of velocity space (v_eta, v_phi) with quadrature
/// accurate for Gaussian moments, plus the standard Maxwellian.
///
/// Layout: nodes are indexed node = ring * n_theta + j with ring speeds r_i
/// from a Gauss-Legendre rule mapped to [0, v_max] (Jacobian r folded into
/// the radial weight) and angles theta_j = 2*pi*(j + 1/2) / n_theta. The
/// half-spacing offset keeps v_eta = r cos(theta) away from zero on every
/// node and makes the specular map (v_eta, v_phi) -> (-v_eta, v_phi) an
/// exact permutation of the angles (requires even n_theta).
#pragma once

#include "milnelab/common.hpp"

#include <span>

namespace milnelab {

struct Velocity {
  double v_eta = 0;
  double v_phi = 0;
  double speed() const { return std::hypot(v_eta, v_phi); }
  double speed2() const { return v_eta * v_eta + v_phi * v_phi; }
};

/// Maxwellian mu(v) = exp(-|v|^2/2) / (2 pi) and its square root.
double maxwellian(const Velocity& v);
double sqrt_maxwellian(const Velocity& v);

class VelocityGrid {
public:
  /// Default v_max is 7.2: large enough that the truncated tails of all four
  /// fluid-moment integrands stay below 1e-9, small enough that 16 rings
  /// keep the Gauss-Legendre error at the same level.
  VelocityGrid(double v_max, int n_rings, int n_theta);

  double v_max() const { return v_max_; }
  int n_rings() const { return n_rings_; }
  int n_theta() const { return n_theta_; }
  int size() const { return n_rings_ * n_theta_; }

  int node_index(int ring, int j) const { return ring * n_theta_ + j; }
  int ring_of(int node) const { return node / n_theta_; }
  int angle_of(int node) const { return node % n_theta_; }

  double ring_speed(int ring) const { return r_[ring]; }
  double radial_weight(int ring) const { return wr_[ring]; }
  double angle(int j) const { return theta_[j]; }
  const Velocity& velocity(int node) const { return v_[node]; }
  double weight(int node) const { return w_[node]; }
  const Vec& weights() const { return w_vec_; }

  /// Node with the same ring and reflected angle: v_eta -> -v_eta.
  int specular_index(int node) const;

  /// Quadrature of a per-node field; exact for the rule's class of smooth
  /// Gaussian-weighted integrands.
  double integrate(std::span<const double> values) const;
  double integrate(const Vec& values) const;

  /// Inner product <f, g> = integrate(f * g).
  double inner(const Vec& f, const Vec& g) const;

  /// Per-node Maxwellian and its square root, precomputed.
  const Vec& mu() const { return mu_; }
  const Vec& sqrt_mu() const { return sqrt_mu_; }

private:
  double v_max_;
  int n_rings_;
  int n_theta_;
  std::vector<double> r_, wr_, theta_;
  std::vector<Velocity> v_;
  std::vector<double> w_;
  Vec w_vec_, mu_, sqrt_mu_;
};

}  // namespace milnelab
