/// Hard-sphere linearized collision operator L = nu - K on the velocity
/// grid. The gain matrix K carries the quadrature weights, is symmetric in
/// the weighted inner product, and after the conservative correction
/// annihilates the fluid modes sqrt(mu)*{1, v_eta, v_phi, (|v|^2-2)/2}
/// exactly. The kernel constant q0 is calibrated so nu(|v|=1) = 1.
#pragma once

#include "milnelab/velocity_grid.hpp"

#include <array>
#include <optional>

namespace milnelab {

struct NullBasis {
  Vec psi0, psi1, psi2, psi3;  // sqrt(mu) * {1, v_eta, v_phi, (|v|^2-2)/2}
  Mat raw;    // n x 4, columns psi0..psi3
  Mat ortho;  // n x 4, orthonormal under the quadrature inner product
  Mat combo;  // 4 x 4 with ortho = raw * combo, for off-grid evaluation
};

NullBasis make_null_basis(const VelocityGrid& grid);

/// Evaluate column i of the orthonormalized basis at an arbitrary velocity.
double ortho_basis_at(const NullBasis& basis, int i, const Velocity& v);

struct CollisionOperator {
  VelocityGrid grid;
  double q0 = 0;
  Vec nu;   // per-node collision frequency, constant on rings
  Mat K;    // dense gain matrix, weights folded in: apply = K * g
  NullBasis basis;
  double gap = 0;              // spectral gap on the orthogonal complement
  double nu0 = 0, nu1 = 0;     // fitted nu0*(1+|v|) <= nu <= nu1*(1+|v|)
  double correction_norm = 0;  // weighted Frobenius norm of the update
  PchipTable nu_radial;        // nu as a function of speed, for off-grid use

  double nu_at(double speed) const { return nu_radial(speed); }
};

/// q0 such that the discrete nu at speed 1 equals 1 (linear, so one shot).
double calibrate_q0(const VelocityGrid& grid);

/// Per-node nu by quadrature over the grid in u and 64 angles in omega.
Vec collision_frequency(const VelocityGrid& grid, double q0);

/// nu as a smooth radial profile, same quadrature, tabulated over speed.
PchipTable radial_nu_table(const VelocityGrid& grid, double q0);

/// Gain matrix: one quadrature row per output node over (u, omega), the
/// gain terms scattered at the post-collision points through interpolation
/// that is Lagrange in radius (cardinals at the ring radii) and periodic
/// cubic in theta, clamped to zero beyond v_max; finally symmetrized in the
/// weighted inner product. The radial cardinals sit on the Gauss-Legendre nodes of
/// the quadrature, so interpolation and its weighted adjoint are both exact
/// on radial polynomials and the symmetrized matrix stays pointwise
/// accurate. Not yet null-corrected.
Mat assemble_K(const VelocityGrid& grid, double q0, int threads = 1);

/// Minimal symmetric rank-<=8 update of K making (nu - K) annihilate the
/// basis exactly. Fails if the assembly residual exceeds 5% (grid too
/// coarse). Reports the Frobenius norm of W^(1/2) Delta W^(-1/2) via
/// delta_norm (scale-free across resolutions).
Mat conservative_correction(const Mat& K, const Vec& nu, const NullBasis& basis,
                            const VelocityGrid& grid, double* delta_norm = nullptr);

/// Full pipeline: calibrate, assemble, correct, fit nu bounds, measure gap.
CollisionOperator build_operator(const VelocityGrid& grid, int threads = 1,
                                 bool compute_gap = true);

Vec apply_L(const CollisionOperator& op, const Vec& f);

struct NullProjection {
  std::array<double, 4> q{};  // coefficients against the orthonormal basis
  Vec kernel_part;            // sum q_i * basis_i
  Vec remainder;              // f minus kernel part, orthogonal to the basis
};
NullProjection project_null(const CollisionOperator& op, const Vec& f);

/// Spectral gap of L on the orthogonal complement of the basis, relative to
/// the nu-weighted norm: random Rayleigh trials plus a projected generalized
/// eigen-solve. Returns the eigen-solve value; throws if it is nonpositive.
/// min_trial, if given, receives the smallest random Rayleigh quotient.
double rayleigh_gap(const CollisionOperator& op, int trials,
                    std::uint64_t seed = 2026, double* min_trial = nullptr);

/// Largest ratio of |kernel| to the Grad-style decay envelope
///   (d + 1/d) * exp(-d^2/8 - (|v|^2-|u|^2)^2 / (8 d^2)),   d = |v - u|,
/// over sampled off-diagonal pairs with separation >= min_sep.
double grad_envelope_constant(const CollisionOperator& op, double min_sep,
                              int stride, int phase);

/// Binary operator cache. Load verifies the (v_max, n_rings, n_theta, q0)
/// key and returns nothing on any mismatch or malformed file.
void save_operator(const CollisionOperator& op, const std::string& path);
std::optional<CollisionOperator> load_operator(const std::string& path,
                                               const VelocityGrid& grid,
                                               double q0);

}  // namespace milnelab
