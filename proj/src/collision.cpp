#include "milnelab/collision.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>

namespace milnelab {

namespace {

constexpr int kOmegaAngles = 64;
constexpr int kRadialTableSize = 513;

// Midpoint rule for the scattering angle phi on [-pi/2, pi/2]. The same
// rule is used in nu and in K so that their difference keeps the fluid
// modes near-null before the conservative correction.
struct OmegaRule {
  double h;
  std::array<double, kOmegaAngles> cos_phi, sin_phi;
  double weight_sum;  // integral of cos(phi), about 2

  OmegaRule() {
    h = std::numbers::pi / kOmegaAngles;
    weight_sum = 0;
    for (int m = 0; m < kOmegaAngles; ++m) {
      const double phi = -0.5 * std::numbers::pi + h * (m + 0.5);
      cos_phi[m] = std::cos(phi);
      sin_phi[m] = std::sin(phi);
      weight_sum += h * cos_phi[m];
    }
  }
};

const OmegaRule& omega_rule() {
  static const OmegaRule rule;
  return rule;
}

// sum_u w_u mu(u) |v - u| for a probe at the given speed, placed on the
// first angle of the theta ladder. The grid is invariant under rotations
// by the angular spacing, so on-ring values are direction-independent.
double mean_relative_speed(const VelocityGrid& grid, double speed) {
  const double t0 = grid.angle(0);
  const double px = speed * std::cos(t0);
  const double py = speed * std::sin(t0);
  double acc = 0;
  for (int k = 0; k < grid.size(); ++k) {
    const Velocity& u = grid.velocity(k);
    acc += grid.weight(k) * maxwellian(u) * std::hypot(px - u.v_eta, py - u.v_phi);
  }
  return acc;
}

// Lagrange cardinal functions at the ring radii, evaluated by the
// barycentric formula. Radial interpolation through them is exact on
// polynomials of degree n_rings - 1, and because the radii are the
// Gauss-Legendre nodes of the radial quadrature, the weighted adjoint of
// this interpolation is exact on the same polynomials. That keeps the
// symmetrized operator pointwise accurate, where local radial tents pick
// up order-one deposition errors near the clustered outer rings.
struct RadialCardinals {
  std::vector<double> radius, bary;

  explicit RadialCardinals(const VelocityGrid& grid)
      : radius(grid.n_rings()), bary(grid.n_rings(), 1.0) {
    for (int i = 0; i < grid.n_rings(); ++i) radius[i] = grid.ring_speed(i);
    for (size_t i = 0; i < radius.size(); ++i)
      for (size_t k = 0; k < radius.size(); ++k)
        if (k != i) bary[i] /= (radius[i] - radius[k]);
  }

  void eval(double r, double* out) const {
    const int n = static_cast<int>(radius.size());
    for (int i = 0; i < n; ++i)
      if (std::abs(r - radius[i]) < 1e-13) {
        for (int k = 0; k < n; ++k) out[k] = (k == i) ? 1.0 : 0.0;
        return;
      }
    double denom = 0;
    for (int i = 0; i < n; ++i) {
      out[i] = bary[i] / (r - radius[i]);
      denom += out[i];
    }
    for (int i = 0; i < n; ++i) out[i] /= denom;
  }
};

// Gain and loss rows for output velocity v: quadrature over u (grid) and
// omega (half-circle with the |cos phi| factor), with the two gain terms
// sqrt(mu(v*)) f(u*) + sqrt(mu(u*)) f(v*) scattered through the
// interpolation adjoint. The sqrt(mu) factors are evaluated analytically
// at the post-collision points, so matrix entries stay uniformly bounded.
// Feet beyond v_max are dropped (hard cutoff of the velocity domain).
void assemble_row(const VelocityGrid& grid, const RadialCardinals& cards,
                  double q0, const Velocity& v, double* gain_row,
                  double* loss_row) {
  const OmegaRule& om = omega_rule();
  const double sqmu_v = sqrt_maxwellian(v);
  const int nt = grid.n_theta();
  const int nr = grid.n_rings();
  std::vector<double> card(nr);

  auto deposit = [&](double px, double py, double coef) {
    const double r = std::hypot(px, py);
    if (r > grid.v_max()) return;
    double theta = std::atan2(py, px);
    if (theta < 0) theta += 2.0 * std::numbers::pi;
    const double t = theta * nt / (2.0 * std::numbers::pi) - 0.5;
    const double fl = std::floor(t);
    const double f = t - fl;
    int ja = static_cast<int>(fl) % nt;
    if (ja < 0) ja += nt;
    // Periodic cubic Lagrange stencil around the foot angle. The quartic
    // angular error keeps the weighted adjoint of the deposition accurate
    // on the innermost rings, where foot angles vary fastest; linear tents
    // leave the symmetrized operator with an O(dtheta^2) defect there that
    // does not shrink under the standard (rings, theta) refinement pair.
    const int js[4] = {(ja + nt - 1) % nt, ja, (ja + 1) % nt, (ja + 2) % nt};
    const double cs[4] = {coef * (-f * (f - 1.0) * (f - 2.0) / 6.0),
                          coef * ((f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0),
                          coef * (-f * (f + 1.0) * (f - 2.0) / 2.0),
                          coef * (f * (f + 1.0) * (f - 1.0) / 6.0)};
    cards.eval(r, card.data());
    for (int i = 0; i < nr; ++i)
      for (int s = 0; s < 4; ++s) gain_row[i * nt + js[s]] += cs[s] * card[i];
  };

  for (int j = 0; j < grid.size(); ++j) {
    const Velocity& u = grid.velocity(j);
    const double dx = v.v_eta - u.v_eta;
    const double dy = v.v_phi - u.v_phi;
    const double dn = std::hypot(dx, dy);
    if (dn < 1e-14) continue;  // q vanishes at zero relative speed
    const double ex = dx / dn, ey = dy / dn;
    const double wj = grid.weight(j);
    const double sqmu_u = sqrt_maxwellian(u);

    loss_row[j] += wj * q0 * dn * om.weight_sum * sqmu_u * sqmu_v;

    const double coef_base = wj * om.h * q0 * dn * sqmu_u;
    for (int m = 0; m < kOmegaAngles; ++m) {
      const double c = om.cos_phi[m], sn = om.sin_phi[m];
      const double ox = ex * c - ey * sn;
      const double oy = ey * c + ex * sn;
      const double proj = dn * c;  // omega . (v - u), nonnegative on the rule
      const double vsx = v.v_eta - ox * proj, vsy = v.v_phi - oy * proj;
      const double usx = u.v_eta + ox * proj, usy = u.v_phi + oy * proj;
      const double sq_vs = sqrt_maxwellian(Velocity{vsx, vsy});
      const double sq_us = sqrt_maxwellian(Velocity{usx, usy});
      const double coef = coef_base * c;
      deposit(usx, usy, coef * sq_vs);
      deposit(vsx, vsy, coef * sq_us);
    }
  }
}

// Bitwise symmetrization in the weighted inner product: makes W*K exactly
// symmetric, so self-adjointness of L holds to roundoff.
void symmetrize_weighted(Mat& K, const Vec& w) {
  Mat M = w.asDiagonal() * K;
  M = 0.5 * (M + M.transpose()).eval();
  K = w.cwiseInverse().asDiagonal() * M;
}

}  // namespace

NullBasis make_null_basis(const VelocityGrid& grid) {
  const int n = grid.size();
  NullBasis b;
  b.raw.resize(n, 4);
  for (int k = 0; k < n; ++k) {
    const Velocity& v = grid.velocity(k);
    const double sm = sqrt_maxwellian(v);
    b.raw(k, 0) = sm;
    b.raw(k, 1) = sm * v.v_eta;
    b.raw(k, 2) = sm * v.v_phi;
    b.raw(k, 3) = sm * 0.5 * (v.speed2() - 2.0);
  }
  b.psi0 = b.raw.col(0);
  b.psi1 = b.raw.col(1);
  b.psi2 = b.raw.col(2);
  b.psi3 = b.raw.col(3);

  // Modified Gram-Schmidt with one re-orthogonalization pass, tracking the
  // combination matrix so the orthonormal fields can be evaluated off-grid.
  b.ortho = b.raw;
  b.combo = Mat::Identity(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < i; ++j) {
        const double c = grid.inner(b.ortho.col(j), b.ortho.col(i));
        b.ortho.col(i) -= c * b.ortho.col(j);
        b.combo.col(i) -= c * b.combo.col(j);
      }
    }
    const double nrm = std::sqrt(grid.inner(b.ortho.col(i), b.ortho.col(i)));
    require(nrm > 1e-8, ErrorKind::assembly, "null basis degenerate on this grid");
    b.ortho.col(i) /= nrm;
    b.combo.col(i) /= nrm;
  }
  return b;
}

double ortho_basis_at(const NullBasis& basis, int i, const Velocity& v) {
  const double sm = sqrt_maxwellian(v);
  const double raw[4] = {sm, sm * v.v_eta, sm * v.v_phi,
                         sm * 0.5 * (v.speed2() - 2.0)};
  double acc = 0;
  for (int k = 0; k < 4; ++k) acc += basis.combo(k, i) * raw[k];
  return acc;
}

double calibrate_q0(const VelocityGrid& grid) {
  const double a1 = mean_relative_speed(grid, 1.0);
  require(a1 > 0, ErrorKind::assembly, "calibration: degenerate mean relative speed");
  return 1.0 / (omega_rule().weight_sum * a1);
}

Vec collision_frequency(const VelocityGrid& grid, double q0) {
  require(q0 > 0, ErrorKind::parameter, "collision frequency: q0 must be positive");
  Vec nu(grid.size());
  for (int i = 0; i < grid.n_rings(); ++i) {
    const double value =
        q0 * omega_rule().weight_sum * mean_relative_speed(grid, grid.ring_speed(i));
    for (int j = 0; j < grid.n_theta(); ++j) nu[grid.node_index(i, j)] = value;
  }
  return nu;
}

PchipTable radial_nu_table(const VelocityGrid& grid, double q0) {
  std::vector<double> x(kRadialTableSize), y(kRadialTableSize);
  for (int k = 0; k < kRadialTableSize; ++k) {
    x[k] = grid.v_max() * k / (kRadialTableSize - 1);
    y[k] = q0 * omega_rule().weight_sum * mean_relative_speed(grid, x[k]);
  }
  return PchipTable(std::move(x), std::move(y));
}

Mat assemble_K(const VelocityGrid& grid, double q0, int threads) {
  require(q0 > 0, ErrorKind::parameter, "assemble_K: q0 must be positive");
  const int n = grid.size();
  const RadialCardinals cards(grid);

  // Each output row is written by exactly one worker, so the assembly is
  // bitwise identical for any thread count.
  Mat K(n, n);
  parallel_for(n, threads, [&](int k) {
    std::vector<double> gain(n, 0.0), loss(n, 0.0);
    assemble_row(grid, cards, q0, grid.velocity(k), gain.data(), loss.data());
    for (int j = 0; j < n; ++j) K(k, j) = gain[j] - loss[j];
  });

  symmetrize_weighted(K, grid.weights());
  return K;
}

Mat conservative_correction(const Mat& K, const Vec& nu, const NullBasis& basis,
                            const VelocityGrid& grid, double* delta_norm) {
  const Vec& w = grid.weights();
  for (int i = 0; i < 4; ++i) {
    const Vec r = nu.cwiseProduct(basis.raw.col(i)) - K * basis.raw.col(i);
    const double rel = std::sqrt(grid.inner(r, r)) /
                       std::sqrt(grid.inner(basis.raw.col(i), basis.raw.col(i)));
    require(rel <= 0.05, ErrorKind::assembly,
            "conservative correction: assembly residual exceeds 5% (grid too coarse)");
  }

  const Mat& P = basis.ortho;                       // n x 4
  const Mat R = nu.asDiagonal() * P - K * P;        // target defect
  const Mat WP = w.asDiagonal() * P;
  const Mat WR = w.asDiagonal() * R;
  const Mat S4 = P.transpose() * WR;                // symmetric since W*L is
  Mat delta = R * WP.transpose() + P * WR.transpose() - P * (S4 * WP.transpose());
  if (delta_norm) {
    // Frobenius norm of W^(1/2) delta W^(-1/2): the natural operator norm
    // here, and invariant under grid refinement (plain Frobenius grows with
    // the node count even when per-mode defects do not).
    const Vec sqw = w.cwiseSqrt();
    *delta_norm =
        (sqw.asDiagonal() * delta * sqw.cwiseInverse().asDiagonal()).norm();
  }
  Mat corrected = K + delta;
  symmetrize_weighted(corrected, w);
  return corrected;
}

CollisionOperator build_operator(const VelocityGrid& grid, int threads,
                                 bool compute_gap) {
  CollisionOperator op{grid};
  op.q0 = calibrate_q0(grid);
  op.nu = collision_frequency(grid, op.q0);
  op.basis = make_null_basis(grid);
  Mat raw = assemble_K(grid, op.q0, threads);
  op.K = conservative_correction(raw, op.nu, op.basis, grid, &op.correction_norm);

  op.nu0 = std::numeric_limits<double>::infinity();
  op.nu1 = 0;
  for (int k = 0; k < grid.size(); ++k) {
    const double ratio = op.nu[k] / (1.0 + grid.velocity(k).speed());
    op.nu0 = std::min(op.nu0, ratio);
    op.nu1 = std::max(op.nu1, ratio);
  }
  op.nu_radial = radial_nu_table(grid, op.q0);
  if (compute_gap) op.gap = rayleigh_gap(op, 16);
  return op;
}

Vec apply_L(const CollisionOperator& op, const Vec& f) {
  require(f.size() == op.grid.size(), ErrorKind::parameter,
          "apply_L: field size mismatch");
  return op.nu.cwiseProduct(f) - op.K * f;
}

NullProjection project_null(const CollisionOperator& op, const Vec& f) {
  require(f.size() == op.grid.size(), ErrorKind::parameter,
          "project_null: field size mismatch");
  NullProjection p;
  p.kernel_part = Vec::Zero(f.size());
  for (int i = 0; i < 4; ++i) {
    p.q[i] = op.grid.inner(op.basis.ortho.col(i), f);
    p.kernel_part += p.q[i] * op.basis.ortho.col(i);
  }
  p.remainder = f - p.kernel_part;
  return p;
}

double rayleigh_gap(const CollisionOperator& op, int trials, std::uint64_t seed,
                    double* min_trial) {
  require(trials >= 10, ErrorKind::parameter, "rayleigh_gap: need at least 10 trials");
  const int n = op.grid.size();
  const Vec& w = op.grid.weights();
  const Vec sqw = w.cwiseSqrt();

  // Similarity transform to a Euclidean-symmetric pencil: x = W^(1/2) w.
  const Mat L = Mat(op.nu.asDiagonal()) - op.K;
  Mat S = sqw.asDiagonal() * L * sqw.cwiseInverse().asDiagonal();
  S = 0.5 * (S + S.transpose()).eval();

  const Mat psi_tilde = sqw.asDiagonal() * op.basis.ortho;
  Eigen::HouseholderQR<Mat> qr(psi_tilde);
  const Mat Qfull = qr.householderQ() * Mat::Identity(n, n);
  const Mat Q2 = Qfull.rightCols(n - 4);

  const Mat A2 = Q2.transpose() * S * Q2;
  const Mat B2 = Q2.transpose() * Mat(op.nu.asDiagonal()) * Q2;
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(
      0.5 * (A2 + A2.transpose()), 0.5 * (B2 + B2.transpose()),
      Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  require(es.info() == Eigen::Success, ErrorKind::numerical,
          "rayleigh_gap: eigen-solve failed");
  const double gap = es.eigenvalues()(0);

  Rng rng(seed);
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    Vec f(n);
    for (int k = 0; k < n; ++k) f[k] = rng.normal();
    const Vec rem = project_null(op, f).remainder;
    const double num = op.grid.inner(rem, apply_L(op, rem));
    const double den = op.grid.inner(rem, op.nu.cwiseProduct(rem));
    if (den > 0) best = std::min(best, num / den);
  }
  if (min_trial) *min_trial = best;

  require(gap > 0, ErrorKind::assembly, "rayleigh_gap: nonpositive spectral gap");
  return gap;
}

double grad_envelope_constant(const CollisionOperator& op, double min_sep,
                              int stride, int phase) {
  require(stride >= 1 && phase >= 0 && phase < stride, ErrorKind::parameter,
          "grad envelope: bad sampling stride");
  const int n = op.grid.size();
  double worst = 0;
  for (int i = phase; i < n; i += stride) {
    const Velocity& a = op.grid.velocity(i);
    for (int j = i + 1; j < n; j += stride) {
      const Velocity& b = op.grid.velocity(j);
      const double dx = a.v_eta - b.v_eta, dy = a.v_phi - b.v_phi;
      const double d = std::hypot(dx, dy);
      if (d < min_sep) continue;
      const double off_shell = a.speed2() - b.speed2();
      const double env = (d + 1.0 / d) *
                         std::exp(-d * d / 8.0 - off_shell * off_shell / (8.0 * d * d));
      const double kernel = std::abs(op.K(i, j)) / op.grid.weight(j);
      worst = std::max(worst, kernel / env);
    }
  }
  return worst;
}

namespace {

constexpr std::uint64_t kCacheMagic = 0x4d494c4e454f5031ULL;  // "MILNEOP1"

bool close(double a, double b) {
  return std::abs(a - b) <= 1e-14 * std::max({1.0, std::abs(a), std::abs(b)});
}

bool write_block(std::FILE* f, const void* p, size_t bytes) {
  return std::fwrite(p, 1, bytes, f) == bytes;
}

bool read_block(std::FILE* f, void* p, size_t bytes) {
  return std::fread(p, 1, bytes, f) == bytes;
}

}  // namespace

void save_operator(const CollisionOperator& op, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  require(f != nullptr, ErrorKind::parameter, "operator cache: cannot open " + path);
  bool ok = true;
  const std::int32_t nr = op.grid.n_rings(), nt = op.grid.n_theta();
  const double header[2] = {op.grid.v_max(), op.q0};
  const double stats[4] = {op.gap, op.nu0, op.nu1, op.correction_norm};
  ok = ok && write_block(f, &kCacheMagic, sizeof kCacheMagic);
  ok = ok && write_block(f, header, sizeof header);
  ok = ok && write_block(f, &nr, sizeof nr) && write_block(f, &nt, sizeof nt);
  ok = ok && write_block(f, stats, sizeof stats);
  const int n = op.grid.size();
  ok = ok && write_block(f, op.nu.data(), sizeof(double) * n);
  ok = ok && write_block(f, op.K.data(), sizeof(double) * n * n);
  const auto& tab = op.nu_radial;
  const std::int32_t tn = static_cast<std::int32_t>(tab.abscissae().size());
  ok = ok && write_block(f, &tn, sizeof tn);
  ok = ok && write_block(f, tab.abscissae().data(), sizeof(double) * tn);
  ok = ok && write_block(f, tab.values().data(), sizeof(double) * tn);
  ok = ok && write_block(f, tab.slopes().data(), sizeof(double) * tn);
  std::fclose(f);
  require(ok, ErrorKind::numerical, "operator cache: short write to " + path);
}

std::optional<CollisionOperator> load_operator(const std::string& path,
                                               const VelocityGrid& grid,
                                               double q0) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return std::nullopt;
  auto bail = [&]() {
    std::fclose(f);
    return std::nullopt;
  };

  std::uint64_t magic = 0;
  double header[2], stats[4];
  std::int32_t nr = 0, nt = 0;
  if (!read_block(f, &magic, sizeof magic) || magic != kCacheMagic) return bail();
  if (!read_block(f, header, sizeof header)) return bail();
  if (!read_block(f, &nr, sizeof nr) || !read_block(f, &nt, sizeof nt)) return bail();
  if (!read_block(f, stats, sizeof stats)) return bail();
  if (!close(header[0], grid.v_max()) || !close(header[1], q0) ||
      nr != grid.n_rings() || nt != grid.n_theta())
    return bail();

  CollisionOperator op{grid};
  op.q0 = q0;
  op.gap = stats[0];
  op.nu0 = stats[1];
  op.nu1 = stats[2];
  op.correction_norm = stats[3];
  const int n = grid.size();
  op.nu.resize(n);
  op.K.resize(n, n);
  if (!read_block(f, op.nu.data(), sizeof(double) * n)) return bail();
  if (!read_block(f, op.K.data(), sizeof(double) * n * n)) return bail();
  std::int32_t tn = 0;
  if (!read_block(f, &tn, sizeof tn) || tn < 2 || tn > 100000) return bail();
  std::vector<double> x(tn), y(tn), d(tn);
  if (!read_block(f, x.data(), sizeof(double) * tn)) return bail();
  if (!read_block(f, y.data(), sizeof(double) * tn)) return bail();
  if (!read_block(f, d.data(), sizeof(double) * tn)) return bail();
  std::fclose(f);

  op.nu_radial = PchipTable::from_slopes(std::move(x), std::move(y), std::move(d));
  op.basis = make_null_basis(grid);
  return op;
}

}  // namespace milnelab
