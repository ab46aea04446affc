#include "milnelab/velocity_grid.hpp"

#include <numbers>

namespace milnelab {

double maxwellian(const Velocity& v) {
  return std::exp(-0.5 * v.speed2()) / (2.0 * std::numbers::pi);
}

double sqrt_maxwellian(const Velocity& v) {
  return std::exp(-0.25 * v.speed2()) / std::sqrt(2.0 * std::numbers::pi);
}

VelocityGrid::VelocityGrid(double v_max, int n_rings, int n_theta)
    : v_max_(v_max), n_rings_(n_rings), n_theta_(n_theta) {
  require(v_max > 0, ErrorKind::parameter, "velocity grid: v_max must be positive");
  require(n_rings >= 4, ErrorKind::parameter, "velocity grid: need at least 4 rings");
  require(n_theta >= 8, ErrorKind::parameter, "velocity grid: need at least 8 angles");
  // Even n_theta makes the specular reflection land exactly on grid nodes.
  require(n_theta % 2 == 0, ErrorKind::parameter, "velocity grid: n_theta must be even");

  std::vector<double> x, w;
  gauss_legendre(n_rings, x, w);
  r_.resize(n_rings);
  wr_.resize(n_rings);
  const double half = 0.5 * v_max;
  for (int i = 0; i < n_rings; ++i) {
    r_[i] = half * (x[i] + 1.0);
    // Polar Jacobian r folded in; angular midpoint rule contributes 2*pi/n.
    wr_[i] = half * w[i] * r_[i];
  }

  theta_.resize(n_theta);
  const double dtheta = 2.0 * std::numbers::pi / n_theta;
  for (int j = 0; j < n_theta; ++j) theta_[j] = dtheta * (j + 0.5);

  v_.resize(size());
  w_.resize(size());
  for (int i = 0; i < n_rings; ++i) {
    for (int j = 0; j < n_theta; ++j) {
      const int node = node_index(i, j);
      v_[node] = Velocity{r_[i] * std::cos(theta_[j]), r_[i] * std::sin(theta_[j])};
      w_[node] = wr_[i] * dtheta;
    }
  }

  w_vec_ = Eigen::Map<const Vec>(w_.data(), size());
  mu_.resize(size());
  sqrt_mu_.resize(size());
  for (int node = 0; node < size(); ++node) {
    mu_[node] = maxwellian(v_[node]);
    sqrt_mu_[node] = sqrt_maxwellian(v_[node]);
  }
}

int VelocityGrid::specular_index(int node) const {
  // theta -> pi - theta maps midpoint angle j to n/2 - 1 - j (mod n); this
  // flips cos(theta) and preserves sin(theta), i.e. v_eta -> -v_eta.
  const int j = angle_of(node);
  int jr = (n_theta_ / 2 - 1 - j) % n_theta_;
  if (jr < 0) jr += n_theta_;
  return node_index(ring_of(node), jr);
}

double VelocityGrid::integrate(std::span<const double> values) const {
  require(static_cast<int>(values.size()) == size(), ErrorKind::parameter,
          "velocity grid: integrand size mismatch");
  double acc = 0;
  for (int node = 0; node < size(); ++node) acc += w_[node] * values[node];
  return acc;
}

double VelocityGrid::integrate(const Vec& values) const {
  return integrate(std::span<const double>(values.data(), values.size()));
}

double VelocityGrid::inner(const Vec& f, const Vec& g) const {
  require(f.size() == size() && g.size() == size(), ErrorKind::parameter,
          "velocity grid: inner-product size mismatch");
  return (f.array() * g.array() * w_vec_.array()).sum();
}

}  // namespace milnelab
