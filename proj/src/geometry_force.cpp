#include "milnelab/geometry_force.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace milnelab {

namespace {

// Bridge nodes for the cumulative-W table. The table anchors per-call
// quadrature (value at the nearest node plus a short fixed-rule stretch), so
// W is quadrature-exact everywhere and the node count only affects speed.
constexpr int kBridgeNodes = 97;

const std::pair<std::vector<double>, std::vector<double>>& stretch_rule() {
  static const auto rule = [] {
    std::pair<std::vector<double>, std::vector<double>> r;
    gauss_legendre(9, r.first, r.second);
    return r;
  }();
  return rule;
}

// Integral of -G over one table stretch. Within the bridge -G is a single
// quintic-over-linear analytic piece, so a fixed 9-point rule on a table
// sub-interval is exact to machine precision; the flat per-call cost matters
// because path-depth quadratures evaluate W inside their own integrands.
double stretch_neg_G(const ForceField& field, double a, double b) {
  const auto& [x, w] = stretch_rule();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double acc = 0;
  for (size_t i = 0; i < x.size(); ++i) acc -= w[i] * field.G(c + h * x[i]);
  return h * acc;
}

}  // namespace

double upsilon(double z) { return 1.0 - smoothstep(4.0 * z - 2.0); }

double upsilon0(double z) { return 1.0 - smoothstep(4.0 * z - 1.0); }

ForceField::ForceField(double epsilon, ForceMode mode)
    : eps_(epsilon), mode_(mode) {
  require(epsilon > 0 && epsilon <= 0.25, ErrorKind::parameter,
          "force field: epsilon must lie in (0, 1/4]");
  sqrt_eps_ = std::sqrt(eps_);
  eta_lo_ = 0.5 / sqrt_eps_;
  eta_cut_ = 0.75 / sqrt_eps_;
  if (mode_ == ForceMode::classical) return;

  w_lo_ = -std::log1p(-0.5 * sqrt_eps_);
  bridge_x_.resize(kBridgeNodes);
  bridge_w_.resize(kBridgeNodes);
  const double h = (eta_cut_ - eta_lo_) / (kBridgeNodes - 1);
  double acc = w_lo_;
  bridge_x_[0] = eta_lo_;
  bridge_w_[0] = acc;
  for (int i = 1; i < kBridgeNodes; ++i) {
    const double a = eta_lo_ + (i - 1) * h;
    const double b = (i == kBridgeNodes - 1) ? eta_cut_ : eta_lo_ + i * h;
    acc += stretch_neg_G(*this, a, b);
    bridge_x_[i] = b;
    bridge_w_[i] = acc;
  }
  w_inf_ = acc;
}

double ForceField::G(double eta) const {
  require(eta >= 0, ErrorKind::parameter, "force field: eta must be >= 0");
  if (mode_ == ForceMode::classical) return 0;
  const double z = sqrt_eps_ * eta;
  if (z >= 0.75) return 0;
  return -eps_ * upsilon(z) / (1.0 - eps_ * eta);
}

double ForceField::bridge_W(double eta) const {
  const auto it =
      std::upper_bound(bridge_x_.begin(), bridge_x_.end(), eta);
  const int k = std::max<int>(0, static_cast<int>(it - bridge_x_.begin()) - 1);
  return bridge_w_[k] + stretch_neg_G(*this, bridge_x_[k], eta);
}

double ForceField::W(double eta) const {
  require(eta >= 0, ErrorKind::parameter, "force field: eta must be >= 0");
  if (mode_ == ForceMode::classical) return 0;
  if (eta >= eta_cut_) return w_inf_;
  if (eta <= eta_lo_) return -std::log1p(-eps_ * eta);
  return bridge_W(eta);
}

double ForceField::eta_at_W(double w) const {
  require(mode_ == ForceMode::geometric, ErrorKind::parameter,
          "force field: inverse potential needs geometric mode");
  require(w >= 0 && w < w_inf_, ErrorKind::parameter,
          "force field: inverse potential needs 0 <= w < W plateau");
  if (w <= w_lo_) return -std::expm1(-w) / eps_;

  // Bracket from the bridge table, then Newton with W' = -G, falling back
  // to bisection when the step leaves the bracket (W' vanishes at the cut,
  // so pure Newton stalls for w near the plateau).
  const auto it = std::upper_bound(bridge_w_.begin(), bridge_w_.end(), w);
  int k = std::max<int>(0, static_cast<int>(it - bridge_w_.begin()) - 1);
  k = std::min<int>(k, static_cast<int>(bridge_w_.size()) - 2);
  double lo = bridge_x_[k], hi = bridge_x_[k + 1];
  double eta = 0.5 * (lo + hi);
  for (int iter = 0; iter < 80; ++iter) {
    const double f = bridge_W(eta) - w;
    if (std::abs(f) <= 1e-13 * std::max(1.0, w)) return eta;
    (f > 0 ? hi : lo) = eta;
    const double slope = -G(eta);
    double next = slope > 0 ? eta - f / slope : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= 1e-14 * eta_cut_) return 0.5 * (lo + hi);
    eta = next;
  }
  fail(ErrorKind::convergence, "force field: inverse potential stalled");
}

double force_G(const ForceField& field, double eta) { return field.G(eta); }

double potential_W(const ForceField& field, double eta) {
  return field.W(eta);
}

ForceLemmaReport check_force_lemma(const ForceField& field) {
  ForceLemmaReport rep;
  rep.epsilon = field.epsilon();
  if (field.mode() == ForceMode::classical) return rep;

  const double cut = field.eta_cut();
  const double knee = 0.5 / std::sqrt(field.epsilon());  // uncut/bridge edge
  rep.w_inf = field.w_inf();
  rep.w_inf_bound = -std::log1p(-0.75 * std::sqrt(field.epsilon()));
  rep.force_l2_bound = field.epsilon() * rep.w_inf_bound;

  const double tol = 1e-12;
  auto piecewise = [&](const std::function<double(double)>& f) {
    return adaptive_simpson(f, 0, knee, tol) +
           adaptive_simpson(f, knee, cut, tol);
  };
  const double e_inf = std::exp(-rep.w_inf);
  rep.decay_l2 = piecewise([&](double y) {
    const double d = std::exp(-field.W(y)) - e_inf;
    return d * d;
  });
  rep.force_l2 = piecewise([&](double y) {
    const double g = field.G(y);
    return g * g;
  });
  // Iterated tail integral collapsed by Fubini: int_0^inf int_eta^inf G^2
  // d y d eta = int_0^inf y G(y)^2 dy.
  rep.tail_l2 = piecewise([&](double y) {
    const double g = field.G(y);
    return y * g * g;
  });

  // Pointwise sweep: range, monotonicity, plateau, and sign of G.
  const int n = 2000;
  double prev = -1;
  for (int i = 0; i <= n; ++i) {
    const double eta = 1.2 * cut * i / n;
    const double w = field.W(eta);
    require(w >= 0 && w <= 1, ErrorKind::assembly,
            "force lemma: W left [0, 1]");
    require(w >= prev - 1e-14, ErrorKind::assembly,
            "force lemma: W not non-decreasing");
    require(field.G(eta) <= 0, ErrorKind::assembly,
            "force lemma: G positive");
    if (eta >= cut)
      require(w == rep.w_inf, ErrorKind::assembly,
              "force lemma: W drifts past the cutoff");
    prev = w;
  }
  require(field.W(0) == 0, ErrorKind::assembly, "force lemma: W(0) != 0");
  require(rep.w_inf <= rep.w_inf_bound, ErrorKind::assembly,
          "force lemma: W plateau exceeds its closed-form bound");
  require(rep.force_l2 <= rep.force_l2_bound, ErrorKind::assembly,
          "force lemma: int G^2 exceeds its closed-form bound");
  require(std::isfinite(rep.decay_l2) && std::isfinite(rep.tail_l2),
          ErrorKind::assembly, "force lemma: divergent integral");
  return rep;
}

std::vector<ForceLemmaReport> check_force_ladder(
    const std::vector<double>& epsilons) {
  require(epsilons.size() >= 2, ErrorKind::parameter,
          "force ladder: need at least two epsilons");
  for (size_t i = 1; i < epsilons.size(); ++i)
    require(epsilons[i] < epsilons[i - 1], ErrorKind::parameter,
            "force ladder: epsilons must descend strictly");
  std::vector<ForceLemmaReport> out;
  out.reserve(epsilons.size());
  for (double eps : epsilons)
    out.push_back(check_force_lemma(ForceField(eps, ForceMode::geometric)));
  for (size_t i = 1; i < out.size(); ++i)
    require(out[i].w_inf < out[i - 1].w_inf, ErrorKind::assembly,
            "force ladder: W plateau not strictly decreasing");
  return out;
}

}  // namespace milnelab
