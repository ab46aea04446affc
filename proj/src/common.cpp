#include "milnelab/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace milnelab {

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  require(n >= 1, ErrorKind::parameter, "gauss_legendre: n must be >= 1");
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Chebyshev-based initial guess for the i-th positive root.
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

double smoothstep(double t) {
  if (t <= 0) return 0;
  if (t >= 1) return 1;
  return t * t * t * (t * (6 * t - 15) + 10);
}

namespace {

double simpson_step(const std::function<double(double)>& fn, double a,
                    double b, double fa, double fm, double fb, double whole,
                    double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = fn(lm), frm = fn(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return simpson_step(fn, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(fn, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& fn, double a,
                        double b, double tol) {
  if (a == b) return 0;
  const double fa = fn(a), fb = fn(b);
  const double m = 0.5 * (a + b);
  const double fm = fn(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(fn, a, b, fa, fm, fb, whole, tol, 48);
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::parameter,
          "fit_line: need matching arrays of length >= 2");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0, ErrorKind::parameter, "fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (syy > 0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

std::uint64_t Rng::next_u64() {
  // splitmix64 step; simple, fast, and fully specified.
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0;
  do {
    u1 = uniform();
  } while (u1 <= 0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

PchipTable::PchipTable(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  const int n = static_cast<int>(x_.size());
  require(n >= 2 && y_.size() == x_.size(), ErrorKind::parameter,
          "pchip: need at least two matching samples");
  for (int i = 1; i < n; ++i)
    require(x_[i] > x_[i - 1], ErrorKind::parameter, "pchip: abscissae must increase");

  std::vector<double> h(n - 1), s(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    h[i] = x_[i + 1] - x_[i];
    s[i] = (y_[i + 1] - y_[i]) / h[i];
  }
  d_.assign(n, 0.0);
  // Fritsch-Carlson: weighted harmonic mean where secants agree in sign,
  // zero at local extrema; one-sided limited slopes at the ends.
  for (int i = 1; i + 1 < n; ++i) {
    if (s[i - 1] * s[i] > 0) {
      const double w1 = 2 * h[i] + h[i - 1];
      const double w2 = h[i] + 2 * h[i - 1];
      d_[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
    }
  }
  auto end_slope = [](double h0, double h1, double s0, double s1) {
    double d = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if (d * s0 <= 0) d = 0;
    else if (s0 * s1 <= 0 && std::abs(d) > 3 * std::abs(s0)) d = 3 * s0;
    return d;
  };
  if (n == 2) {
    d_[0] = d_[1] = s[0];
  } else {
    d_[0] = end_slope(h[0], h[1], s[0], s[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
  }
}

PchipTable PchipTable::from_slopes(std::vector<double> x, std::vector<double> y,
                                   std::vector<double> d) {
  PchipTable t;
  require(x.size() >= 2 && x.size() == y.size() && x.size() == d.size(),
          ErrorKind::parameter, "pchip: malformed slope table");
  t.x_ = std::move(x);
  t.y_ = std::move(y);
  t.d_ = std::move(d);
  return t;
}

int PchipTable::find_cell(double x) const {
  const int n = static_cast<int>(x_.size());
  if (x <= x_[0]) return 0;
  if (x >= x_[n - 2]) return n - 2;
  const auto it = std::upper_bound(x_.begin(), x_.end(), x);
  return static_cast<int>(it - x_.begin()) - 1;
}

double PchipTable::operator()(double x) const {
  require(!empty(), ErrorKind::parameter, "pchip: empty table");
  if (x < x_.front()) return y_.front() + d_.front() * (x - x_.front());
  if (x > x_.back()) return y_.back() + d_.back() * (x - x_.back());
  const int i = find_cell(x);
  const double h = x_[i + 1] - x_[i];
  const double t = (x - x_[i]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] +
         (-2 * t3 + 3 * t2) * y_[i + 1] + (t3 - t2) * h * d_[i + 1];
}

double PchipTable::derivative(double x) const {
  require(!empty(), ErrorKind::parameter, "pchip: empty table");
  if (x < x_.front()) return d_.front();
  if (x > x_.back()) return d_.back();
  const int i = find_cell(x);
  const double h = x_[i + 1] - x_[i];
  const double t = (x - x_[i]) / h;
  const double t2 = t * t;
  return ((6 * t2 - 6 * t) * (y_[i] - y_[i + 1])) / h +
         (3 * t2 - 4 * t + 1) * d_[i] + (3 * t2 - 2 * t) * d_[i + 1];
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (int t = 0; t < nw; ++t) {
    const int lo = static_cast<int>(static_cast<long long>(n) * t / nw);
    const int hi = static_cast<int>(static_cast<long long>(n) * (t + 1) / nw);
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace milnelab
