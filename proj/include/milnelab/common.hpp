/// Shared numerics and error plumbing used by every module.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace milnelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Error categories, mapped onto process exit codes by the CLI.
enum class ErrorKind {
  parameter,      // invalid configuration or argument (exit 2)
  assembly,       // operator assembly quality violated (exit 3)
  convergence,    // iteration or fit failed to converge (exit 3)
  numerical,      // generic numerical failure (exit 3)
  inconclusive,   // configuration cannot certify the result (exit 4)
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
/// Accurate to machine precision for n up to a few hundred.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

/// Quintic smoothstep s(t) = 6t^5 - 15t^4 + 10t^3, clamped to [0,1].
double smoothstep(double t);

/// Adaptive Simpson quadrature of fn over [a, b] to absolute tolerance tol,
/// with the Richardson-corrected error estimate and tolerance halving on
/// bisection. Integrands must be finite on the closed interval.
double adaptive_simpson(const std::function<double(double)>& fn, double a,
                        double b, double tol);

/// Least-squares line y = a + b x. Returns {a, b, r_squared}.
struct LineFit {
  double intercept = 0;
  double slope = 0;
  double r2 = 0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Deterministic RNG (splitmix64 core) with explicit conversions, so that
/// streams are identical across platforms and thread counts.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (explicit formula, no std::distribution).
  double normal();

private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0;
};

/// Monotone cubic Hermite interpolant (Fritsch-Carlson slopes) through
/// strictly increasing abscissae. Evaluation clamps to the end values'
/// tangent lines outside [x.front(), x.back()].
class PchipTable {
public:
  PchipTable() = default;
  PchipTable(std::vector<double> x, std::vector<double> y);

  double operator()(double x) const;
  double derivative(double x) const;
  bool empty() const { return x_.empty(); }
  const std::vector<double>& abscissae() const { return x_; }
  const std::vector<double>& values() const { return y_; }
  const std::vector<double>& slopes() const { return d_; }

  /// Rebuild from precomputed slopes (used when loading from a cache).
  static PchipTable from_slopes(std::vector<double> x, std::vector<double> y,
                                std::vector<double> d);

private:
  int find_cell(double x) const;
  std::vector<double> x_, y_, d_;
};

/// Run fn(i) for i in [0, n). Serial when threads <= 1. With threads > 1 the
/// index range is split into contiguous blocks, one per worker; every output
/// index is written by exactly one worker, so results are identical for any
/// thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// FNV-1a hash of a string, used for config fingerprints and cache keys.
std::uint64_t fnv1a(const std::string& s);

}  // namespace milnelab
