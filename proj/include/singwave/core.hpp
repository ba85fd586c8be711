#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace singwave {

using cplx = std::complex<double>;
using ComplexVector = std::vector<cplx>;
using RealVector = std::vector<double>;

/// Precondition or range violation in user-supplied parameters.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure during a computation (non-finite values, step-size
/// exhaustion, quadrature non-convergence, overflow guard).
class NumericalAbort : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Strict ellipticity failed at a sample point.
class EllipticityError : public NumericalAbort {
public:
  EllipticityError(const std::string& what, double t, double x, double xi)
      : NumericalAbort(what), t_(t), x_(x), xi_(xi) {}

  double t() const noexcept { return t_; }
  double x() const noexcept { return x_; }
  double xi() const noexcept { return xi_; }

private:
  double t_, x_, xi_;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Shifted frequency weight <xi>_k = (k^2 + xi^2)^(1/2).
inline double bracket(double xi, double k) noexcept { return std::sqrt(k * k + xi * xi); }

/// Spatial bracket <x> = (1 + x^2)^(1/2).
inline double bracket(double x) noexcept { return std::sqrt(1.0 + x * x); }

inline bool all_finite(const ComplexVector& v) {
  return std::all_of(v.begin(), v.end(), [](const cplx& z) {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
  });
}

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{1};
  return n;
}
} // namespace detail

/// Worker count used by row-parallel kernels. Results do not depend on it:
/// every row is computed by exactly one worker in a fixed summation order.
inline void set_threads(unsigned n) { detail::thread_setting() = std::max(1u, n); }
inline unsigned threads() { return detail::thread_setting(); }

/// Runs body(i) for i in [0, n) split into contiguous blocks.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = w * block;
    const std::size_t hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
}

/// Portable uniform double in [0,1) from a 64-bit generator word.
inline double unit_from_bits(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Ordinary least-squares line fit y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
  std::size_t count = 0;
};

inline LineFit fit_line(const RealVector& xs, const RealVector& ys) {
  LineFit fit;
  const std::size_t n = std::min(xs.size(), ys.size());
  fit.count = n;
  if (n < 2) return fit;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  fit.slope = sxx > 0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss += r * r;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(n));
  return fit;
}

} // namespace singwave
