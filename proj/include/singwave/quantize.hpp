#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fftw3.h>

#include "core.hpp"
#include "structure.hpp"

namespace singwave {

namespace detail {

/// Forward/backward FFTW plans for one size. Plans are created with
/// FFTW_UNALIGNED so they can run on any caller buffer, which also makes
/// concurrent execution on distinct buffers safe.
class FftPlan {
public:
  explicit FftPlan(std::size_t n) : n_(n) {
    std::lock_guard lock(planner_mutex());
    auto* in = fftw_alloc_complex(n);
    auto* out = fftw_alloc_complex(n);
    const auto flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_1d(static_cast<int>(n), in, out, FFTW_FORWARD, flags);
    backward_ = fftw_plan_dft_1d(static_cast<int>(n), in, out, FFTW_BACKWARD, flags);
    fftw_free(in);
    fftw_free(out);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  void forward(const cplx* in, cplx* out) const {
    fftw_execute_dft(forward_, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }
  void backward(const cplx* in, cplx* out) const {
    fftw_execute_dft(backward_, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }
  std::size_t size() const noexcept { return n_; }

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

private:
  std::size_t n_;
  fftw_plan forward_{};
  fftw_plan backward_{};
};

inline std::shared_ptr<const FftPlan> plan_for(std::size_t n) {
  static std::mutex cache_mutex;
  static std::map<std::size_t, std::shared_ptr<const FftPlan>> cache;
  std::lock_guard lock(cache_mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<FftPlan>(n);
  return slot;
}

} // namespace detail

/// Periodic grid on [-L, L) with N points and frequencies xi_j = (pi/L) j,
/// j in {-N/2, ..., N/2-1}. Coefficient arrays are stored in FFT order:
/// slot m holds j = m for m < N/2 and j = m - N otherwise, so the Nyquist
/// slot N/2 carries j = -N/2.
class GridSpec {
public:
  GridSpec(double L, std::size_t N, double k = 1.0) : L_(L), N_(N), k_(k) {
    if (!(L > 0.0)) throw InvalidArgument("GridSpec: requires L > 0");
    if (N < 8 || (N & (N - 1)) != 0) throw InvalidArgument("GridSpec: N must be a power of two >= 8");
    if (!(k >= 1.0)) throw InvalidArgument("GridSpec: requires k >= 1");
    plan_ = detail::plan_for(N);
    x_.resize(N);
    xi_.resize(N);
    sign_.resize(N);
    for (std::size_t i = 0; i < N; ++i) x_[i] = -L + 2.0 * L * static_cast<double>(i) / static_cast<double>(N);
    for (std::size_t m = 0; m < N; ++m) {
      const long j = index(m);
      xi_[m] = kPi / L * static_cast<double>(j);
      sign_[m] = (std::labs(j) % 2 == 0) ? 1.0 : -1.0;
    }
  }

  double L() const noexcept { return L_; }
  std::size_t N() const noexcept { return N_; }
  double k() const noexcept { return k_; }
  double dx() const noexcept { return 2.0 * L_ / static_cast<double>(N_); }
  double x(std::size_t i) const noexcept { return x_[i]; }
  double xi(std::size_t m) const noexcept { return xi_[m]; }
  const RealVector& xs() const noexcept { return x_; }
  const RealVector& xis() const noexcept { return xi_; }

  /// Signed frequency index of FFT slot m.
  long index(std::size_t m) const noexcept {
    const long n = static_cast<long>(N_);
    const long mm = static_cast<long>(m);
    return mm < n / 2 ? mm : mm - n;
  }
  /// FFT slot of signed index j (taken modulo N).
  std::size_t slot(long j) const noexcept {
    const long n = static_cast<long>(N_);
    return static_cast<std::size_t>(((j % n) + n) % n);
  }
  std::size_t nyquist_slot() const noexcept { return N_ / 2; }

  /// (-1)^j, the phase e^{i L xi_j} relating the grid origin -L to x = 0.
  double origin_phase(std::size_t m) const noexcept { return sign_[m]; }

  const detail::FftPlan& fft() const noexcept { return *plan_; }

private:
  double L_;
  std::size_t N_;
  double k_;
  std::shared_ptr<const detail::FftPlan> plan_;
  RealVector x_, xi_, sign_;
};

/// Grid values with an optional spectrum computed at construction.
class SpectralField {
public:
  SpectralField() = default;
  explicit SpectralField(ComplexVector values) : values_(std::move(values)) {}
  SpectralField(const GridSpec& grid, ComplexVector values);

  const ComplexVector& values() const noexcept { return values_; }
  bool has_spectrum() const noexcept { return !coeffs_.empty(); }
  const ComplexVector& spectrum() const noexcept { return coeffs_; }
  std::size_t size() const noexcept { return values_.size(); }

private:
  ComplexVector values_;
  ComplexVector coeffs_;
};

inline void check_size(const GridSpec& grid, std::size_t n, const char* who) {
  if (n != grid.N()) {
    throw InvalidArgument(std::string(who) + ": size mismatch (" + std::to_string(n) + " vs grid N = " +
                          std::to_string(grid.N()) + ")");
  }
}

/// c_j = (1/N) sum_i u(x_i) e^{-i x_i xi_j}.
inline ComplexVector dft_forward(const GridSpec& grid, const ComplexVector& u) {
  check_size(grid, u.size(), "dft_forward");
  ComplexVector c(u.size());
  grid.fft().forward(u.data(), c.data());
  const double inv = 1.0 / static_cast<double>(grid.N());
  for (std::size_t m = 0; m < c.size(); ++m) c[m] *= inv * grid.origin_phase(m);
  return c;
}

/// u(x_i) = sum_j c_j e^{i x_i xi_j}.
inline ComplexVector dft_inverse(const GridSpec& grid, const ComplexVector& c) {
  check_size(grid, c.size(), "dft_inverse");
  ComplexVector tmp(c.size());
  for (std::size_t m = 0; m < c.size(); ++m) tmp[m] = c[m] * grid.origin_phase(m);
  ComplexVector u(c.size());
  grid.fft().backward(tmp.data(), u.data());
  return u;
}

inline SpectralField::SpectralField(const GridSpec& grid, ComplexVector values)
    : values_(std::move(values)), coeffs_(dft_forward(grid, values_)) {}

/// Discrete L2 norm with weight dx.
inline double l2_norm(const GridSpec& grid, const ComplexVector& u) {
  double s = 0;
  for (const auto& z : u) s += std::norm(z);
  return std::sqrt(grid.dx() * s);
}

/// Coefficient-side norm matching l2_norm by Parseval: sqrt(2L sum |c_j|^2).
inline double coefficient_norm(const GridSpec& grid, const ComplexVector& c) {
  double s = 0;
  for (const auto& z : c) s += std::norm(z);
  return std::sqrt(2.0 * grid.L() * s);
}

enum class Parity { General, Odd };

using MultiplierFn = std::function<cplx(double xi)>;
using SymbolFn = std::function<cplx(double x, double xi)>;

/// Inverse DFT of m(xi_j) c_j. Odd multipliers zero the Nyquist mode.
inline ComplexVector apply_multiplier(const GridSpec& grid, const MultiplierFn& m, const ComplexVector& u,
                                      Parity parity = Parity::General) {
  auto c = dft_forward(grid, u);
  for (std::size_t s = 0; s < c.size(); ++s) {
    const cplx mv = m(grid.xi(s));
    if (!std::isfinite(mv.real()) || !std::isfinite(mv.imag())) {
      std::ostringstream os;
      os << "apply_multiplier: multiplier not finite at xi = " << grid.xi(s);
      throw NumericalAbort(os.str());
    }
    c[s] *= mv;
  }
  if (parity == Parity::Odd) c[grid.nyquist_slot()] = 0.0;
  return dft_inverse(grid, c);
}

/// Spectral first derivative (multiplier i xi, Nyquist zeroed).
inline ComplexVector spectral_derivative(const GridSpec& grid, const ComplexVector& u, int order = 1) {
  auto c = dft_forward(grid, u);
  for (std::size_t s = 0; s < c.size(); ++s) c[s] *= std::pow(cplx(0.0, grid.xi(s)), order);
  if (order % 2 == 1) c[grid.nyquist_slot()] = 0.0;
  return dft_inverse(grid, c);
}

/// Row-major N x N table of symbol values a(x_i, xi_j), columns in FFT order.
class SymbolMatrix {
public:
  SymbolMatrix() = default;
  SymbolMatrix(const GridSpec& grid, const SymbolFn& a) : n_(grid.N()), data_(n_ * n_) {
    parallel_for(n_, [&](std::size_t i) {
      const double x = grid.x(i);
      for (std::size_t m = 0; m < n_; ++m) data_[i * n_ + m] = a(x, grid.xi(m));
    });
  }

  std::size_t size() const noexcept { return n_; }
  cplx operator()(std::size_t i, std::size_t m) const noexcept { return data_[i * n_ + m]; }
  const cplx* row(std::size_t i) const noexcept { return data_.data() + i * n_; }

  bool finite() const { return all_finite(data_); }

private:
  std::size_t n_ = 0;
  ComplexVector data_;
};

namespace detail {

/// e^{2 pi i n / N} for n in [0, N).
inline const ComplexVector& unit_roots(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<ComplexVector>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_shared<ComplexVector>(n);
    for (std::size_t i = 0; i < n; ++i) {
      (*slot)[i] = std::polar(1.0, 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return *slot;
}

} // namespace detail

/// Kohn-Nirenberg application (Op(a)u)(x_i) = sum_j a(x_i, xi_j) c_j e^{i x_i xi_j}
/// from a precomputed symbol table. Dense O(N^2); rows run in parallel and
/// each row sums in FFT-slot order.
inline ComplexVector apply_kn_spectral(const GridSpec& grid, const SymbolMatrix& a, ComplexVector c);

inline ComplexVector apply_kn(const GridSpec& grid, const SymbolMatrix& a, const ComplexVector& u) {
  check_size(grid, u.size(), "apply_kn");
  return apply_kn_spectral(grid, a, dft_forward(grid, u));
}

/// Same from the coefficients c_j directly.
inline ComplexVector apply_kn_spectral(const GridSpec& grid, const SymbolMatrix& a, ComplexVector c) {
  check_size(grid, c.size(), "apply_kn");
  if (a.size() != grid.N()) throw InvalidArgument("apply_kn: symbol table size mismatch");
  const std::size_t n = grid.N();
  // e^{i x_i xi_j} = (-1)^j e^{2 pi i i j / N}; fold (-1)^j into the coefficients.
  for (std::size_t m = 0; m < n; ++m) c[m] *= grid.origin_phase(m);
  const auto& roots = detail::unit_roots(n);
  ComplexVector out(n);
  parallel_for(n, [&](std::size_t i) {
    const cplx* row = a.row(i);
    cplx acc = 0.0;
    std::size_t phase = 0; // (i * m) mod n, with m the FFT slot (index j = m mod n)
    for (std::size_t m = 0; m < n; ++m) {
      acc += row[m] * c[m] * roots[phase];
      phase += i;
      if (phase >= n) phase -= n;
    }
    out[i] = acc;
  });
  if (!all_finite(out)) throw NumericalAbort("apply_kn: non-finite result");
  return out;
}

inline ComplexVector apply_kn(const GridSpec& grid, const SymbolFn& a, const ComplexVector& u) {
  return apply_kn(grid, SymbolMatrix(grid, a), u);
}

/// Largest exponent admitted in exp(...) symbols before overflow risk.
inline constexpr double kExponentGuard = 700.0;

/// eps (Phi(x) <xi>_k)^(1/sigma) maximised over the grid.
inline double loss_exponent_max(const GridSpec& grid, double eps, double sigma, const StructurePair& pair) {
  double phimax = 0;
  for (double x : grid.xs()) phimax = std::max(phimax, pair.phi(x));
  double ximax = 0;
  for (double xi : grid.xis()) ximax = std::max(ximax, std::abs(xi));
  return eps * std::pow(phimax * bracket(ximax, grid.k()), 1.0 / sigma);
}

inline void guard_loss_exponent(const GridSpec& grid, double eps, double sigma, const StructurePair& pair,
                                const char* who) {
  if (!(eps >= 0.0)) throw InvalidArgument(std::string(who) + ": requires eps >= 0");
  if (!(sigma >= 3.0)) throw InvalidArgument(std::string(who) + ": requires sigma >= 3");
  const double e = loss_exponent_max(grid, eps, sigma, pair);
  if (!(e <= kExponentGuard)) {
    std::ostringstream os;
    os << who << ": loss exponent " << e << " exceeds guard " << kExponentGuard;
    throw NumericalAbort(os.str());
  }
}

namespace detail {

inline SymbolMatrix loss_symbol(const GridSpec& grid, double eps, double sigma, const StructurePair& pair) {
  const double k = grid.k();
  return SymbolMatrix(grid, [&](double x, double xi) {
    return cplx(std::exp(eps * std::pow(pair.phi(x) * bracket(xi, k), 1.0 / sigma)));
  });
}

} // namespace detail

/// exp(eps (Phi(x) <D>_k)^(1/sigma)) u, Kohn-Nirenberg quantised.
inline ComplexVector loss_operator(const GridSpec& grid, double eps, double sigma, const StructurePair& pair,
                                   const ComplexVector& u) {
  guard_loss_exponent(grid, eps, sigma, pair, "loss_operator");
  if (eps == 0.0) return u;
  return apply_kn(grid, detail::loss_symbol(grid, eps, sigma, pair), u);
}

/// Index of the weighted Sobolev norm.
struct SobolevIndex {
  double s1 = 0.0; ///< derivative order
  double s2 = 0.0; ///< decay order (powers of Phi)
  double eps = 0.0;
  double sigma = 3.0;

  SobolevIndex shifted(double by) const { return {s1 + by, s2 + by, eps, sigma}; }
};

namespace detail {

/// || Phi^{s2} <D>_k^{s1} w ||.
inline double weighted_l2(const GridSpec& grid, ComplexVector w, const SobolevIndex& idx, const StructurePair& pair) {
  if (idx.s1 != 0.0) {
    const double k = grid.k();
    const double s1 = idx.s1;
    w = apply_multiplier(grid, [k, s1](double xi) { return cplx(std::pow(bracket(xi, k), s1)); }, w);
  }
  if (idx.s2 != 0.0) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= std::pow(pair.phi(grid.x(i)), idx.s2);
  }
  return l2_norm(grid, w);
}

} // namespace detail

inline double sobolev_norm_spectral(const GridSpec& grid, const ComplexVector& c, const SobolevIndex& idx,
                                    const StructurePair& pair);

/// || Phi^{s2} <D>_k^{s1} exp(eps (Phi <D>_k)^{1/sigma}) u ||, applied right to left.
inline double sobolev_norm(const GridSpec& grid, const ComplexVector& u, const SobolevIndex& idx,
                           const StructurePair& pair) {
  if (idx.eps == 0.0) {
    guard_loss_exponent(grid, idx.eps, idx.sigma, pair, "sobolev_norm");
    return detail::weighted_l2(grid, u, idx, pair);
  }
  return sobolev_norm_spectral(grid, dft_forward(grid, u), idx, pair);
}

/// The same norm of the field with coefficients c. Large loss weights
/// amplify rounding noise in c, so callers can clean c first.
inline double sobolev_norm_spectral(const GridSpec& grid, const ComplexVector& c, const SobolevIndex& idx,
                                    const StructurePair& pair) {
  guard_loss_exponent(grid, idx.eps, idx.sigma, pair, "sobolev_norm");
  auto w = idx.eps == 0.0 ? dft_inverse(grid, c)
                          : apply_kn_spectral(grid, detail::loss_symbol(grid, idx.eps, idx.sigma, pair), c);
  return detail::weighted_l2(grid, std::move(w), idx, pair);
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline void write_field_csv(std::ostream& os, const GridSpec& grid, const ComplexVector& u) {
  os << "x,re_u,im_u\n" << std::setprecision(17);
  for (std::size_t i = 0; i < u.size(); ++i) os << grid.x(i) << ',' << u[i].real() << ',' << u[i].imag() << '\n';
}

/// Spectrum rows sorted by signed frequency.
inline void write_spectrum_csv(std::ostream& os, const GridSpec& grid, const ComplexVector& u) {
  const auto c = dft_forward(grid, u);
  os << "xi,abs_u_hat\n" << std::setprecision(17);
  const long half = static_cast<long>(grid.N() / 2);
  for (long j = -half; j < half; ++j) {
    const auto s = grid.slot(j);
    os << grid.xi(s) << ',' << std::abs(c[s]) << '\n';
  }
}

} // namespace singwave
