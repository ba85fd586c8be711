#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <nlohmann/json.hpp>

#include "core.hpp"
#include "structure.hpp"

namespace singwave {

using TxxFn = std::function<double(double t, double x, double xi)>;
using TxFn = std::function<double(double t, double x)>;

// ---------------------------------------------------------------------------
// Cutoff
// ---------------------------------------------------------------------------

/// phi(s) = psi(2-s) / (psi(2-s) + psi(s-1)), psi(r) = exp(-1/r) for r > 0.
/// Exactly 1 on (-inf, 1], exactly 0 on [2, inf), smooth and decreasing between.
struct ExcisionCutoff {
  static double psi(double r) noexcept { return r > 0.0 ? std::exp(-1.0 / r) : 0.0; }
  static double dpsi(double r) noexcept { return r > 0.0 ? std::exp(-1.0 / r) / (r * r) : 0.0; }

  double operator()(double s) const noexcept {
    if (s <= 1.0) return 1.0;
    if (s >= 2.0) return 0.0;
    const double a = psi(2.0 - s), b = psi(s - 1.0);
    return a / (a + b);
  }

  double derivative(double s) const noexcept {
    if (s <= 1.0 || s >= 2.0) return 0.0;
    const double a = psi(2.0 - s), b = psi(s - 1.0);
    const double da = -dpsi(2.0 - s), db = dpsi(s - 1.0);
    const double d = a + b;
    return (da * b - a * db) / (d * d);
  }
};

// ---------------------------------------------------------------------------
// Coefficient families
// ---------------------------------------------------------------------------

/// Frequency factor F(xi) of a separable principal symbol c(t,x) F(xi).
enum class FrequencyFactor {
  Square,  ///< xi^2, the operator -c d_x^2
  Bracket, ///< <xi>_k^2, the operator c (k^2 - d_x^2)
};

inline double frequency_factor(FrequencyFactor f, double xi, double k) noexcept {
  return f == FrequencyFactor::Square ? xi * xi : k * k + xi * xi;
}

struct SeparableForm {
  TxFn coefficient;
  FrequencyFactor freq = FrequencyFactor::Bracket;
};

/// Principal symbol a(t,x,xi) with closed-form first derivatives, the
/// lower-order coefficients of b0 d_t + b(t,x,D) with b = i b1 xi + b2, and
/// the structure the family is measured against.
struct CoefficientFamily {
  std::string name;
  BlowupRates rates;
  StructurePair pair = StructurePair::constant();
  double k = 1.0;
  double floor = 1.0; ///< ellipticity constant C0 in a >= C0 omega^2 <xi>_k^2

  TxxFn a, dt_a, dx_a, dxi_a;
  std::optional<SeparableForm> separable;
  TxFn b0, b1, b2; ///< empty means identically zero

  double lower_b0(double t, double x) const { return b0 ? b0(t, x) : 0.0; }
  double lower_b1(double t, double x) const { return b1 ? b1(t, x) : 0.0; }
  double lower_b2(double t, double x) const { return b2 ? b2(t, x) : 0.0; }

  /// omega(x)^2 <xi>_k^2, the elliptic reference the excision blends toward.
  double reference(double x, double xi) const {
    const double w = pair.omega(x);
    return w * w * (k * k + xi * xi);
  }
};

/// Family a = coef(t,x) F(xi) with closed-form derivatives assembled from
/// those of the coefficient.
inline CoefficientFamily make_separable_family(std::string name, TxFn coef, TxFn dt_coef, TxFn dx_coef,
                                               FrequencyFactor freq, double k) {
  CoefficientFamily fam;
  fam.name = std::move(name);
  fam.k = k;
  fam.a = [coef, freq, k](double t, double x, double xi) { return coef(t, x) * frequency_factor(freq, xi, k); };
  fam.dt_a = [dt_coef, freq, k](double t, double x, double xi) {
    return dt_coef(t, x) * frequency_factor(freq, xi, k);
  };
  fam.dx_a = [dx_coef, freq, k](double t, double x, double xi) {
    return dx_coef(t, x) * frequency_factor(freq, xi, k);
  };
  fam.dxi_a = [coef](double t, double x, double xi) { return coef(t, x) * 2.0 * xi; };
  fam.separable = SeparableForm{std::move(coef), freq};
  return fam;
}

/// Constant-coefficient wave a = speed^2 F(xi).
inline CoefficientFamily wave_family(double speed = 1.0, FrequencyFactor freq = FrequencyFactor::Square,
                                     double k = 1.0) {
  const double c2 = speed * speed;
  auto fam = make_separable_family(
      "wave", [c2](double, double) { return c2; }, [](double, double) { return 0.0; },
      [](double, double) { return 0.0; }, freq, k);
  fam.floor = freq == FrequencyFactor::Bracket ? c2 : 0.0;
  return fam;
}

/// Oscillating coefficient
///   a = <x>^{2 kappa1} (2 + cos <x>^{1-kappa2}) t^{-1/4} (2 + sin t^{-1/8}) <xi>_k^2
/// with (omega, Phi) = (<x>^kappa1, <x>^kappa2) and p = 1/4, q = 11/8.
inline CoefficientFamily example_coefficient(double kappa1, double kappa2, double k = 1.0) {
  if (!(kappa1 >= 0.0 && kappa1 <= kappa2 && kappa2 <= 1.0 && kappa2 > 0.0)) {
    throw InvalidArgument("example_coefficient: requires 0 <= kappa1 <= kappa2 <= 1 and kappa2 > 0");
  }
  const double e = 1.0 - kappa2;
  auto space = [kappa1, e](double x) {
    const double b = bracket(x);
    return std::pow(b, 2.0 * kappa1) * (2.0 + std::cos(std::pow(b, e)));
  };
  auto dspace = [kappa1, e](double x) {
    const double b = bracket(x);
    const double w = std::pow(b, 2.0 * kappa1);
    const double dw = 2.0 * kappa1 * x * std::pow(b, 2.0 * kappa1 - 2.0);
    const double osc = 2.0 + std::cos(std::pow(b, e));
    const double dosc = e == 0.0 ? 0.0 : -std::sin(std::pow(b, e)) * e * std::pow(b, e - 2.0) * x;
    return dw * osc + w * dosc;
  };
  auto time = [](double t) { return std::pow(t, -0.25) * (2.0 + std::sin(std::pow(t, -0.125))); };
  auto dtime = [](double t) {
    const double s = std::pow(t, -0.125);
    return -0.25 * std::pow(t, -1.25) * (2.0 + std::sin(s)) - 0.125 * std::pow(t, -1.375) * std::cos(s);
  };
  std::ostringstream name;
  name << "example(" << kappa1 << "," << kappa2 << ")";
  auto fam = make_separable_family(
      name.str(), [=](double t, double x) { return time(t) * space(x); },
      [=](double t, double x) { return dtime(t) * space(x); },
      [=](double t, double x) { return time(t) * dspace(x); }, FrequencyFactor::Bracket, k);
  fam.rates = {0.25, 11.0 / 8.0, 0.0};
  fam.pair = StructurePair::bracket_powers(kappa1, kappa2);
  fam.floor = 1.0; // each factor >= 1 for t <= 1
  return fam;
}

/// Parameters of the admissible oscillating family
///   a = t^{-p} (2 + amplitude sin(frequency t^{p+1-q})) omega(x)^2 <xi>_k^2,
///   b = i beta t^{-r} omega(x) xi.
/// A frequency well above 1 puts several oscillations in every decade of t,
/// so the t^-q envelope of d_t a is visible on log-spaced samples.
struct TheoremFamilyParams {
  double p = 0.0;
  double q = 1.25;
  double amplitude = 1.0;
  double frequency = 20.0;
  double r = 0.0;
  double beta = 0.0;
  StructurePair pair = StructurePair::constant();
  double k = 1.0;
};

inline CoefficientFamily theorem_coefficient(const TheoremFamilyParams& prm) {
  const double p = prm.p, q = prm.q, amp = prm.amplitude, r = prm.r, beta = prm.beta, nu = prm.frequency;
  if (!(p >= 0.0 && p < 0.5 && q > 1.0 && q < 1.5 && p <= q - 1.0)) {
    throw InvalidArgument("theorem_coefficient: requires 0 <= p < 1/2, 1 < q < 3/2, p <= q - 1");
  }
  if (!((q - p) / (q - 1.0) > 3.0)) {
    throw InvalidArgument("theorem_coefficient: no sigma >= 3 below (q-p)/(q-1)");
  }
  if (!(amp >= 0.0 && amp <= 1.0)) throw InvalidArgument("theorem_coefficient: requires 0 <= amplitude <= 1");
  if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("theorem_coefficient: requires 0 <= r < 1");
  if (!(nu > 0.0 && std::isfinite(nu))) throw InvalidArgument("theorem_coefficient: requires frequency > 0");
  const double e = p + 1.0 - q; // <= 0
  auto time = [p, e, amp, nu](double t) { return std::pow(t, -p) * (2.0 + amp * std::sin(nu * std::pow(t, e))); };
  auto dtime = [p, e, amp, nu](double t) {
    const double th = nu * std::pow(t, e);
    return -p * std::pow(t, -p - 1.0) * (2.0 + amp * std::sin(th)) +
           std::pow(t, -p) * amp * std::cos(th) * nu * e * std::pow(t, e - 1.0);
  };
  const auto pair = prm.pair;
  auto w2 = [pair](double x) {
    const double w = pair.omega(x);
    return w * w;
  };
  auto dw2 = [pair](double x) { return 2.0 * pair.omega(x) * pair.omega.derivative(x); };
  std::ostringstream name;
  name << "theorem(p=" << p << ",q=" << q << ",amp=" << amp << ")";
  auto fam = make_separable_family(
      name.str(), [=](double t, double x) { return time(t) * w2(x); },
      [=](double t, double x) { return dtime(t) * w2(x); }, [=](double t, double x) { return time(t) * dw2(x); },
      FrequencyFactor::Bracket, prm.k);
  fam.rates = {p, q, r};
  fam.pair = pair;
  fam.floor = 1.0; // t^{-p} >= 1 for t <= 1 and the bracket is >= 1
  if (beta != 0.0) {
    fam.b1 = [beta, r, pair](double t, double x) { return beta * std::pow(t, -r) * pair.omega(x); };
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Excision
// ---------------------------------------------------------------------------

/// a~ = phi(t Phi <xi>_k) omega^2 <xi>_k^2 + (1 - phi(t Phi <xi>_k)) a.
class ExcisedSymbol {
public:
  ExcisedSymbol(CoefficientFamily family, ExcisionCutoff cutoff = {})
      : fam_(std::move(family)), cut_(cutoff) {}

  const CoefficientFamily& family() const noexcept { return fam_; }
  const ExcisionCutoff& cutoff() const noexcept { return cut_; }

  /// Excision scale t Phi(x) <xi>_k.
  double scale(double t, double x, double xi) const { return t * fam_.pair.phi(x) * bracket(xi, fam_.k); }

  double operator()(double t, double x, double xi) const {
    const double s = scale(t, x, xi);
    const double f = cut_(s);
    if (f == 1.0) return fam_.reference(x, xi);
    if (f == 0.0) return fam_.a(t, x, xi);
    const double a = fam_.a(t, x, xi);
    return a + f * (fam_.reference(x, xi) - a);
  }

  double dt(double t, double x, double xi) const {
    const double s = scale(t, x, xi);
    const double f = cut_(s);
    if (f == 1.0) return 0.0;
    if (f == 0.0) return fam_.dt_a(t, x, xi);
    const double ds = fam_.pair.phi(x) * bracket(xi, fam_.k);
    return cut_.derivative(s) * ds * (fam_.reference(x, xi) - fam_.a(t, x, xi)) + (1.0 - f) * fam_.dt_a(t, x, xi);
  }

  double dx(double t, double x, double xi) const {
    const double s = scale(t, x, xi);
    const double f = cut_(s);
    const double b = bracket(xi, fam_.k);
    const double w = fam_.pair.omega(x);
    const double dref = 2.0 * w * fam_.pair.omega.derivative(x) * b * b;
    if (f == 1.0) return dref;
    if (f == 0.0) return fam_.dx_a(t, x, xi);
    const double ds = t * fam_.pair.phi.derivative(x) * b;
    return cut_.derivative(s) * ds * (fam_.reference(x, xi) - fam_.a(t, x, xi)) + f * dref +
           (1.0 - f) * fam_.dx_a(t, x, xi);
  }

  double dxi(double t, double x, double xi) const {
    const double s = scale(t, x, xi);
    const double f = cut_(s);
    const double w = fam_.pair.omega(x);
    const double dref = 2.0 * w * w * xi;
    if (f == 1.0) return dref;
    if (f == 0.0) return fam_.dxi_a(t, x, xi);
    const double ds = t * fam_.pair.phi(x) * xi / bracket(xi, fam_.k);
    return cut_.derivative(s) * ds * (fam_.reference(x, xi) - fam_.a(t, x, xi)) + f * dref +
           (1.0 - f) * fam_.dxi_a(t, x, xi);
  }

  /// The excised symbol as a (non-separable) family with the same lower-order terms.
  CoefficientFamily as_family() const {
    CoefficientFamily out = fam_;
    out.name = "excised(" + fam_.name + ")";
    const ExcisedSymbol self = *this;
    out.a = [self](double t, double x, double xi) { return self(t, x, xi); };
    out.dt_a = [self](double t, double x, double xi) { return self.dt(t, x, xi); };
    out.dx_a = [self](double t, double x, double xi) { return self.dx(t, x, xi); };
    out.dxi_a = [self](double t, double x, double xi) { return self.dxi(t, x, xi); };
    out.separable.reset();
    out.floor = std::min(1.0, fam_.floor);
    return out;
  }

private:
  CoefficientFamily fam_;
  ExcisionCutoff cut_;
};

inline ExcisedSymbol excise(const CoefficientFamily& family, const ExcisionCutoff& cutoff = {}) {
  return ExcisedSymbol(family, cutoff);
}

// ---------------------------------------------------------------------------
// L1 defect
// ---------------------------------------------------------------------------

struct QuadratureOptions {
  double T = 1.0;
  std::size_t panels = 256;
  /// Panel nodes t_end (j/P)^g with g = max(1/(1-p), min_grading). The floor
  /// keeps panels near t = 0 short enough for oscillating coefficients.
  double min_grading = 8.0;
  double rel_tol = 1e-6;
  std::size_t max_doublings = 4; ///< panel doublings tried before giving up
};

namespace detail {

template <class F>
double graded_gauss(F&& f, double t_end, std::size_t panels, double grading) {
  double sum = 0.0;
  double prev = 0.0;
  for (std::size_t j = 1; j <= panels; ++j) {
    const double node = t_end * std::pow(static_cast<double>(j) / static_cast<double>(panels), grading);
    sum += boost::math::quadrature::gauss<double, 15>::integrate(f, prev, node);
    prev = node;
  }
  return sum;
}

} // namespace detail

/// int_0^T |a - a~| dt at fixed (x, xi). The integrand vanishes once
/// t Phi <xi>_k >= 2, so only [0, min(T, 2/(Phi <xi>_k))] is integrated.
inline double l1_defect(const CoefficientFamily& family, const ExcisedSymbol& excised, double x, double xi,
                        const QuadratureOptions& opt = {}) {
  const double support = 2.0 / (family.pair.phi(x) * bracket(xi, family.k));
  const double t_end = std::min(opt.T, support);
  if (!(t_end > 0.0)) return 0.0;
  auto integrand = [&](double t) { return std::abs(family.a(t, x, xi) - excised(t, x, xi)); };
  const double g = std::max(1.0 / (1.0 - family.rates.p), opt.min_grading);
  // Differences at the rounding level of the integrand itself are not a convergence failure.
  const double floor = 1e-13 * family.reference(x, xi) * t_end;
  std::size_t panels = opt.panels;
  double coarse = detail::graded_gauss(integrand, t_end, panels, g);
  for (std::size_t level = 0; level <= opt.max_doublings; ++level) {
    const double fine = detail::graded_gauss(integrand, t_end, 2 * panels, g);
    const double scale = std::max(std::abs(fine), floor / opt.rel_tol);
    if (std::abs(fine - coarse) <= opt.rel_tol * scale) return fine;
    coarse = fine;
    panels *= 2;
  }
  std::ostringstream os;
  os.precision(17);
  os << "l1_defect: quadrature not converged at (x, xi) = (" << x << ", " << xi << ") with " << panels
     << " panels";
  throw NumericalAbort(os.str());
}

// ---------------------------------------------------------------------------
// Phase-space sample lattices
// ---------------------------------------------------------------------------

struct PhaseLattice {
  RealVector t, x, xi;

  std::size_t size() const noexcept { return t.size() * x.size() * xi.size(); }

  /// Symmetric lattice: `count` points in [-extent, extent] with 0 and
  /// log-spaced magnitudes from `inner` upward.
  static RealVector symmetric_log(std::size_t count, double inner, double extent) {
    RealVector v{0.0};
    const std::size_t half = count / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const double f = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 1.0;
      const double m = inner * std::pow(extent / inner, f);
      v.push_back(m);
      v.push_back(-m);
    }
    std::sort(v.begin(), v.end());
    return v;
  }

  static RealVector log_spaced(std::size_t count, double lo, double hi) {
    RealVector v;
    for (std::size_t i = 0; i < count; ++i) {
      const double f = count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 1.0;
      v.push_back(lo * std::pow(hi / lo, f));
    }
    return v;
  }

  /// 32 graded t-points on [t_min, T] x 33 x-points x 33 xi-points by default.
  static PhaseLattice standard(double t_min = 1e-4, double T = 1.0, double x_extent = 100.0,
                               double xi_extent = 1e6, std::size_t nt = 32, std::size_t nx = 33,
                               std::size_t nxi = 33) {
    return {log_spaced(nt, t_min, T), symmetric_log(nx, 0.1, x_extent), symmetric_log(nxi, 0.1, xi_extent)};
  }

  /// Same ranges with twice the points per axis.
  PhaseLattice refined() const {
    auto dbl = [](const RealVector& v) {
      RealVector out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(v[i]);
        if (i + 1 < v.size()) {
          const double a = v[i], b = v[i + 1];
          out.push_back(a > 0 && b > 0 ? std::sqrt(a * b) : (a < 0 && b < 0 ? -std::sqrt(a * b) : 0.5 * (a + b)));
        }
      }
      return out;
    };
    return {dbl(t), dbl(x), dbl(xi)};
  }
};

// ---------------------------------------------------------------------------
// Characteristic root and auxiliary symbol
// ---------------------------------------------------------------------------

/// tau = sqrt(a~), with ellipticity certified on a sample lattice.
class CharRoot {
public:
  CharRoot(ExcisedSymbol excised, double c_min) : ex_(std::move(excised)), c_min_(c_min) {}

  const ExcisedSymbol& excised() const noexcept { return ex_; }
  const CoefficientFamily& family() const noexcept { return ex_.family(); }
  /// Smallest a~ / (omega^2 <xi>_k^2) observed on the certification samples.
  double ellipticity() const noexcept { return c_min_; }

  double operator()(double t, double x, double xi) const { return std::sqrt(ex_(t, x, xi)); }
  double dt(double t, double x, double xi) const { return ex_.dt(t, x, xi) / (2.0 * (*this)(t, x, xi)); }
  double dx(double t, double x, double xi) const { return ex_.dx(t, x, xi) / (2.0 * (*this)(t, x, xi)); }
  double dxi(double t, double x, double xi) const { return ex_.dxi(t, x, xi) / (2.0 * (*this)(t, x, xi)); }

private:
  ExcisedSymbol ex_;
  double c_min_;
};

/// Certifies a~ >= c omega^2 <xi>_k^2 with c > 0 on every lattice sample and
/// returns the root; throws EllipticityError at the first failing sample.
inline CharRoot char_root(const ExcisedSymbol& excised, const PhaseLattice& samples) {
  double c_min = std::numeric_limits<double>::infinity();
  const auto& fam = excised.family();
  for (double t : samples.t) {
    for (double x : samples.x) {
      for (double xi : samples.xi) {
        const double ratio = excised(t, x, xi) / fam.reference(x, xi);
        if (!(ratio > 0.0) || !std::isfinite(ratio)) {
          std::ostringstream os;
          os << "char_root: ellipticity violated at (t, x, xi) = (" << t << ", " << x << ", " << xi
             << "), a~ / (omega^2 <xi>^2) = " << ratio;
          throw EllipticityError(os.str(), t, x, xi);
        }
        c_min = std::min(c_min, ratio);
      }
    }
  }
  return CharRoot(excised, c_min);
}

/// sigma(H) = -(i/2) omega <xi>_k (1 - phi(t Phi <xi>_k / 3)) / tau.
class HSymbol {
public:
  explicit HSymbol(CharRoot root) : root_(std::move(root)) {}

  const CharRoot& root() const noexcept { return root_; }

  cplx operator()(double t, double x, double xi) const {
    const auto& fam = root_.family();
    const double s = root_.excised().scale(t, x, xi) / 3.0;
    const double off = 1.0 - root_.excised().cutoff()(s);
    if (off == 0.0) return 0.0;
    return cplx(0.0, -0.5 * fam.pair.omega(x) * bracket(xi, fam.k) * off / root_(t, x, xi));
  }

  cplx dt(double t, double x, double xi) const {
    const auto& fam = root_.family();
    const auto& cut = root_.excised().cutoff();
    const double s = root_.excised().scale(t, x, xi) / 3.0;
    const double off = 1.0 - cut(s);
    const double dphi = cut.derivative(s);
    if (off == 0.0 && dphi == 0.0) return 0.0;
    const double wb = fam.pair.omega(x) * bracket(xi, fam.k);
    const double tau = root_(t, x, xi);
    const double ds = fam.pair.phi(x) * bracket(xi, fam.k) / 3.0;
    const double val = -dphi * ds / tau - (off == 0.0 ? 0.0 : off * root_.dt(t, x, xi) / (tau * tau));
    return cplx(0.0, -0.5 * wb * val);
  }

private:
  CharRoot root_;
};

inline HSymbol h_symbol(const CharRoot& root) { return HSymbol(root); }

// ---------------------------------------------------------------------------
// Symbol-class estimate fitting
// ---------------------------------------------------------------------------

/// A real symbol with optional closed-form first derivatives; the rest of the
/// order <= 2 derivatives are centered differences.
struct SymbolOracle {
  std::string name;
  TxxFn value;
  TxxFn dx; ///< optional
  TxxFn dxi; ///< optional

  /// d_xi^alpha d_x^beta, alpha + beta <= 2.
  double derivative(int alpha, int beta, double t, double x, double xi) const {
    const double hx = 1e-5 * std::max(1.0, std::abs(x));
    const double hxi = 1e-5 * std::max(1.0, std::abs(xi));
    auto fd_x = [&](const TxxFn& f) { return (f(t, x + hx, xi) - f(t, x - hx, xi)) / (2 * hx); };
    auto fd_xi = [&](const TxxFn& f) { return (f(t, x, xi + hxi) - f(t, x, xi - hxi)) / (2 * hxi); };
    if (alpha == 0 && beta == 0) return value(t, x, xi);
    if (alpha == 1 && beta == 0) return dxi ? dxi(t, x, xi) : fd_xi(value);
    if (alpha == 0 && beta == 1) return dx ? dx(t, x, xi) : fd_x(value);
    if (alpha == 2 && beta == 0) {
      if (dxi) return fd_xi(dxi);
      return (value(t, x, xi + hxi) - 2 * value(t, x, xi) + value(t, x, xi - hxi)) / (hxi * hxi);
    }
    if (alpha == 0 && beta == 2) {
      if (dx) return fd_x(dx);
      return (value(t, x + hx, xi) - 2 * value(t, x, xi) + value(t, x - hx, xi)) / (hx * hx);
    }
    if (alpha == 1 && beta == 1) {
      if (dxi) return fd_x(dxi);
      if (dx) return fd_xi(dx);
      return (value(t, x + hx, xi + hxi) - value(t, x + hx, xi - hxi) - value(t, x - hx, xi + hxi) +
              value(t, x - hx, xi - hxi)) /
             (4 * hx * hxi);
    }
    throw InvalidArgument("SymbolOracle: derivative order above 2");
  }

  static SymbolOracle of(const CharRoot& root) {
    return {"tau", [root](double t, double x, double xi) { return root(t, x, xi); },
            [root](double t, double x, double xi) { return root.dx(t, x, xi); },
            [root](double t, double x, double xi) { return root.dxi(t, x, xi); }};
  }

  static SymbolOracle time_derivative_of(const CharRoot& root) {
    return {"dt_tau", [root](double t, double x, double xi) { return root.dt(t, x, xi); }, {}, {}};
  }

  static SymbolOracle of(const CoefficientFamily& fam) { return {fam.name, fam.a, fam.dx_a, fam.dxi_a}; }
};

enum class ZoneScheme {
  None,     ///< one zone covering the lattice
  Excision, ///< interior where t Phi <xi>_k <= N
  Splitting ///< classify_zone (core samples skipped)
};

/// |d_xi^alpha D_x^beta a| <= C <xi>_k^{m1 - rho1|alpha| + rho2|beta|} omega^{m2}
///                               Phi^{-rt1|beta| + rt2|alpha|} t^{-power(zone)}
struct SymbolClass {
  double m1 = 0.0;
  double m2 = 0.0;
  double rho1 = 1.0;
  double rho2 = 0.0;
  double rt1 = 1.0;
  double rt2 = 0.0;
  double t_power_interior = 0.0;
  double t_power_exterior = 0.0;
  ZoneScheme zones = ZoneScheme::None;
  double zone_N = 1.0;
  std::optional<SingularityProfile> profile; ///< needed for ZoneScheme::Splitting
  int max_order = 2;
  std::size_t t_subsamples = 4; ///< extra geometric points per t-cell folded into the cell maximum
};

struct FitEntry {
  std::string zone;
  int alpha = 0;
  int beta = 0;
  double constant = 0.0;          ///< minimal C with the nominal t-power
  double refined_constant = 0.0;  ///< same on the refined lattice
  double t_exponent = 0.0;        ///< fitted e in S(t) ~ t^-e
  double residual = 0.0;          ///< rms residual of the log-log fit
  bool machine_zero = false;      ///< every sample below 1e-13 relative to the weight
  std::size_t samples = 0;
  std::optional<std::array<double, 3>> witness; ///< (t,x,xi) of a non-finite ratio

  bool stable() const {
    if (machine_zero) return true;
    return std::isfinite(constant) && std::isfinite(refined_constant) && refined_constant <= 2.0 * constant &&
           constant <= 2.0 * refined_constant;
  }
};

struct FitReport {
  std::string symbol;
  std::vector<FitEntry> entries;

  const FitEntry* find(const std::string& zone, int alpha, int beta) const {
    for (const auto& e : entries)
      if (e.zone == zone && e.alpha == alpha && e.beta == beta) return &e;
    return nullptr;
  }
};

inline void to_json(nlohmann::json& j, const FitEntry& e) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf"); };
  j = nlohmann::json{{"zone", e.zone},
                     {"alpha", e.alpha},
                     {"beta", e.beta},
                     {"fitted_constant", num(e.constant)},
                     {"refined_constant", num(e.refined_constant)},
                     {"t_exponent", num(e.t_exponent)},
                     {"residual", num(e.residual)},
                     {"machine_zero", e.machine_zero},
                     {"samples", e.samples}};
  if (e.witness) j["witness"] = *e.witness;
}

inline void to_json(nlohmann::json& j, const FitReport& r) {
  j = nlohmann::json{{"symbol", r.symbol}, {"entries", r.entries}};
}

namespace detail {

struct ZoneFit {
  std::vector<double> t_vals;
  std::vector<double> sup_vals;
  double constant = 0.0;
  std::size_t samples = 0;
  bool any_nonzero = false;
  std::optional<std::array<double, 3>> witness;
};

inline std::vector<std::string> zone_names(const SymbolClass& cls) {
  if (cls.zones == ZoneScheme::None) return {"all"};
  return {"interior", "exterior"};
}

inline std::optional<std::string> zone_of(const SymbolClass& cls, const StructurePair& pair, double k, double t,
                                          double x, double xi) {
  switch (cls.zones) {
  case ZoneScheme::None: return "all";
  case ZoneScheme::Excision:
    return t * pair.phi(x) * bracket(xi, k) <= cls.zone_N ? "interior" : "exterior";
  case ZoneScheme::Splitting: {
    const auto z = classify_zone(t, x, xi, cls.zone_N, *cls.profile, pair, k);
    if (z == Zone::Core) return std::nullopt;
    return z == Zone::Interior ? "interior" : "exterior";
  }
  }
  return std::nullopt;
}

inline ZoneFit fit_zone(const SymbolOracle& sym, const SymbolClass& cls, const StructurePair& pair, double k,
                        const PhaseLattice& lat, const std::string& zone, int alpha, int beta) {
  ZoneFit out;
  const double power = zone == "exterior" ? cls.t_power_exterior : cls.t_power_interior;
  for (std::size_t it = 0; it < lat.t.size(); ++it) {
    // Cell [t_it, t_{it+1}) sampled at geometric sub-points.
    RealVector ts{lat.t[it]};
    if (it + 1 < lat.t.size()) {
      const double a = lat.t[it], b = lat.t[it + 1];
      for (std::size_t s = 1; s <= cls.t_subsamples; ++s) {
        ts.push_back(a * std::pow(b / a, static_cast<double>(s) / static_cast<double>(cls.t_subsamples + 1)));
      }
    }
    double sup = -1.0;
    for (double t : ts) {
      for (double x : lat.x) {
        for (double xi : lat.xi) {
          const auto z = zone_of(cls, pair, k, t, x, xi);
          if (!z || *z != zone) continue;
          const double b = bracket(xi, k);
          const double w = std::pow(b, cls.m1 - cls.rho1 * alpha + cls.rho2 * beta) * std::pow(pair.omega(x), cls.m2) *
                           std::pow(pair.phi(x), -cls.rt1 * beta + cls.rt2 * alpha);
          const double d = std::abs(sym.derivative(alpha, beta, t, x, xi));
          const double ratio = d / w;
          ++out.samples;
          if (!std::isfinite(ratio)) {
            if (!out.witness) out.witness = std::array<double, 3>{t, x, xi};
            sup = std::numeric_limits<double>::infinity();
            continue;
          }
          sup = std::max(sup, ratio);
          out.constant = std::max(out.constant, ratio * std::pow(t, power));
        }
      }
    }
    if (sup < 0.0) continue; // zone empty at this t
    out.t_vals.push_back(lat.t[it]);
    out.sup_vals.push_back(sup);
    if (sup > 1e-13) out.any_nonzero = true;
  }
  if (out.witness) out.constant = std::numeric_limits<double>::infinity();
  return out;
}

} // namespace detail

/// Fits, per zone and multi-index up to cls.max_order, the minimal constant of
/// the class inequality on the lattice and the t-exponent of the zone-wise
/// supremum (least squares in log-log). The constant is recomputed on the
/// refined lattice to expose instability.
inline FitReport symbol_class_report(const SymbolOracle& sym, const SymbolClass& cls, const StructurePair& pair,
                                     double k, const PhaseLattice& lattice) {
  if (cls.zones == ZoneScheme::Splitting && !cls.profile) {
    throw InvalidArgument("symbol_class_report: splitting zones need a profile");
  }
  FitReport report;
  report.symbol = sym.name;
  const auto fine = lattice.refined();
  for (const auto& zone : detail::zone_names(cls)) {
    for (int order = 0; order <= cls.max_order; ++order) {
      for (int alpha = order; alpha >= 0; --alpha) {
        const int beta = order - alpha;
        const auto base = detail::fit_zone(sym, cls, pair, k, lattice, zone, alpha, beta);
        const auto refined = detail::fit_zone(sym, cls, pair, k, fine, zone, alpha, beta);
        FitEntry e;
        e.zone = zone;
        e.alpha = alpha;
        e.beta = beta;
        e.samples = base.samples;
        e.constant = base.constant;
        e.refined_constant = refined.constant;
        e.witness = base.witness ? base.witness : refined.witness;
        e.machine_zero = !base.any_nonzero && !refined.any_nonzero && !e.witness;
        if (e.machine_zero) {
          e.constant = e.refined_constant = 0.0;
        } else if (!e.witness) {
          RealVector lx, ly;
          for (std::size_t i = 0; i < base.t_vals.size(); ++i) {
            if (base.sup_vals[i] > 0.0) {
              lx.push_back(std::log(base.t_vals[i]));
              ly.push_back(std::log(base.sup_vals[i]));
            }
          }
          const auto fit = fit_line(lx, ly);
          e.t_exponent = -fit.slope;
          e.residual = fit.rms_residual;
        } else {
          e.t_exponent = std::numeric_limits<double>::infinity();
        }
        report.entries.push_back(e);
      }
    }
  }
  return report;
}

} // namespace singwave
