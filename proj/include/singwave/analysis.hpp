#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "quantize.hpp"
#include "solver.hpp"
#include "structure.hpp"
#include "symbols.hpp"

namespace singwave {

// ---------------------------------------------------------------------------
// Counterexample oracles
// ---------------------------------------------------------------------------

/// (y)_j = y (y-1) ... (y-j+1), with (y)_0 = 1.
inline double falling_factorial(double y, int j) {
  if (j < 0) throw InvalidArgument("falling_factorial: requires j >= 0");
  double r = 1.0;
  for (int i = 0; i < j; ++i) r *= y - i;
  return r;
}

/// C_0 = 1, C_j = ((-2)^j / j!) (m)_j / (-1/2)_j.
inline RealVector counterexample_coefficients(int m) {
  if (m < 0) throw InvalidArgument("counterexample_coefficients: requires m >= 0");
  RealVector c(static_cast<std::size_t>(m) + 1);
  c[0] = 1.0;
  double pow2 = 1.0, fact = 1.0;
  for (int j = 1; j <= m; ++j) {
    pow2 *= -2.0;
    fact *= j;
    c[static_cast<std::size_t>(j)] = pow2 / fact * falling_factorial(m, j) / falling_factorial(-0.5, j);
  }
  return c;
}

/// Finite sum of c_j exp(i pi j x / L); every x-derivative is exact.
struct TrigPolynomial {
  double L = kPi;
  std::vector<std::pair<long, cplx>> modes;

  double wavenumber(long j) const noexcept { return kPi * static_cast<double>(j) / L; }

  cplx value(double x, int order = 0) const {
    cplx s = 0.0;
    for (const auto& [j, c] : modes) {
      const double xi = wavenumber(j);
      s += c * std::pow(cplx(0.0, xi), order) * std::exp(cplx(0.0, xi * x));
    }
    return s;
  }

  ComplexVector sample(const GridSpec& grid, int order = 0, double shift = 0.0) const {
    ComplexVector u(grid.N());
    for (std::size_t i = 0; i < grid.N(); ++i) u[i] = value(grid.x(i) + shift, order);
    return u;
  }

  long max_mode() const noexcept {
    long r = 0;
    for (const auto& m : modes) r = std::max(r, std::labs(m.first));
    return r;
  }

  /// count distinct nonzero modes drawn from 1 <= |j| <= max_mode with
  /// coefficients uniform in the unit square.
  static TrigPolynomial random(std::uint64_t seed, double L = kPi, std::size_t count = 8, long max_mode = 4) {
    if (count > static_cast<std::size_t>(2 * max_mode)) {
      throw InvalidArgument("TrigPolynomial: more modes requested than 1 <= |j| <= max_mode provides");
    }
    std::mt19937_64 rng(seed);
    std::vector<long> pool;
    for (long j = -max_mode; j <= max_mode; ++j)
      if (j != 0) pool.push_back(j);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    TrigPolynomial tp;
    tp.L = L;
    for (long j : pool) {
      const double re = unit_from_bits(rng()) - 0.5, im = unit_from_bits(rng()) - 0.5;
      tp.modes.emplace_back(j, cplx(re, im));
    }
    return tp;
  }

  /// Every mode |j| <= max_mode with modulus <j>^-2 and a random phase.
  static TrigPolynomial broadband(std::uint64_t seed, double L, long max_mode) {
    std::mt19937_64 rng(seed);
    TrigPolynomial tp;
    tp.L = L;
    for (long j = -max_mode; j <= max_mode; ++j) {
      const double phase = 2.0 * kPi * unit_from_bits(rng());
      tp.modes.emplace_back(j, std::polar(1.0 / (1.0 + static_cast<double>(j * j)), phase));
    }
    return tp;
  }
};

enum class Example { Finite, NotNecessary, NoLoss, Nonunique };

inline std::string to_string(Example e) {
  switch (e) {
  case Example::Finite: return "finite-loss";
  case Example::NotNecessary: return "loss-not-necessary";
  case Example::NoLoss: return "no-loss";
  case Example::Nonunique: return "nonunique";
  }
  return "?";
}

inline Example example_from_id(const std::string& id) {
  for (auto e : {Example::Finite, Example::NotNecessary, Example::NoLoss, Example::Nonunique})
    if (to_string(e) == id) return e;
  throw InvalidArgument("unknown counterexample id '" + id +
                        "' (expected finite-loss, loss-not-necessary, no-loss or nonunique)");
}

/// I(t) = int_0^t (2 + sin sqrt s) ds = 2t + 2 (sin sqrt t - sqrt t cos sqrt t).
inline double no_loss_shift(double t) {
  const double s = std::sqrt(t);
  return 2.0 * t + 2.0 * (std::sin(s) - s * std::cos(s));
}

inline double no_loss_speed(double t) { return 2.0 + std::sin(std::sqrt(t)); }

/// The counterexample operators with omega = Phi = 1:
///   finite-loss: d_t^2 - d_x^2 + (d_t - (4m+1) d_x) / (2t)
///   loss-not-necessary: d_t^2 - d_x^2 - (2/t) d_x
///   no-loss: d_t^2 - (2 + sin sqrt t)^2 d_x^2 - cos(sqrt t) / (2 sqrt t) d_x
///   nonunique: d_t^2 - d_x^2 - (d_t + 3 d_x) / t
inline CoefficientFamily counterexample_family(Example id, int m = 0) {
  if (m < 0) throw InvalidArgument("counterexample_family: requires m >= 0");
  auto zero = [](double, double) { return 0.0; };
  auto unit = [](double, double) { return 1.0; };
  CoefficientFamily fam;
  switch (id) {
  case Example::Finite: {
    fam = make_separable_family("counterexample finite-loss", unit, zero, zero, FrequencyFactor::Square, 1.0);
    const double c = 4.0 * m + 1.0;
    fam.b0 = [](double t, double) { return 0.5 / t; };
    fam.b1 = [c](double t, double) { return -0.5 * c / t; };
    fam.rates = {0.0, 0.0, 1.0};
    fam.name += " m=" + std::to_string(m);
    break;
  }
  case Example::NotNecessary:
    fam = make_separable_family("counterexample loss-not-necessary", unit, zero, zero, FrequencyFactor::Square, 1.0);
    fam.b1 = [](double t, double) { return -2.0 / t; };
    fam.rates = {0.0, 0.0, 1.0};
    break;
  case Example::NoLoss:
    fam = make_separable_family(
        "counterexample no-loss",
        [](double t, double) {
          const double c = no_loss_speed(t);
          return c * c;
        },
        [](double t, double) {
          const double s = std::sqrt(t);
          return no_loss_speed(t) * std::cos(s) / s;
        },
        zero, FrequencyFactor::Square, 1.0);
    fam.b1 = [](double t, double) { return -std::cos(std::sqrt(t)) / (2.0 * std::sqrt(t)); };
    fam.rates = {0.0, 0.5, 0.5};
    break;
  case Example::Nonunique:
    fam = make_separable_family("counterexample nonunique", unit, zero, zero, FrequencyFactor::Square, 1.0);
    fam.b0 = [](double t, double) { return -1.0 / t; };
    fam.b1 = [](double t, double) { return -3.0 / t; };
    fam.rates = {0.0, 0.0, 1.0};
    break;
  }
  fam.floor = 0.0;
  return fam;
}

/// Exact solutions of the counterexamples for trigonometric data u0:
///   finite-loss: sum_j C_j t^j u0^(j)(x+t)
///   loss-not-necessary: t u0(x+t)
///   no-loss: u0(x + I(t))
///   nonunique: t^2 u0(x+t)
class ClosedForm {
public:
  ClosedForm(Example id, int m, TrigPolynomial u0) : id_(id), m_(m), u0_(std::move(u0)) {
    if (m < 0) throw InvalidArgument("closed_form: requires m >= 0");
    if (id == Example::Finite) coef_ = counterexample_coefficients(m);
  }

  Example id() const noexcept { return id_; }
  int m() const noexcept { return m_; }
  const TrigPolynomial& data() const noexcept { return u0_; }

  cplx value(double t, double x) const { return eval(t, x, false); }
  cplx dt(double t, double x) const { return eval(t, x, true); }

  ComplexVector sample(const GridSpec& grid, double t) const {
    ComplexVector u(grid.N());
    for (std::size_t i = 0; i < grid.N(); ++i) u[i] = value(t, grid.x(i));
    return u;
  }

  ComplexVector sample_dt(const GridSpec& grid, double t) const {
    ComplexVector u(grid.N());
    for (std::size_t i = 0; i < grid.N(); ++i) u[i] = dt(t, grid.x(i));
    return u;
  }

  /// Multiplier P(t, xi) and its t-derivative with u(t) = sum_j c_j P(t, xi_j) e^{i xi_j x}.
  std::pair<cplx, cplx> multiplier(double t, double xi) const {
    const cplx ix(0.0, xi);
    switch (id_) {
    case Example::Finite: {
      cplx p = 0.0, dp = 0.0;
      for (int j = 0; j <= m_; ++j) {
        const double c = coef_[static_cast<std::size_t>(j)];
        const cplx ixj = std::pow(ix, j);
        p += c * std::pow(t, j) * ixj;
        if (j > 0) dp += c * static_cast<double>(j) * std::pow(t, j - 1) * ixj;
        dp += c * std::pow(t, j) * ixj * ix;
      }
      const cplx e = std::exp(ix * t);
      return {p * e, dp * e};
    }
    case Example::NotNecessary: {
      const cplx e = std::exp(ix * t);
      return {t * e, (1.0 + t * ix) * e};
    }
    case Example::NoLoss: {
      const cplx e = std::exp(ix * no_loss_shift(t));
      return {e, no_loss_speed(t) * ix * e};
    }
    case Example::Nonunique: {
      const cplx e = std::exp(ix * t);
      return {t * t * e, (2.0 * t + t * t * ix) * e};
    }
    }
    return {0.0, 0.0};
  }

  /// Cauchy problem started at t_start with the closed form as data.
  CauchyProblem problem(const GridSpec& grid, double t_start, double T = 1.0) const {
    CauchyProblem pb;
    pb.family = counterexample_family(id_, m_);
    pb.f1 = sample(grid, t_start);
    pb.f2 = sample_dt(grid, t_start);
    pb.t_start = t_start;
    pb.T = T;
    pb.periodic_data = true;
    return pb;
  }

private:
  cplx eval(double t, double x, bool derivative) const {
    cplx s = 0.0;
    for (const auto& [j, c] : u0_.modes) {
      const double xi = u0_.wavenumber(j);
      const auto [p, dp] = multiplier(t, xi);
      s += c * (derivative ? dp : p) * std::exp(cplx(0.0, xi * x));
    }
    return s;
  }

  Example id_;
  int m_;
  TrigPolynomial u0_;
  RealVector coef_;
};

inline ClosedForm closed_form(Example id, int m, const TrigPolynomial& u0) { return ClosedForm(id, m, u0); }

/// max over t of max_x |u_tt + b0 u_t + Op(a) u + Op(b) u| / max_x |u| for the
/// closed form, with 5-point differences in t (step min(1e-3, t/100)) and
/// spectral x-derivatives.
inline double residual_check(Example id, int m, const TrigPolynomial& u0, const GridSpec& grid,
                             const RealVector& t_grid) {
  const ClosedForm cf(id, m, u0);
  CauchyProblem pb;
  pb.family = counterexample_family(id, m);
  double worst = 0.0;
  for (double t : t_grid) {
    if (!(t > 0.0)) throw InvalidArgument("residual_check: times must be positive");
    const double h = std::min(1e-3, 1e-2 * t);
    const auto um2 = cf.sample(grid, t - 2 * h), um1 = cf.sample(grid, t - h), u = cf.sample(grid, t);
    const auto up1 = cf.sample(grid, t + h), up2 = cf.sample(grid, t + 2 * h);
    const std::size_t n = grid.N();
    ComplexVector ut(n), utt(n);
    for (std::size_t i = 0; i < n; ++i) {
      ut[i] = (-up2[i] + 8.0 * up1[i] - 8.0 * um1[i] + um2[i]) / (12.0 * h);
      utt[i] = (-up2[i] + 16.0 * up1[i] - 30.0 * u[i] + 16.0 * um1[i] - um2[i]) / (12.0 * h * h);
    }
    const auto [du, dv] = assemble_rhs(t, u, ut, pb, grid);
    double rmax = 0.0, umax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      rmax = std::max(rmax, std::abs(utt[i] - dv[i]));
      umax = std::max(umax, std::abs(u[i]));
    }
    if (umax > 0.0) worst = std::max(worst, rmax / umax);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Loss of derivatives
// ---------------------------------------------------------------------------

struct FrequencyBand {
  long lo = 0;
  long hi = 0;

  /// |j| in [N/16, N/6].
  static FrequencyBand standard(std::size_t N) {
    return {static_cast<long>(N / 16), static_cast<long>(N / 6)};
  }
};

/// Least-squares slope of log(|u_t^(xi)| / |u0^(xi)|) against log <xi>_k over
/// the modes of the band.
inline LineFit loss_slope(const GridSpec& grid, const ComplexVector& ut, const ComplexVector& u0,
                          const FrequencyBand& band) {
  check_size(grid, ut.size(), "loss_slope");
  check_size(grid, u0.size(), "loss_slope");
  const auto ct = dft_forward(grid, ut), c0 = dft_forward(grid, u0);
  RealVector xs, ys;
  for (std::size_t s = 0; s < grid.N(); ++s) {
    const long j = std::labs(grid.index(s));
    if (j < band.lo || j > band.hi || s == grid.nyquist_slot()) continue;
    if (!(std::abs(c0[s]) > 1e-12) || !(std::abs(ct[s]) > 0.0)) continue;
    xs.push_back(std::log(bracket(grid.xi(s), grid.k())));
    ys.push_back(std::log(std::abs(ct[s]) / std::abs(c0[s])));
  }
  if (xs.size() < 2) throw InvalidArgument("loss_slope: band holds fewer than two usable modes");
  return fit_line(xs, ys);
}

// ---------------------------------------------------------------------------
// Cone of dependence
// ---------------------------------------------------------------------------

/// c* = max over samples of sqrt(a(t, x, 1)) t^{p/2} / omega(x). Separable
/// families are evaluated on the homogeneous part coef(t, x) |xi|^2.
inline double propagation_speed(const CoefficientFamily& family, const GridSpec& grid, const RealVector& t_samples) {
  double c = 0.0;
  for (double t : t_samples) {
    if (!(t > 0.0)) throw InvalidArgument("propagation_speed: sample times must be positive");
    const double tp = std::pow(t, 0.5 * family.rates.p);
    for (double x : grid.xs()) {
      const double a = family.separable ? family.separable->coefficient(t, x) : family.a(t, x, 1.0);
      c = std::max(c, std::sqrt(std::max(a, 0.0)) * tp / family.pair.omega(x));
    }
  }
  return c;
}

struct ConeSpec {
  double x0 = 0.0;
  double t0 = 0.0;
  double c_star = 1.0;
  double exponent = 1.0; ///< 1 - p/2
  ScalarFn omega = [](double) { return 1.0; };

  static ConeSpec for_family(const CoefficientFamily& family, double c_star, double x0 = 0.0, double t0 = 0.0) {
    ConeSpec c;
    c.x0 = x0;
    c.t0 = t0;
    c.c_star = c_star;
    c.exponent = 1.0 - 0.5 * family.rates.p;
    c.omega = family.pair.omega.value;
    c.validate();
    return c;
  }

  void validate() const {
    if (!(c_star > 0.0)) throw InvalidArgument("ConeSpec: requires c* > 0");
    if (!(exponent > 0.75 && exponent <= 1.0)) throw InvalidArgument("ConeSpec: requires exponent in (3/4, 1]");
  }
};

struct ConeEntry {
  double t = 0.0;
  double measured = 0.0;
  double predicted = 0.0;
  bool pass = true;
};

struct ConeReport {
  std::vector<ConeEntry> entries;
  double initial_radius = 0.0;
  bool valid = true;
  std::string reason;

  bool passed() const {
    return valid && std::all_of(entries.begin(), entries.end(), [](const ConeEntry& e) { return e.pass; });
  }
};

inline void to_json(nlohmann::json& j, const ConeEntry& e) {
  j = {{"t", e.t}, {"measured_radius", e.measured}, {"predicted_radius", e.predicted}, {"pass", e.pass}};
}

inline void to_json(nlohmann::json& j, const ConeReport& r) {
  j = {{"initial_radius", r.initial_radius}, {"valid", r.valid}, {"reason", r.reason}, {"pass", r.passed()},
       {"entries", r.entries}};
}

/// Measured support radius about x0 against
///   R + c* max_{|x - x0| <= R'} omega(x) (t - t0)^exponent + 3 dx
/// at every snapshot, R being the radius of the first snapshot.
inline ConeReport cone_check(const Trajectory& traj, const GridSpec& grid, const ConeSpec& cone,
                             double threshold = 1e-10) {
  cone.validate();
  ConeReport rep;
  if (traj.snapshots.empty()) return rep;
  rep.initial_radius = support_radius(grid, traj.snapshots.front().u, threshold, cone.x0);
  for (const auto& s : traj.snapshots) {
    ConeEntry e;
    e.t = s.t;
    e.measured = support_radius(grid, s.u, threshold, cone.x0);
    double wmax = 0.0;
    for (double x : grid.xs())
      if (std::abs(x - cone.x0) <= e.measured) wmax = std::max(wmax, cone.omega(x));
    e.predicted = rep.initial_radius + cone.c_star * wmax * std::pow(std::max(s.t - cone.t0, 0.0), cone.exponent) +
                  3.0 * grid.dx();
    e.pass = e.measured <= e.predicted;
    if (e.measured >= 0.75 * grid.L()) {
      rep.valid = false;
      rep.reason = "support reached |x - x0| = 3L/4 at t = " + std::to_string(s.t);
    }
    rep.entries.push_back(e);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Energy monitoring
// ---------------------------------------------------------------------------

struct EnergyOptions {
  /// Evaluate every E(t) with Lambda frozen at its initial value.
  bool freeze_lambda = false;
  /// Fourier coefficients below noise_floor * max|c| are zeroed before the
  /// exponential weights are applied; 0 keeps every coefficient.
  double noise_floor = 1e-12;
};

struct EnergyTrace {
  RealVector times;
  RealVector lambda_values; ///< Lambda(t)
  RealVector u_norms;       ///< ||u||_{s+e, Lambda(t)}
  RealVector ut_norms;      ///< ||d_t u||_{s, Lambda(t)}
  RealVector data_bound;    ///< data norms plus int ||f||_{s, Lambda}
  double verdict = 0.0;     ///< sup E / D
  double worst_time = 0.0;

  double energy(std::size_t i) const { return u_norms[i] + ut_norms[i]; }
};

inline void to_json(nlohmann::json& j, const EnergyTrace& tr) {
  j = {{"times", tr.times},       {"Lambda", tr.lambda_values}, {"u_norm", tr.u_norms},
       {"ut_norm", tr.ut_norms},  {"data_bound", tr.data_bound}, {"verdict", tr.verdict},
       {"worst_time", tr.worst_time}};
}

/// E(t) = ||u||_{s+e, Lambda(t)} + ||d_t u||_{s, Lambda(t)} against
/// D(t) = ||f1||_{s+2e, Lambda(t0)} + ||f2||_{s+e, Lambda(t0)} + int_t0^t ||f||_{s, Lambda},
/// e = (1, 1), sigma from the profile; the forcing integral is trapezoidal on
/// the snapshot times.
inline EnergyTrace energy_monitor(const Trajectory& traj, const CauchyProblem& pb, const GridSpec& grid,
                                  const SobolevIndex& base, const SingularityProfile& prof, double lambda,
                                  const EnergyOptions& opt = {}) {
  if (!(lambda >= 0.0)) throw InvalidArgument("energy_monitor: requires lambda >= 0");
  const auto& pair = pb.family.pair;
  const double sigma = prof.sigma;
  auto index = [&](double shift, double eps) { return SobolevIndex{base.s1 + shift, base.s2 + shift, eps, sigma}; };
  const double lam0 = lambda_loss(pb.t_start, lambda, prof);
  guard_loss_exponent(grid, lam0, sigma, pair, "energy_monitor");

  auto norm = [&](const ComplexVector& u, double shift, double eps) {
    if (!(opt.noise_floor > 0.0)) return sobolev_norm(grid, u, index(shift, eps), pair);
    auto c = dft_forward(grid, u);
    double cmax = 0.0;
    for (const auto& z : c) cmax = std::max(cmax, std::abs(z));
    for (auto& z : c)
      if (std::abs(z) < opt.noise_floor * cmax) z = 0.0;
    return sobolev_norm_spectral(grid, c, index(shift, eps), pair);
  };

  EnergyTrace tr;
  const double data = norm(pb.f1, 2.0, lam0) + norm(pb.f2, 1.0, lam0);
  auto forcing_norm = [&](double t, double eps) {
    if (!pb.forcing) return 0.0;
    ComplexVector f(grid.N());
    for (std::size_t i = 0; i < grid.N(); ++i) f[i] = pb.force(t, grid.x(i));
    return norm(f, 0.0, eps);
  };
  double integral = 0.0, prev_t = pb.t_start, prev_f = forcing_norm(pb.t_start, lam0);
  for (const auto& s : traj.snapshots) {
    const double lam = opt.freeze_lambda ? lam0 : lambda_loss(s.t, lambda, prof);
    const double fn = forcing_norm(s.t, lam);
    integral += 0.5 * (s.t - prev_t) * (fn + prev_f);
    prev_t = s.t;
    prev_f = fn;
    tr.times.push_back(s.t);
    tr.lambda_values.push_back(lam);
    tr.u_norms.push_back(norm(s.u, 1.0, lam));
    tr.ut_norms.push_back(norm(s.v, 0.0, lam));
    tr.data_bound.push_back(data + integral);
    const double e = tr.u_norms.back() + tr.ut_norms.back();
    if (!std::isfinite(e) || !std::isfinite(tr.data_bound.back())) {
      throw NumericalAbort("energy_monitor: non-finite norm at t = " + std::to_string(s.t));
    }
    double ratio = 0.0;
    if (e > 0.0) {
      if (!(tr.data_bound.back() > 0.0)) {
        throw NumericalAbort("energy_monitor: nonzero energy with zero data at t = " + std::to_string(s.t));
      }
      ratio = e / tr.data_bound.back();
    }
    if (ratio > tr.verdict) {
      tr.verdict = ratio;
      tr.worst_time = s.t;
    }
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Fitting lambda
// ---------------------------------------------------------------------------

/// Principal symbols of the two block matrices of the first-order system,
/// row-major {11, 12, 21, 22}.
struct BlockSymbols {
  std::array<cplx, 4> a0{};
  std::array<cplx, 4> a1{};
};

using BlockFn = std::function<BlockSymbols(double t, double x, double xi)>;

inline double frobenius(const std::array<cplx, 4>& m) {
  double s = 0.0;
  for (const auto& v : m) s += std::norm(v);
  return std::sqrt(s);
}

/// Pointwise block symbols with compositions as products and commutators as
/// their leading Poisson-bracket term, sigma([P, Q]) ~ -i {p, q}.
class SystemSymbols {
public:
  explicit SystemSymbols(const CoefficientFamily& family)
      : fam_(family), root_(excise(family), 1.0), h_(root_) {}

  BlockSymbols operator()(double t, double x, double xi) const {
    const cplx I(0.0, 1.0);
    const auto& ex = root_.excised();
    const double k = fam_.k;
    const double w = fam_.pair.omega(x), dw = fam_.pair.omega.derivative(x);
    const double br = bracket(xi, k);
    const double m = w * br;
    const double tau = root_(t, x, xi);
    const double at = ex(t, x, xi);
    const cplx H = h_(t, x, xi), dtH = h_.dt(t, x, xi);

    const double B0 = (fam_.a(t, x, xi) - at) / m;
    const cplx bsym = I * fam_.lower_b1(t, x) * xi + fam_.lower_b2(t, x);
    // a~ - tau^2 vanishes pointwise.
    const cplx B1 = (-I * root_.dt(t, x, xi) + bsym) / m;
    const double b0 = fam_.lower_b0(t, x);
    const cplx B3 = b0 * (1.0 - I * tau * H / m);
    const cplx B4 = -I * b0 * tau / m;

    // Poisson brackets {m, tau} and {tau, H}.
    const double dxi_m = w * xi / br, dx_m = dw * br;
    const double dx_tau = root_.dx(t, x, xi), dxi_tau = root_.dxi(t, x, xi);
    const double pb_m_tau = dxi_m * dx_tau - dx_m * dxi_tau;
    const double hx = 1e-6 * std::max(1.0, std::abs(x)), hxi = 1e-6 * std::max(1.0, std::abs(xi));
    const cplx dx_H = (h_(t, x + hx, xi) - h_(t, x - hx, xi)) / (2.0 * hx);
    const cplx dxi_H = (h_(t, x, xi + hxi) - h_(t, x, xi - hxi)) / (2.0 * hxi);
    const cplx pb_tau_H = dxi_tau * dx_H - dx_tau * dxi_H;

    // 2 i H tau - M = -phi(s/3) m exactly.
    const double near = ex.cutoff()(ex.scale(t, x, xi) / 3.0);
    const cplx B2 = -near * m + pb_m_tau * H / m + pb_tau_H - H * B1 * H + dtH;

    BlockSymbols s;
    s.a0 = {B0 * H, B0, -H * B0 * H, -H * B0};
    s.a1 = {B1 * H + B3, B1 + B4, B2 - H * B3, pb_m_tau / m - H * (B1 + B4)};
    return s;
  }

private:
  CoefficientFamily fam_;
  CharRoot root_;
  HSymbol h_;
};

struct LambdaFit {
  double lambda = 0.0;
  double t = 0.0, x = 0.0, xi = 0.0; ///< arg-max sample
  std::size_t samples = 0;
};

inline void to_json(nlohmann::json& j, const LambdaFit& f) {
  j = {{"lambda", f.lambda}, {"argmax", {{"t", f.t}, {"x", f.x}, {"xi", f.xi}}}, {"samples", f.samples}};
}

/// Smallest lambda with |A0| + |A1| <= lambda t^{delta* - 1} (Phi <xi>_k)^{1/sigma}
/// on the lattice t_samples x grid points x grid frequencies, using Frobenius
/// norms of the block symbols.
inline LambdaFit fit_lambda_from_blocks(const BlockFn& blocks, const StructurePair& pair, double k,
                                        const RealVector& t_samples, const RealVector& xs, const RealVector& xis,
                                        const SingularityProfile& prof) {
  LambdaFit fit;
  for (double t : t_samples) {
    if (!(t > 0.0)) throw InvalidArgument("fit_lambda: sample times must be positive");
    const double tw = std::pow(t, 1.0 - prof.delta_star);
    for (double x : xs) {
      const double phi = pair.phi(x);
      for (double xi : xis) {
        const auto b = blocks(t, x, xi);
        const double need = (frobenius(b.a0) + frobenius(b.a1)) * tw / std::pow(phi * bracket(xi, k), 1.0 / prof.sigma);
        if (!std::isfinite(need)) {
          throw NumericalAbort("fit_lambda: non-finite block symbol at t = " + std::to_string(t) +
                               ", x = " + std::to_string(x) + ", xi = " + std::to_string(xi));
        }
        ++fit.samples;
        if (need > fit.lambda) {
          fit.lambda = need;
          fit.t = t;
          fit.x = x;
          fit.xi = xi;
        }
      }
    }
  }
  return fit;
}

inline LambdaFit fit_lambda(const CoefficientFamily& family, const GridSpec& grid, const RealVector& t_samples,
                            const SingularityProfile& prof) {
  const SystemSymbols sym(family);
  return fit_lambda_from_blocks([&](double t, double x, double xi) { return sym(t, x, xi); }, family.pair, family.k,
                                t_samples, grid.xs(), grid.xis(), prof);
}

} // namespace singwave
