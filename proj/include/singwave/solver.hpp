#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "quantize.hpp"
#include "structure.hpp"
#include "symbols.hpp"

namespace singwave {

// ---------------------------------------------------------------------------
// Problem, mesh, trajectory
// ---------------------------------------------------------------------------

/// u'' + b0 u' + Op(a) u + Op(b) u = f on [t_start, T], u = f1 and u' = f2 at t_start.
struct CauchyProblem {
  CoefficientFamily family;
  TxFn forcing;      ///< empty means f = 0
  ComplexVector f1;  ///< u(t_start) on the grid
  ComplexVector f2;  ///< u'(t_start) on the grid
  double t_start = 0.0;
  double T = 1.0;
  bool use_excision = false;
  /// Data that are genuinely 2L-periodic (trigonometric polynomials) are
  /// exempt from the compact-support requirement |x| <= L/2.
  bool periodic_data = false;

  double force(double t, double x) const { return forcing ? forcing(t, x) : 0.0; }
};

/// Largest |x| at which |u| exceeds rel * max|u|; 0 for the zero field.
inline double support_radius(const GridSpec& grid, const ComplexVector& u, double rel, double center = 0.0) {
  double umax = 0.0;
  for (const auto& v : u) umax = std::max(umax, std::abs(v));
  if (umax == 0.0) return 0.0;
  double r = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) >= rel * umax) r = std::max(r, std::abs(grid.x(i) - center));
  }
  return r;
}

inline void validate_problem(const CauchyProblem& pb, const GridSpec& grid) {
  check_size(grid, pb.f1.size(), "CauchyProblem f1");
  check_size(grid, pb.f2.size(), "CauchyProblem f2");
  if (!(pb.t_start >= 0.0 && pb.t_start < pb.T)) throw InvalidArgument("CauchyProblem: requires 0 <= t_start < T");
  if (!pb.family.a) throw InvalidArgument("CauchyProblem: family has no principal symbol");
  if (!pb.periodic_data) {
    double scale = 0.0;
    for (const auto* f : {&pb.f1, &pb.f2})
      for (const auto& v : *f) scale = std::max(scale, std::abs(v));
    for (const auto* f : {&pb.f1, &pb.f2}) {
      for (std::size_t i = 0; i < f->size(); ++i) {
        if (std::abs((*f)[i]) > 1e-12 * scale && std::abs(grid.x(i)) > 0.5 * grid.L()) {
          std::ostringstream os;
          os << "CauchyProblem: data not supported in |x| <= L/2 (x = " << grid.x(i) << ")";
          throw InvalidArgument(os.str());
        }
      }
    }
  }
}

struct TimeMesh {
  RealVector nodes;
  double kappa = 2.0;
  std::size_t M = 0;

  /// t_j = t_start + (T - t_start)(j/M)^kappa.
  static TimeMesh graded(double t_start, double T, std::size_t M, double kappa) {
    if (!(M >= 1)) throw InvalidArgument("TimeMesh: requires M >= 1");
    if (!(kappa >= 1.0)) throw InvalidArgument("TimeMesh: requires kappa >= 1");
    if (!(T > t_start && t_start >= 0.0)) throw InvalidArgument("TimeMesh: requires 0 <= t_start < T");
    TimeMesh mesh;
    mesh.kappa = kappa;
    mesh.M = M;
    mesh.nodes.resize(M + 1);
    for (std::size_t j = 0; j <= M; ++j) {
      mesh.nodes[j] = t_start + (T - t_start) * std::pow(static_cast<double>(j) / static_cast<double>(M), kappa);
    }
    mesh.nodes.back() = T;
    return mesh;
  }

  /// kappa = max(2, 1/(1-p), 1/(1-r)); rates with r >= 1 (non-integrable
  /// lower-order terms) need t_start > 0 and contribute nothing to the grading.
  static double grading_for(const BlowupRates& rates, double t_start) {
    double kappa = std::max(2.0, 1.0 / (1.0 - rates.p));
    if (rates.r < 1.0) {
      kappa = std::max(kappa, 1.0 / (1.0 - rates.r));
    } else if (t_start <= 0.0) {
      throw InvalidArgument("TimeMesh: lower-order rate r >= 1 requires t_start > 0");
    }
    return kappa;
  }

  static TimeMesh for_problem(const CauchyProblem& pb, std::size_t M = 2048) {
    return graded(pb.t_start, pb.T, M, grading_for(pb.family.rates, pb.t_start));
  }
};

struct Snapshot {
  double t = 0.0;
  ComplexVector u;
  ComplexVector v; ///< d_t u
};

/// One mesh interval: the number of RK4 substeps taken after CFL halving.
struct StepRecord {
  double t = 0.0;
  double h = 0.0;
  unsigned halvings = 0;
  double speed = 0.0; ///< speed bound at the midpoint of the first substep
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  std::vector<StepRecord> steps;

  unsigned max_halvings() const {
    unsigned m = 0;
    for (const auto& s : steps) m = std::max(m, s.halvings);
    return m;
  }

  double max_speed() const {
    double m = 0;
    for (const auto& s : steps) m = std::max(m, s.speed);
    return m;
  }

  const Snapshot& nearest(double t) const {
    if (snapshots.empty()) throw InvalidArgument("Trajectory: no snapshots");
    return *std::min_element(snapshots.begin(), snapshots.end(), [t](const Snapshot& a, const Snapshot& b) {
      return std::abs(a.t - t) < std::abs(b.t - t);
    });
  }
};

// ---------------------------------------------------------------------------
// Right-hand side
// ---------------------------------------------------------------------------

namespace detail {

/// Applies the spatial part of the operator at a fixed time. Separable
/// principal symbols use one multiplier pass; everything else is dense
/// Kohn-Nirenberg.
class SpatialOperator {
public:
  SpatialOperator(const CauchyProblem& pb, const GridSpec& grid)
      : grid_(grid), fam_(pb.use_excision ? excise(pb.family).as_family() : pb.family),
        pb_(pb), freq_(grid.N(), 0.0), dx_(grid.N()) {
    if (fam_.separable) {
      for (std::size_t m = 0; m < grid.N(); ++m) freq_[m] = frequency_factor(fam_.separable->freq, grid.xi(m), fam_.k);
    }
    for (std::size_t m = 0; m < grid.N(); ++m) dx_[m] = cplx(0.0, grid.xi(m));
    dx_[grid.nyquist_slot()] = 0.0;
  }

  const CoefficientFamily& family() const noexcept { return fam_; }

  /// f - b0 v - Op(a) u - Op(b) u at time t.
  ComplexVector accel(double t, const ComplexVector& u, const ComplexVector& v) const {
    const std::size_t n = grid_.N();
    const auto c = dft_forward(grid_, u);
    ComplexVector cd(n);
    for (std::size_t m = 0; m < n; ++m) cd[m] = dx_[m] * c[m];
    const auto ux = dft_inverse(grid_, cd);
    ComplexVector au;
    if (fam_.separable) {
      ComplexVector ca(n);
      for (std::size_t m = 0; m < n; ++m) ca[m] = freq_[m] * c[m];
      au = dft_inverse(grid_, ca);
      for (std::size_t i = 0; i < n; ++i) au[i] *= fam_.separable->coefficient(t, grid_.x(i));
    } else {
      au = apply_kn(grid_, SymbolMatrix(grid_, [&](double x, double xi) { return cplx(fam_.a(t, x, xi)); }), u);
    }
    ComplexVector out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = grid_.x(i);
      out[i] = pb_.force(t, x) - fam_.lower_b0(t, x) * v[i] - au[i] - fam_.lower_b1(t, x) * ux[i] -
               fam_.lower_b2(t, x) * u[i];
    }
    return out;
  }

  /// sqrt(sup_{x, xi != 0} a / xi^2 + sup_x |b1| / xi_max), the CFL speed bound,
  /// and sup_x |b0|.
  std::pair<double, double> bounds(double t) const {
    const std::size_t n = grid_.N();
    double xi_max = 0.0;
    for (std::size_t m = 0; m < n; ++m) xi_max = std::max(xi_max, std::abs(grid_.xi(m)));
    double speed2 = 0.0, damp = 0.0;
    double freq_ratio = 0.0;
    if (fam_.separable) {
      for (std::size_t m = 0; m < n; ++m) {
        const double xi = grid_.xi(m);
        if (xi != 0.0) freq_ratio = std::max(freq_ratio, freq_[m] / (xi * xi));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double x = grid_.x(i);
      double s2 = 0.0;
      if (fam_.separable) {
        s2 = std::abs(fam_.separable->coefficient(t, x)) * freq_ratio;
      } else {
        for (std::size_t m = 0; m < n; ++m) {
          const double xi = grid_.xi(m);
          if (xi != 0.0) s2 = std::max(s2, std::abs(fam_.a(t, x, xi)) / (xi * xi));
        }
      }
      s2 += std::abs(fam_.lower_b1(t, x)) / xi_max;
      speed2 = std::max(speed2, s2);
      damp = std::max(damp, std::abs(fam_.lower_b0(t, x)));
    }
    return {std::sqrt(speed2), damp};
  }

private:
  const GridSpec& grid_;
  CoefficientFamily fam_;
  const CauchyProblem& pb_;
  RealVector freq_;
  ComplexVector dx_;
};

inline void require_finite(const ComplexVector& w, double t, double h, const char* what) {
  if (!all_finite(w)) {
    std::ostringstream os;
    os.precision(17);
    os << "integrate: non-finite " << what << " in step t = " << t << ", h = " << h;
    throw NumericalAbort(os.str());
  }
}

} // namespace detail

/// (du, dv) = (v, f - b0 v - Op(a or a~) u - Op(b) u).
inline std::pair<ComplexVector, ComplexVector> assemble_rhs(double t, const ComplexVector& u, const ComplexVector& v,
                                                            const CauchyProblem& pb, const GridSpec& grid) {
  check_size(grid, u.size(), "assemble_rhs");
  check_size(grid, v.size(), "assemble_rhs");
  detail::SpatialOperator op(pb, grid);
  auto dv = op.accel(t, u, v);
  detail::require_finite(dv, t, 0.0, "right-hand side");
  return {v, std::move(dv)};
}

struct IntegrateOptions {
  double cfl = 0.5;          ///< h <= cfl dx / speed
  double damping_limit = 1.0; ///< h sup|b0| <= damping_limit
  unsigned max_halvings = 20;
  /// A first interval [0, t1] is split at t1 2^-l, l = 1..start_levels.
  unsigned start_levels = 40;
};

/// Classical RK4 over the mesh nodes with output times merged in. The first
/// stage of a step starting at t = 0 is sampled at h/2 so no coefficient is
/// evaluated at t = 0, and a first interval starting at 0 is refined
/// geometrically toward 0.
inline Trajectory integrate(const CauchyProblem& pb, const GridSpec& grid, const TimeMesh& mesh,
                            RealVector output_times, const IntegrateOptions& opt = {}) {
  validate_problem(pb, grid);
  if (mesh.nodes.size() < 2) throw InvalidArgument("integrate: mesh needs at least two nodes");
  if (std::abs(mesh.nodes.front() - pb.t_start) > 1e-15 * std::max(1.0, pb.T) ||
      std::abs(mesh.nodes.back() - pb.T) > 1e-15 * std::max(1.0, pb.T)) {
    throw InvalidArgument("integrate: mesh must span [t_start, T]");
  }
  std::sort(output_times.begin(), output_times.end());
  output_times.erase(std::unique(output_times.begin(), output_times.end()), output_times.end());
  for (double t : output_times) {
    if (!(t >= pb.t_start && t <= pb.T)) throw InvalidArgument("integrate: output time outside [t_start, T]");
  }
  RealVector nodes = mesh.nodes;
  nodes.insert(nodes.end(), output_times.begin(), output_times.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  if (nodes.front() == 0.0) {
    const double t1 = nodes[1];
    for (unsigned l = 1; l <= opt.start_levels; ++l) nodes.push_back(std::ldexp(t1, -static_cast<int>(l)));
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  }

  detail::SpatialOperator op(pb, grid);
  Trajectory traj;
  ComplexVector u = pb.f1, v = pb.f2;
  const std::size_t n = grid.N();
  std::size_t next_out = 0;
  auto maybe_snapshot = [&](double t) {
    while (next_out < output_times.size() && output_times[next_out] == t) {
      traj.snapshots.push_back({t, u, v});
      ++next_out;
    }
  };
  maybe_snapshot(nodes.front());

  auto rk4 = [&](double t, double h) {
    const double t1 = t == 0.0 ? 0.5 * h : t;
    const auto a1 = op.accel(t1, u, v);
    ComplexVector u2(n), v2(n);
    for (std::size_t i = 0; i < n; ++i) {
      u2[i] = u[i] + 0.5 * h * v[i];
      v2[i] = v[i] + 0.5 * h * a1[i];
    }
    const auto a2 = op.accel(t + 0.5 * h, u2, v2);
    ComplexVector u3(n), v3(n);
    for (std::size_t i = 0; i < n; ++i) {
      u3[i] = u[i] + 0.5 * h * v2[i];
      v3[i] = v[i] + 0.5 * h * a2[i];
    }
    const auto a3 = op.accel(t + 0.5 * h, u3, v3);
    ComplexVector u4(n), v4(n);
    for (std::size_t i = 0; i < n; ++i) {
      u4[i] = u[i] + h * v3[i];
      v4[i] = v[i] + h * a3[i];
    }
    const auto a4 = op.accel(t + h, u4, v4);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] += h / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
      v[i] += h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
    }
    detail::require_finite(u, t, h, "state");
    detail::require_finite(v, t, h, "state");
  };

  const double dx = grid.dx();
  for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
    const double t0 = nodes[j], t1 = nodes[j + 1];
    StepRecord rec{t0, t1 - t0, 0, 0.0};
    // Find the halving level at which every substep satisfies the limits.
    unsigned level = 0;
    for (;; ++level) {
      if (level > opt.max_halvings) {
        std::ostringstream os;
        os.precision(17);
        os << "integrate: CFL not satisfied after " << opt.max_halvings << " halvings on [" << t0 << ", " << t1
           << "]";
        throw NumericalAbort(os.str());
      }
      const std::size_t sub = std::size_t{1} << level;
      const double h = (t1 - t0) / static_cast<double>(sub);
      bool ok = true;
      for (std::size_t s = 0; s < sub && ok; ++s) {
        const auto [speed, damp] = op.bounds(t0 + (static_cast<double>(s) + 0.5) * h);
        if (s == 0) rec.speed = speed;
        if (h * speed > opt.cfl * dx || h * damp > opt.damping_limit) ok = false;
        if (!std::isfinite(speed) || !std::isfinite(damp)) ok = false;
      }
      if (ok) break;
    }
    rec.halvings = level;
    const std::size_t sub = std::size_t{1} << level;
    const double h = (t1 - t0) / static_cast<double>(sub);
    for (std::size_t s = 0; s < sub; ++s) rk4(t0 + static_cast<double>(s) * h, h);
    traj.steps.push_back(rec);
    maybe_snapshot(t1);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// First-order system
// ---------------------------------------------------------------------------

/// Quantised operators of the 2x2 reduction at a fixed time:
/// T = Op(tau), H = Op(sigma(H)), M = omega <D>_k and the principal parts.
class SystemOperators {
public:
  SystemOperators(const CauchyProblem& pb, const GridSpec& grid, double t)
      : grid_(grid), pb_(pb), t_(t), root_(excise(pb.family), 1.0), H_(root_) {
    const auto& fam = pb.family;
    const auto& ex = root_.excised();
    tau_ = SymbolMatrix(grid, [&](double x, double xi) { return cplx(root_(t, x, xi)); });
    dtau_ = SymbolMatrix(grid, [&](double x, double xi) { return cplx(root_.dt(t, x, xi)); });
    h_ = SymbolMatrix(grid, [&](double x, double xi) { return H_(t, x, xi); });
    dh_ = SymbolMatrix(grid, [&](double x, double xi) { return H_.dt(t, x, xi); });
    // A solve with the excised symbol has A = A~, so B0 vanishes.
    a_ = SymbolMatrix(grid, [&](double x, double xi) { return cplx(pb.use_excision ? ex(t, x, xi) : fam.a(t, x, xi)); });
    ea_ = SymbolMatrix(grid, [&](double x, double xi) { return cplx(ex(t, x, xi)); });
  }

  ComplexVector T(const ComplexVector& u) const { return apply_kn(grid_, tau_, u); }
  ComplexVector dT(const ComplexVector& u) const { return apply_kn(grid_, dtau_, u); }
  ComplexVector H(const ComplexVector& u) const { return apply_kn(grid_, h_, u); }
  ComplexVector dH(const ComplexVector& u) const { return apply_kn(grid_, dh_, u); }
  ComplexVector A(const ComplexVector& u) const { return apply_kn(grid_, a_, u); }
  ComplexVector At(const ComplexVector& u) const { return apply_kn(grid_, ea_, u); }

  /// omega(x) <D>_k u.
  ComplexVector M(const ComplexVector& u) const {
    const double k = grid_.k();
    auto w = apply_multiplier(grid_, [k](double xi) { return cplx(bracket(xi, k)); }, u);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= pb_.family.pair.omega(grid_.x(i));
    return w;
  }

  /// <D>_k^-1 (omega^-1 u), the exact inverse of M.
  ComplexVector Minv(const ComplexVector& u) const {
    ComplexVector w(u.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = u[i] / pb_.family.pair.omega(grid_.x(i));
    const double k = grid_.k();
    return apply_multiplier(grid_, [k](double xi) { return cplx(1.0 / bracket(xi, k)); }, w);
  }

  /// Op(b) u = b1 d_x u + b2 u.
  ComplexVector B(const ComplexVector& u) const {
    const auto ux = spectral_derivative(grid_, u, 1);
    ComplexVector w(u.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double x = grid_.x(i);
      w[i] = pb_.family.lower_b1(t_, x) * ux[i] + pb_.family.lower_b2(t_, x) * u[i];
    }
    return w;
  }

  ComplexVector b0(const ComplexVector& u) const {
    ComplexVector w(u.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = pb_.family.lower_b0(t_, grid_.x(i)) * u[i];
    return w;
  }

  double t() const noexcept { return t_; }
  const GridSpec& grid() const noexcept { return grid_; }
  const CauchyProblem& problem() const noexcept { return pb_; }

private:
  const GridSpec& grid_;
  const CauchyProblem& pb_;
  double t_;
  CharRoot root_;
  HSymbol H_;
  SymbolMatrix tau_, dtau_, h_, dh_, a_, ea_;
};

namespace detail {

inline ComplexVector add(const ComplexVector& a, const ComplexVector& b, cplx s = 1.0) {
  ComplexVector w(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) w[i] = a[i] + s * b[i];
  return w;
}

inline ComplexVector scale(const ComplexVector& a, cplx s) {
  ComplexVector w(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) w[i] = s * a[i];
  return w;
}

} // namespace detail

/// u1 = v + i T u, u2 = M u - H u1.
inline std::pair<ComplexVector, ComplexVector> reduce_to_system(const SystemOperators& ops, const ComplexVector& u,
                                                                const ComplexVector& v) {
  const cplx I(0.0, 1.0);
  auto u1 = detail::add(v, ops.T(u), I);
  auto u2 = detail::add(ops.M(u), ops.H(u1), -1.0);
  return {std::move(u1), std::move(u2)};
}

inline std::pair<ComplexVector, ComplexVector> reduce_to_system(double t, const ComplexVector& u,
                                                                const ComplexVector& v, const CauchyProblem& pb,
                                                                const GridSpec& grid) {
  check_size(grid, u.size(), "reduce_to_system");
  check_size(grid, v.size(), "reduce_to_system");
  return reduce_to_system(SystemOperators(pb, grid, t), u, v);
}

/// (A U)_1 and (A U)_2 for the blocks
///   B0 = (A - A~) M^-1,  B1 = (-i T' + A~ - T^2 + B) M^-1,
///   B3 = b0 (1 - i T M^-1 H),  B4 = -i b0 T M^-1,
///   A11 = B0 H + B1 H + B3,  A12 = B0 + B1 + B4,
///   A21 = -H A11 - M + i T H + i H T + i [M,T] M^-1 H + H',
///   A22 = i [M,T] M^-1 - H A12,
/// so that d_t U - diag(iT, -iT) U + A U = (f, -H f).
inline std::pair<ComplexVector, ComplexVector> apply_system_blocks(const SystemOperators& ops,
                                                                   const ComplexVector& u1, const ComplexVector& u2) {
  using detail::add;
  using detail::scale;
  const cplx I(0.0, 1.0);
  auto B0 = [&](const ComplexVector& w) {
    const auto m = ops.Minv(w);
    return add(ops.A(m), ops.At(m), -1.0);
  };
  auto B1 = [&](const ComplexVector& w) {
    const auto m = ops.Minv(w);
    auto r = add(ops.At(m), ops.dT(m), -I);
    r = add(r, ops.T(ops.T(m)), -1.0);
    return add(r, ops.B(m));
  };
  auto B3 = [&](const ComplexVector& w) { return ops.b0(add(w, ops.T(ops.Minv(ops.H(w))), -I)); };
  auto B4 = [&](const ComplexVector& w) { return scale(ops.b0(ops.T(ops.Minv(w))), -I); };
  auto A11 = [&](const ComplexVector& w) {
    const auto hw = ops.H(w);
    return add(add(B0(hw), B1(hw)), B3(w));
  };
  auto A12 = [&](const ComplexVector& w) { return add(add(B0(w), B1(w)), B4(w)); };
  // i [M,T] M^-1 w
  auto MT = [&](const ComplexVector& w) {
    const auto m = ops.Minv(w);
    return scale(add(ops.M(ops.T(m)), ops.T(ops.M(m)), -1.0), I);
  };
  auto out1 = add(A11(u1), A12(u2));
  auto r = scale(ops.H(A11(u1)), -1.0);
  r = add(r, ops.M(u1), -1.0);
  r = add(r, ops.T(ops.H(u1)), I);
  r = add(r, ops.H(ops.T(u1)), I);
  r = add(r, MT(ops.H(u1)));
  r = add(r, ops.dH(u1));
  r = add(r, MT(u2));
  r = add(r, ops.H(A12(u2)), -1.0);
  return {std::move(out1), std::move(r)};
}

struct ResidualReport {
  double max_residual = 0.0;
  double worst_time = 0.0;
  std::vector<std::pair<double, double>> per_time; ///< (t, relative residual)
};

/// max over interior snapshots of |d_t U - D U + A U - F| / |U| with d_t U from
/// three-point differences on the (possibly non-uniform) snapshot times.
inline ResidualReport system_residual_report(const Trajectory& traj, const CauchyProblem& pb, const GridSpec& grid) {
  const auto& snaps = traj.snapshots;
  if (snaps.size() < 3) throw InvalidArgument("system_residual: needs at least 3 snapshots");
  const cplx I(0.0, 1.0);
  ResidualReport rep;
  const std::size_t n = grid.N();
  // U at every snapshot, each with its own time's operators.
  std::vector<std::pair<ComplexVector, ComplexVector>> U(snaps.size());
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    U[s] = reduce_to_system(SystemOperators(pb, grid, snaps[s].t), snaps[s].u, snaps[s].v);
  }
  for (std::size_t s = 1; s + 1 < snaps.size(); ++s) {
    const double t = snaps[s].t;
    const double hm = t - snaps[s - 1].t, hp = snaps[s + 1].t - t;
    const double cm = -hp / (hm * (hm + hp)), c0 = (hp - hm) / (hm * hp), cp = hm / (hp * (hm + hp));
    const SystemOperators ops(pb, grid, t);
    const auto& [u1, u2] = U[s];
    double norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm2 += std::norm(u1[i]) + std::norm(u2[i]);
    if (norm2 == 0.0) {
      rep.per_time.emplace_back(t, 0.0);
      continue;
    }
    const auto [a1, a2] = apply_system_blocks(ops, u1, u2);
    const auto tu1 = ops.T(u1), tu2 = ops.T(u2);
    ComplexVector f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = pb.force(t, grid.x(i));
    const auto hf = ops.H(f);
    double res2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const cplx d1 = cm * U[s - 1].first[i] + c0 * u1[i] + cp * U[s + 1].first[i];
      const cplx d2 = cm * U[s - 1].second[i] + c0 * u2[i] + cp * U[s + 1].second[i];
      const cplx r1 = d1 - I * tu1[i] + a1[i] - f[i];
      const cplx r2 = d2 + I * tu2[i] + a2[i] + hf[i];
      res2 += std::norm(r1) + std::norm(r2);
    }
    const double rel = std::sqrt(res2 / norm2);
    rep.per_time.emplace_back(t, rel);
    if (rel > rep.max_residual) {
      rep.max_residual = rel;
      rep.worst_time = t;
    }
  }
  return rep;
}

inline double system_residual(const Trajectory& traj, const CauchyProblem& pb, const GridSpec& grid) {
  return system_residual_report(traj, pb, grid).max_residual;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Writes one CSV per snapshot (columns x, re_u, im_u, re_ut, im_ut) and
/// returns the file names relative to dir.
inline std::vector<std::string> write_trajectory_csv(const std::filesystem::path& dir, const std::string& prefix,
                                                     const GridSpec& grid, const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t s = 0; s < traj.snapshots.size(); ++s) {
    std::ostringstream name;
    name << prefix << "_snapshot_" << std::setw(4) << std::setfill('0') << s << ".csv";
    std::ofstream os(dir / name.str());
    if (!os) throw std::runtime_error("cannot write " + (dir / name.str()).string());
    os.precision(17);
    os << "x,re_u,im_u,re_ut,im_ut\n";
    const auto& sn = traj.snapshots[s];
    for (std::size_t i = 0; i < grid.N(); ++i) {
      os << grid.x(i) << ',' << sn.u[i].real() << ',' << sn.u[i].imag() << ',' << sn.v[i].real() << ','
         << sn.v[i].imag() << '\n';
    }
    files.push_back(name.str());
  }
  return files;
}

/// Mesh and CFL statistics for a run manifest.
inline nlohmann::json trajectory_summary(const TimeMesh& mesh, const Trajectory& traj) {
  nlohmann::json times = nlohmann::json::array();
  for (const auto& s : traj.snapshots) times.push_back(s.t);
  return {{"mesh", {{"M", mesh.M}, {"kappa", mesh.kappa}, {"t_start", mesh.nodes.front()}, {"T", mesh.nodes.back()}}},
          {"cfl", {{"max_halvings", traj.max_halvings()}, {"max_speed_bound", traj.max_speed()}, {"intervals", traj.steps.size()}}},
          {"snapshot_times", times}};
}

} // namespace singwave
