#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "analysis.hpp"

namespace singwave {

// ---------------------------------------------------------------------------
// Acceptance battery
// ---------------------------------------------------------------------------

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  nlohmann::json metrics = nlohmann::json::object();
  double seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const CriterionResult& r) {
  j = {{"id", r.id},           {"name", r.name},       {"pass", r.pass},
       {"detail", r.detail},   {"metrics", r.metrics}, {"seconds", r.seconds}};
}

struct AcceptanceOptions {
  std::uint64_t seed = 42;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

inline double max_abs(const ComplexVector& u) {
  double m = 0.0;
  for (const auto& z : u) m = std::max(m, std::abs(z));
  return m;
}

inline double max_diff(const ComplexVector& a, const ComplexVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double rel_l2(const GridSpec& g, const ComplexVector& a, const ComplexVector& b) {
  ComplexVector d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return l2_norm(g, d) / l2_norm(g, b);
}

inline RealVector linspace(double a, double b, std::size_t n) {
  RealVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

inline ComplexVector gaussian(const GridSpec& g, double width) {
  ComplexVector u(g.N());
  for (std::size_t i = 0; i < g.N(); ++i) u[i] = std::exp(-0.5 * g.x(i) * g.x(i) / (width * width));
  return u;
}

/// Exact solutions written out mode by mode. The finite-loss weights come from the
/// recurrence C_{j+1} = 2 (m - j) C_j / ((j + 1)(j + 1/2)) obtained by
/// substituting the ansatz into the equation.
inline ComplexVector exact_solution(Example id, int m, const TrigPolynomial& u0, const GridSpec& g, double t) {
  RealVector c{1.0};
  for (int j = 0; j < m; ++j) c.push_back(2.0 * (m - j) * c.back() / ((j + 1.0) * (j + 0.5)));
  const double s = std::sqrt(t);
  const double shift = id == Example::NoLoss ? 2.0 * t + 2.0 * (std::sin(s) - s * std::cos(s)) : t;
  ComplexVector u(g.N(), 0.0);
  for (const auto& [j, cj] : u0.modes) {
    const double xi = u0.wavenumber(j);
    cplx amp = 0.0;
    switch (id) {
    case Example::Finite:
      for (int l = 0; l <= m; ++l) amp += c[static_cast<std::size_t>(l)] * std::pow(cplx(0.0, t * xi), l);
      break;
    case Example::NotNecessary: amp = t; break;
    case Example::NoLoss: amp = 1.0; break;
    case Example::Nonunique: amp = t * t; break;
    }
    for (std::size_t i = 0; i < g.N(); ++i) u[i] += cj * amp * std::exp(cplx(0.0, xi * (g.x(i) + shift)));
  }
  return u;
}

struct ExampleCase {
  Example id;
  int m;
};

inline std::string case_name(const ExampleCase& c) {
  return to_string(c.id) + (c.id == Example::Finite ? " m=" + std::to_string(c.m) : "");
}

} // namespace detail

/// Residuals of every closed form and agreement of the integrated solutions
/// with them at t = 1.
inline CriterionResult criterion_counterexample_fidelity(const AcceptanceOptions& opt) {
  using detail::ExampleCase;
  CriterionResult r{1, "counterexample fidelity"};
  const GridSpec g(kPi, 1024);
  const auto u0 = TrigPolynomial::random(opt.seed);
  const RealVector ts{0.01, 0.05, 0.1, 0.3, 0.6, 1.0};
  const std::vector<ExampleCase> cases{{Example::Finite, 0},       {Example::Finite, 1},  {Example::Finite, 2},
                                       {Example::Finite, 3},       {Example::NotNecessary, 0},
                                       {Example::NoLoss, 0},       {Example::Nonunique, 0}};
  bool ok = true;
  double worst_res = 0.0, worst_err = 0.0, worst_time = 0.0;
  for (const auto& c : cases) {
    const auto t0 = detail::Clock::now();
    nlohmann::json m;
    const double res = residual_check(c.id, c.m, u0, g, ts);
    m["residual"] = res;
    ok = ok && res < 1e-6;
    worst_res = std::max(worst_res, res);
    // Oracle agreement at t = 1 before any integration.
    const double oracle = detail::rel_l2(g, closed_form(c.id, c.m, u0).sample(g, 1.0),
                                         detail::exact_solution(c.id, c.m, u0, g, 1.0));
    m["closed_form_vs_oracle"] = oracle;
    ok = ok && oracle < 1e-12;
    if (c.id != Example::Nonunique) {
      const double t_start = c.id == Example::NoLoss ? 0.0 : 1e-3;
      CauchyProblem pb;
      pb.family = counterexample_family(c.id, c.m);
      pb.f1 = detail::exact_solution(c.id, c.m, u0, g, t_start);
      pb.f2 = closed_form(c.id, c.m, u0).sample_dt(g, t_start);
      pb.t_start = t_start;
      pb.periodic_data = true;
      const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, 4096), {1.0});
      const double err = detail::rel_l2(g, traj.snapshots.back().u, detail::exact_solution(c.id, c.m, u0, g, 1.0));
      m["integrated_error"] = err;
      ok = ok && err <= 1e-5;
      worst_err = std::max(worst_err, err);
    }
    const double sec = detail::seconds_since(t0);
    m["seconds"] = sec;
    ok = ok && sec <= 60.0;
    worst_time = std::max(worst_time, sec);
    r.metrics[detail::case_name(c)] = m;
  }
  r.pass = ok;
  r.detail = "max residual " + detail::fmt(worst_res) + ", max integration error " + detail::fmt(worst_err) +
             ", slowest example " + detail::fmt(worst_time) + " s";
  return r;
}

/// Spectral slope of |u(1)^| / |u0^| for closed-form and integrated solutions.
inline CriterionResult criterion_loss_slopes(const AcceptanceOptions& opt) {
  CriterionResult r{2, "loss-of-derivative slopes"};
  const GridSpec g(kPi, 512);
  const auto u0 = TrigPolynomial::broadband(opt.seed + 1, kPi, 200);
  const auto band = FrequencyBand::standard(g.N());
  const auto ref = u0.sample(g);
  struct Case {
    Example id;
    int m;
    double target, tol;
  };
  const std::vector<Case> cases{{Example::Finite, 1, 1.0, 0.2},
                                {Example::Finite, 2, 2.0, 0.2},
                                {Example::Finite, 3, 3.0, 0.2},
                                {Example::NotNecessary, 0, 0.0, 0.05},
                                {Example::NoLoss, 0, 0.0, 0.05}};
  bool ok = true;
  std::string summary;
  for (const auto& c : cases) {
    const auto exact = detail::exact_solution(c.id, c.m, u0, g, 1.0);
    const double s_exact = loss_slope(g, exact, ref, band).slope;
    const double t_start = c.id == Example::NoLoss ? 0.0 : 1e-3;
    CauchyProblem pb;
    pb.family = counterexample_family(c.id, c.m);
    pb.f1 = detail::exact_solution(c.id, c.m, u0, g, t_start);
    pb.f2 = closed_form(c.id, c.m, u0).sample_dt(g, t_start);
    pb.t_start = t_start;
    pb.periodic_data = true;
    const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, 4096), {1.0});
    const double s_num = loss_slope(g, traj.snapshots.back().u, ref, band).slope;
    const bool pass = std::abs(s_exact - c.target) <= c.tol && std::abs(s_num - c.target) <= c.tol;
    ok = ok && pass;
    const std::string name = detail::case_name({c.id, c.m});
    r.metrics[name] = {{"target", c.target}, {"tolerance", c.tol}, {"closed_form", s_exact}, {"integrated", s_num}};
    summary += (summary.empty() ? "" : ", ") + name + ": " + detail::fmt(s_num);
  }
  r.pass = ok;
  r.detail = "integrated slopes " + summary;
  return r;
}

/// t^2 u0(x + t) solves the nonunique equation with zero Cauchy data.
inline CriterionResult criterion_nonuniqueness(const AcceptanceOptions& opt) {
  CriterionResult r{3, "nonuniqueness witness"};
  const GridSpec g(kPi, 1024);
  const auto u0 = TrigPolynomial::random(opt.seed);
  const double res = residual_check(Example::Nonunique, 0, u0, g, {0.01, 0.05, 0.1, 0.3, 0.6, 1.0});
  const auto cf = closed_form(Example::Nonunique, 0, u0);
  const double data_u = detail::max_abs(cf.sample(g, 0.0));
  const double data_ut = detail::max_abs(cf.sample_dt(g, 0.0));
  const double at_one = detail::max_abs(detail::exact_solution(Example::Nonunique, 0, u0, g, 1.0));
  const double oracle = detail::rel_l2(g, cf.sample(g, 1.0), detail::exact_solution(Example::Nonunique, 0, u0, g, 1.0));
  r.metrics = {{"residual", res},
               {"max_abs_u_at_0", data_u},
               {"max_abs_ut_at_0", data_ut},
               {"max_abs_u_at_1", at_one},
               {"closed_form_vs_oracle", oracle}};
  r.pass = res < 1e-6 && data_u == 0.0 && data_ut == 0.0 && at_one > 0.1 * detail::max_abs(u0.sample(g)) &&
           oracle < 1e-12;
  r.detail = "residual " + detail::fmt(res) + ", Cauchy data exactly zero, max|u(1)| = " + detail::fmt(at_one);
  return r;
}

/// Support growth of a compactly supported bump for no-loss and for the wave equation.
inline CriterionResult criterion_cone(const AcceptanceOptions&) {
  CriterionResult r{4, "cone of dependence"};
  const auto t0 = detail::Clock::now();
  const double L = 20.0, T = 0.2 * L;
  const GridSpec g(L, 1024);
  const auto outputs = detail::linspace(0.0, T, 41);

  CauchyProblem pb;
  pb.family = counterexample_family(Example::NoLoss);
  pb.f1 = detail::gaussian(g, 0.4);
  pb.f2 = spectral_derivative(g, pb.f1, 1);
  for (auto& c : pb.f2) c *= 2.0;
  pb.T = T;
  const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, 2048), outputs);
  const double c_star = propagation_speed(pb.family, g, detail::linspace(1e-4, T, 40001));
  const auto rep = cone_check(traj, g, ConeSpec::for_family(pb.family, c_star));
  bool explicit_bound = true;
  double worst_margin = -INFINITY;
  for (const auto& e : rep.entries) {
    const double growth = e.measured - rep.initial_radius;
    worst_margin = std::max(worst_margin, growth - (3.0 * e.t + 3.0 * g.dx()));
    explicit_bound = explicit_bound && growth <= 3.0 * e.t + 3.0 * g.dx();
  }

  CauchyProblem wave;
  wave.family = wave_family();
  wave.f1 = detail::gaussian(g, 0.4);
  wave.f2.assign(g.N(), 0.0);
  wave.T = T;
  const auto wtraj = integrate(wave, g, TimeMesh::graded(0.0, T, 2048, 1.0), outputs);
  const auto wrep = cone_check(wtraj, g, ConeSpec::for_family(wave.family, 1.0));
  const double wave_growth = wrep.entries.back().measured - wrep.initial_radius;

  const double sec = detail::seconds_since(t0);
  r.metrics = {{"c_star", c_star},          {"c_star_expected", 3.0},         {"max_excess_over_3t", worst_margin},
               {"no_loss_report", rep},     {"wave_report", wrep},            {"wave_growth_at_T", wave_growth},
               {"seconds", sec}};
  r.pass = std::abs(c_star - 3.0) < 1e-6 && rep.passed() && explicit_bound && wrep.passed() && sec <= 60.0;
  r.detail = "c* = " + detail::fmt(c_star) + ", max(growth - 3t - 3dx) = " + detail::fmt(worst_margin) +
             ", wave growth " + detail::fmt(wave_growth) + " by t = " + detail::fmt(T) + ", " + detail::fmt(sec) + " s";
  return r;
}

/// Exactness of the excision away from the transition band and the decay rate
/// of the L1 defect in Phi <xi>_k.
inline CriterionResult criterion_excision(const AcceptanceOptions&) {
  CriterionResult r{5, "excision contract"};
  const auto t0 = detail::Clock::now();
  TheoremFamilyParams prm;
  prm.p = 0.0;
  prm.q = 1.25;
  prm.pair = StructurePair::bracket_powers(0.5, 1.0);
  const auto fam = theorem_coefficient(prm);
  const auto ex = excise(fam);

  std::size_t outer = 0, inner = 0, mismatches = 0;
  for (double t : PhaseLattice::log_spaced(40, 1e-7, 1.0)) {
    for (double x : PhaseLattice::symmetric_log(21, 0.1, 100.0)) {
      for (double xi : PhaseLattice::symmetric_log(41, 0.1, 1e6)) {
        // Phi = <x>; samples within rounding of s = 1 or s = 2 are skipped.
        const double s = t * std::sqrt(1.0 + x * x) * std::sqrt(fam.k * fam.k + xi * xi);
        if (std::abs(s - 1.0) < 1e-12 || std::abs(s - 2.0) < 1e-12) continue;
        if (s > 2.0) {
          ++outer;
          mismatches += ex(t, x, xi) != fam.a(t, x, xi);
        } else if (s < 1.0) {
          ++inner;
          mismatches += ex(t, x, xi) != fam.reference(x, xi);
        }
      }
    }
  }

  // 16 x 16 lattice: x = +-10^(-1..2), xi = 10^(1..6).
  RealVector xs;
  for (double m : PhaseLattice::log_spaced(8, 0.1, 100.0)) {
    xs.push_back(-m);
    xs.push_back(m);
  }
  const auto xis = PhaseLattice::log_spaced(16, 10.0, 1e6);
  const double target = 2.0 - (1.0 - prm.p) / (prm.q - prm.p);
  double worst = -INFINITY;
  nlohmann::json per_x = nlohmann::json::array();
  for (double x : xs) {
    RealVector lx, ly;
    for (double xi : xis) {
      lx.push_back(std::log(fam.pair.phi(x) * bracket(xi, fam.k)));
      ly.push_back(std::log(l1_defect(fam, ex, x, xi)));
    }
    const auto fit = fit_line(lx, ly);
    worst = std::max(worst, fit.slope);
    per_x.push_back({{"x", x}, {"exponent", fit.slope}});
  }
  const double sec = detail::seconds_since(t0);
  r.metrics = {{"outer_samples", outer},   {"inner_samples", inner},   {"mismatches", mismatches},
               {"bound", target + 0.1},    {"max_exponent", worst},    {"per_x", per_x},
               {"seconds", sec}};
  r.pass = mismatches == 0 && outer > 0 && inner > 0 && worst <= target + 0.1 && sec <= 120.0;
  r.detail = std::to_string(outer + inner) + " exact samples, " + std::to_string(mismatches) +
             " mismatches, max l1 exponent " + detail::fmt(worst) + " (bound " + detail::fmt(target + 0.1) + "), " +
             detail::fmt(sec) + " s";
  return r;
}

/// Kohn-Nirenberg reductions, Parseval, the loss operator and the Sobolev norm.
inline CriterionResult criterion_quantizer(const AcceptanceOptions& opt) {
  CriterionResult r{6, "quantizer identities"};
  std::mt19937_64 rng(opt.seed);
  auto random_field = [&](std::size_t n) {
    ComplexVector u(n);
    for (auto& z : u) z = cplx(unit_from_bits(rng()) - 0.5, unit_from_bits(rng()) - 0.5);
    return u;
  };

  // Direct O(N^2) evaluation of sum_j a(x_i, xi_j) c_j e^{i x_i xi_j}.
  const GridSpec g(6.0, 128);
  const std::size_t n = g.N();
  const auto u = random_field(n);
  ComplexVector c(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t i = 0; i < n; ++i) c[m] += u[i] * std::exp(cplx(0.0, -g.x(i) * g.xi(m)));
    c[m] /= static_cast<double>(n);
  }
  auto direct = [&](const SymbolFn& a) {
    ComplexVector w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < n; ++m) w[i] += a(g.x(i), g.xi(m)) * c[m] * std::exp(cplx(0.0, g.x(i) * g.xi(m)));
    return w;
  };
  MultiplierFn mult = [](double xi) { return cplx(std::sqrt(1.0 + xi * xi), 0.3 * xi); };
  auto gfun = [](double x) { return 1.0 + 0.5 * std::sin(x) + x * x / 100.0; };
  const SymbolFn sym_m = [&](double, double xi) { return mult(xi); };
  const SymbolFn sym_g = [&](double x, double) { return cplx(gfun(x)); };
  const SymbolFn sym_mixed = [&](double x, double xi) { return gfun(x) * mult(xi); };
  const auto ref_m = direct(sym_m), ref_g = direct(sym_g), ref_mixed = direct(sym_mixed);
  ComplexVector gu(n);
  for (std::size_t i = 0; i < n; ++i) gu[i] = gfun(g.x(i)) * u[i];
  const double e_mult = std::max(detail::max_diff(apply_kn(g, sym_m, u), ref_m),
                                 detail::max_diff(apply_multiplier(g, mult, u), ref_m)) /
                        detail::max_abs(ref_m);
  const double e_times = std::max(detail::max_diff(apply_kn(g, sym_g, u), gu), detail::max_diff(ref_g, gu)) /
                         detail::max_abs(gu);
  const double e_mixed = detail::max_diff(apply_kn(g, sym_mixed, u), ref_mixed) / detail::max_abs(ref_mixed);
  const double kn_err = std::max({e_mult, e_times, e_mixed});

  double sum_u = 0.0, sum_c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_u += std::norm(u[i]);
    sum_c += std::norm(c[i]);
  }
  const double pars_direct = std::abs(std::sqrt(g.dx() * sum_u) - std::sqrt(2.0 * g.L() * sum_c)) /
                             std::sqrt(g.dx() * sum_u);
  const double pars_lib =
      std::abs(l2_norm(g, u) - coefficient_norm(g, dft_forward(g, u))) / l2_norm(g, u);
  const double parseval = std::max(pars_direct, pars_lib);

  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  const double ident = detail::max_diff(loss_operator(g, 0.0, 3.0, pair, u), u) / detail::max_abs(u);

  double sob = 0.0;
  const GridSpec gs(kPi, 64, 2.0);
  for (long j : {0L, 3L, -11L, 31L}) {
    ComplexVector w(gs.N());
    for (std::size_t i = 0; i < gs.N(); ++i) w[i] = std::exp(cplx(0.0, static_cast<double>(j) * gs.x(i)));
    const double b = std::sqrt(4.0 + static_cast<double>(j * j));
    const double expect = std::sqrt(2.0 * kPi) * std::pow(b, 1.5) * std::exp(0.2 * std::pow(b, 0.25));
    const double got = sobolev_norm(gs, w, {1.5, 0.7, 0.2, 4.0}, StructurePair::constant());
    sob = std::max(sob, std::abs(got - expect) / expect);
  }

  const auto inv_pair = StructurePair::bracket_powers(1.0, 1.0);
  auto inversion_error = [&](double k) {
    const GridSpec gk(4.0, 64, k);
    ComplexVector v(gk.N());
    for (std::size_t i = 0; i < gk.N(); ++i) {
      const double x = gk.x(i);
      v[i] = std::cos(kPi * x / 4.0) + 0.5 * std::sin(3.0 * kPi * x / 4.0) + cplx(0.0, 0.25) * std::cos(5.0 * kPi * x / 4.0);
    }
    const double eps = 0.05, sigma = 3.0;
    const auto w = loss_operator(gk, eps, sigma, inv_pair, v);
    const auto back = apply_kn(
        gk,
        [&](double x, double xi) { return cplx(std::exp(-eps * std::pow(inv_pair.phi(x) * bracket(xi, k), 1.0 / sigma))); },
        w);
    return detail::max_diff(back, v) / detail::max_abs(v);
  };
  const double inv4 = inversion_error(4.0), inv64 = inversion_error(64.0);

  r.metrics = {{"kn_reduction", kn_err}, {"parseval", parseval},        {"loss_identity", ident},
               {"sobolev_single_mode", sob}, {"inversion_k4", inv4}, {"inversion_k64", inv64}};
  r.pass = kn_err <= 1e-12 && parseval <= 1e-12 && ident <= 1e-13 && sob <= 1e-10 && inv64 < inv4;
  r.detail = "KN " + detail::fmt(kn_err) + ", Parseval " + detail::fmt(parseval) + ", identity " +
             detail::fmt(ident) + ", Sobolev " + detail::fmt(sob) + ", inversion k=4 " + detail::fmt(inv4) +
             " vs k=64 " + detail::fmt(inv64);
  return r;
}

/// Weighted energy of the admissible oscillating family with a fitted lambda.
inline CriterionResult criterion_energy(const AcceptanceOptions& opt) {
  CriterionResult r{7, "energy boundedness"};
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto fam = theorem_coefficient({});
  const auto u0 = TrigPolynomial::random(opt.seed);
  auto run = [&](std::size_t N, std::size_t M) {
    const GridSpec g(kPi, N);
    const auto fit = fit_lambda(fam, g, PhaseLattice::log_spaced(24 * N / 32, 1e-4, 1.0), prof);
    CauchyProblem pb;
    pb.family = fam;
    pb.f1 = u0.sample(g);
    pb.f2.assign(g.N(), 0.0);
    pb.periodic_data = true;
    const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, M), detail::linspace(0.0, 1.0, 41));
    const auto tr = energy_monitor(traj, pb, g, {}, prof, fit.lambda);
    return std::make_pair(fit, tr);
  };
  const auto [fit1, tr1] = run(32, 512);
  const auto [fit2, tr2] = run(64, 1024);
  const double v1 = tr1.verdict, v2 = tr2.verdict;
  const double ratio = std::max(v1, v2) / std::min(v1, v2);
  r.metrics = {{"profile", {{"delta", prof.delta}, {"delta_star", prof.delta_star}, {"gamma", prof.gamma}}},
               {"coarse", {{"N", 32}, {"M", 512}, {"lambda", fit1}, {"verdict", v1}}},
               {"fine", {{"N", 64}, {"M", 1024}, {"lambda", fit2}, {"verdict", v2}}},
               {"ratio", ratio}};
  r.pass = std::isfinite(v1) && std::isfinite(v2) && v1 > 0.0 && v2 > 0.0 && ratio <= 2.0;
  r.detail = "lambda " + detail::fmt(fit1.lambda) + " / " + detail::fmt(fit2.lambda) + ", verdict " + detail::fmt(v1) +
             " / " + detail::fmt(v2) + ", ratio " + detail::fmt(ratio);
  return r;
}

/// Closed forms for delta and gamma, the zone partition and the splitting time.
inline CriterionResult criterion_zones(const AcceptanceOptions& opt) {
  CriterionResult r{8, "zone and profile algebra"};
  std::mt19937_64 rng(opt.seed);
  auto uni = [&](double a, double b) { return a + (b - a) * unit_from_bits(rng()); };
  const std::size_t samples = 100000;

  double dual = 0.0;
  for (std::size_t s = 0; s < 2000; ++s) {
    const double p = uni(0.0, 0.3);
    const double q = uni(1.0 + p, std::min(1.5, 1.5 - 0.5 * p));
    const double upper = (q - p) / (q - 1.0);
    const double sigma = uni(3.0, upper);
    if (!(sigma < upper) || !(q > 1.0 + p)) continue;
    SingularityProfile prof;
    try {
      prof = make_profile(p, q, uni(0.0, 0.99), sigma, 1.0);
    } catch (const InvalidArgument&) {
      continue; // delta can leave (0, 1) near the window edges
    }
    dual = std::max({dual, std::abs(1.0 / sigma - (q - 1.0 + prof.delta) / (q - p)),
                     std::abs(prof.gamma - (1.0 - prof.delta - p) / (q - p)),
                     std::abs(prof.gamma - prof.gamma_from_delta())});
  }

  const auto prof = make_profile(0.1, 1.2, 0.3, 3.2, 1.0);
  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  std::size_t partition_fail = 0, monotone_fail = 0, skipped = 0;
  double split = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double N = uni(1.0, 10.0), k = uni(1.0, 4.0);
    const double x = std::copysign(std::pow(10.0, uni(-2.0, 3.0)), uni(-1.0, 1.0));
    const double xi = std::copysign(std::pow(10.0, uni(-2.0, 6.0)), uni(-1.0, 1.0));
    const double t = std::pow(10.0, uni(-8.0, 0.0));
    const double t2 = t * std::pow(10.0, uni(0.0, 2.0));
    const double h = 1.0 / (std::sqrt(1.0 + x * x) * std::sqrt(k * k + xi * xi));
    const double ts = time_split(x, xi, N, prof, pair, k);
    split = std::max(split, std::abs(std::pow(ts, prof.q - prof.p) / h - N) / N);
    const Zone z = classify_zone(t, x, xi, N, prof, pair, k), z2 = classify_zone(t2, x, xi, N, prof, pair, k);
    const double lhs = std::pow(t, prof.q - prof.p) / h;
    if (std::abs(x) + std::abs(xi) <= N) {
      partition_fail += z != Zone::Core || z2 != Zone::Core;
    } else if (std::abs(lhs - N) <= 1e-10 * N) {
      ++skipped;
    } else {
      partition_fail += z != (lhs <= N ? Zone::Interior : Zone::Exterior);
    }
    monotone_fail += z == Zone::Exterior && z2 != Zone::Exterior;
    monotone_fail += z2 == Zone::Interior && z != Zone::Interior;
  }
  r.metrics = {{"dual_formula_error", dual},   {"samples", samples},          {"partition_failures", partition_fail},
               {"monotonicity_failures", monotone_fail}, {"boundary_skipped", skipped}, {"time_split_error", split}};
  r.pass = dual <= 1e-12 && partition_fail == 0 && monotone_fail == 0 && split <= 1e-12;
  r.detail = "dual " + detail::fmt(dual) + ", partition/monotonicity failures " + std::to_string(partition_fail) +
             "/" + std::to_string(monotone_fail) + " of " + std::to_string(samples) + ", t_split " + detail::fmt(split);
  return r;
}

/// Fitted t-exponents of tau and d_t tau by zone.
inline CriterionResult criterion_symbol_reports(const AcceptanceOptions&) {
  CriterionResult r{9, "symbol estimate reports"};
  const auto t0 = detail::Clock::now();
  TheoremFamilyParams prm;
  prm.p = 0.1;
  prm.q = 1.2;
  prm.pair = StructurePair::bracket_powers(0.5, 1.0);
  const auto fam = theorem_coefficient(prm);
  const auto lat = PhaseLattice::standard(1e-4, 1.0, 100, 1e6, 16, 9, 17);
  const auto root = char_root(excise(fam), lat);
  SymbolClass cls;
  cls.m1 = 1;
  cls.m2 = 1;
  cls.zones = ZoneScheme::Excision;
  cls.zone_N = 2;
  cls.t_power_exterior = prm.p / 2;
  cls.max_order = 0;
  const auto rep = symbol_class_report(SymbolOracle::of(root), cls, fam.pair, fam.k, lat);
  cls.zone_N = 1;
  cls.m1 = 2;
  const auto rep_dt = symbol_class_report(SymbolOracle::time_derivative_of(root), cls, fam.pair, fam.k, lat);
  const double sec = detail::seconds_since(t0);
  const auto* ext = rep.find("exterior", 0, 0);
  const auto* in = rep.find("interior", 0, 0);
  const auto* dt_in = rep_dt.find("interior", 0, 0);
  r.metrics = {{"tau", rep}, {"dt_tau", rep_dt}, {"seconds", sec}};
  r.pass = ext && in && dt_in && std::abs(ext->t_exponent - prm.p / 2) <= 0.1 && std::abs(in->t_exponent) <= 0.1 &&
           dt_in->machine_zero && sec <= 120.0;
  r.detail = "tau exponents exterior " + (ext ? detail::fmt(ext->t_exponent) : "?") + " (p/2 = " +
             detail::fmt(prm.p / 2) + "), interior " + (in ? detail::fmt(in->t_exponent) : "?") +
             ", d_t tau interior machine zero " + (dt_in && dt_in->machine_zero ? "yes" : "no") + ", " +
             detail::fmt(sec) + " s";
  return r;
}

/// Residual of the first-order system along integrated trajectories.
inline CriterionResult criterion_system_residual(const AcceptanceOptions& opt) {
  CriterionResult r{10, "first-order system residual"};
  const auto u0 = TrigPolynomial::random(opt.seed);

  const GridSpec g(kPi, 32);
  CauchyProblem wave;
  wave.family = wave_family(1.0, FrequencyFactor::Bracket);
  wave.f1 = u0.sample(g);
  wave.f2 = u0.sample(g, 1);
  wave.periodic_data = true;
  RealVector res;
  for (std::size_t M : {64u, 128u, 256u}) {
    const auto mesh = TimeMesh::graded(0.0, 1.0, M, 1.0);
    RealVector out(mesh.nodes.begin() + static_cast<long>(M / 2), mesh.nodes.end());
    res.push_back(system_residual(integrate(wave, g, mesh, out), wave, g));
  }
  const double ratio1 = res[0] / res[1], ratio2 = res[1] / res[2];

  // no-loss on M = 4096: every mesh node from index 64 (t = 2^-12) on is a
  // snapshot. Below that the three-point difference cannot resolve
  // d_t^3 v ~ t^-5/2 on the t^2-graded mesh; that window is reported only.
  const GridSpec g3(kPi, 32);
  auto pb = closed_form(Example::NoLoss, 0, u0).problem(g3, 0.0);
  const auto mesh = TimeMesh::for_problem(pb, 4096);
  const std::size_t first = 64;
  RealVector out(mesh.nodes.begin() + static_cast<long>(first), mesh.nodes.end());
  const auto traj = integrate(pb, g3, mesh, out);
  const auto rep = system_residual_report(traj, pb, g3);
  const double worst = rep.max_residual;
  RealVector early(mesh.nodes.begin() + 8, mesh.nodes.begin() + 16);
  const double start_window = system_residual(integrate(pb, g3, mesh, early), pb, g3);
  r.metrics = {{"wave_residuals", res},
               {"halving_ratios", {ratio1, ratio2}},
               {"no_loss_snapshots", out.size()},
               {"no_loss_t_first", out.front()},
               {"no_loss_max", worst},
               {"no_loss_worst_time", rep.worst_time},
               {"no_loss_start_window", start_window}};
  r.pass = ratio1 >= 3.0 && ratio2 >= 3.0 && worst < 1e-2;
  r.detail = "halving ratios " + detail::fmt(ratio1) + ", " + detail::fmt(ratio2) + "; no-loss residual " +
             detail::fmt(worst) + " at M = 4096 over t >= " +
             detail::fmt(out.front()) + " (" + detail::fmt(start_window) + " on nodes 8..15)";
  return r;
}

using CriterionFn = std::function<CriterionResult(const AcceptanceOptions&)>;

inline const std::vector<CriterionFn>& acceptance_criteria() {
  static const std::vector<CriterionFn> all{criterion_counterexample_fidelity, criterion_loss_slopes,
                                            criterion_nonuniqueness,           criterion_cone,
                                            criterion_excision,                criterion_quantizer,
                                            criterion_energy,                  criterion_zones,
                                            criterion_symbol_reports,          criterion_system_residual};
  return all;
}

/// Runs one criterion; exceptions become a failure naming the criterion.
inline CriterionResult run_criterion(std::size_t id, const AcceptanceOptions& opt = {}) {
  const auto& all = acceptance_criteria();
  if (id < 1 || id > all.size()) throw InvalidArgument("run_criterion: no criterion " + std::to_string(id));
  const auto t0 = detail::Clock::now();
  CriterionResult r;
  try {
    r = all[id - 1](opt);
  } catch (const std::exception& e) {
    r.id = static_cast<int>(id);
    r.name = "criterion " + std::to_string(id);
    r.pass = false;
    r.detail = std::string("aborted: ") + e.what();
  }
  r.seconds = detail::seconds_since(t0);
  return r;
}

inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt = {},
                                                   const std::function<void(const CriterionResult&)>& on_result = {}) {
  std::vector<CriterionResult> out;
  for (std::size_t id = 1; id <= acceptance_criteria().size(); ++id) {
    out.push_back(run_criterion(id, opt));
    if (on_result) on_result(out.back());
  }
  return out;
}

inline std::string format_line(const CriterionResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS" : "FAIL") << "  [" << r.id << "] " << r.name << ": " << r.detail << " ("
     << detail::fmt(r.seconds) << " s)";
  return os.str();
}

} // namespace singwave
