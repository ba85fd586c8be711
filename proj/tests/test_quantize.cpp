#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <singwave/quantize.hpp>

using namespace singwave;

namespace {

/// Direct O(N^2) evaluation of c_j = (1/N) sum_i u_i e^{-i x_i xi_j}.
ComplexVector naive_forward(const GridSpec& g, const ComplexVector& u) {
  ComplexVector c(g.N());
  for (std::size_t m = 0; m < g.N(); ++m) {
    cplx acc = 0;
    for (std::size_t i = 0; i < g.N(); ++i) acc += u[i] * std::polar(1.0, -g.x(i) * g.xi(m));
    c[m] = acc / static_cast<double>(g.N());
  }
  return c;
}

/// Direct evaluation of sum_j a(x_i, xi_j) c_j e^{i x_i xi_j}.
ComplexVector naive_kn(const GridSpec& g, const SymbolFn& a, const ComplexVector& u) {
  const auto c = naive_forward(g, u);
  ComplexVector out(g.N());
  for (std::size_t i = 0; i < g.N(); ++i) {
    cplx acc = 0;
    for (std::size_t m = 0; m < g.N(); ++m) acc += a(g.x(i), g.xi(m)) * c[m] * std::polar(1.0, g.x(i) * g.xi(m));
    out[i] = acc;
  }
  return out;
}

ComplexVector random_field(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ComplexVector u(n);
  for (auto& v : u) v = cplx(unit_from_bits(rng()) - 0.5, unit_from_bits(rng()) - 0.5);
  return u;
}

ComplexVector mode(const GridSpec& g, long j) {
  ComplexVector u(g.N());
  const double xi = kPi / g.L() * static_cast<double>(j);
  for (std::size_t i = 0; i < g.N(); ++i) u[i] = std::polar(1.0, xi * g.x(i));
  return u;
}

/// Smooth band-limited field concentrated near the origin.
ComplexVector band_limited(const GridSpec& g) {
  ComplexVector u(g.N());
  for (std::size_t i = 0; i < g.N(); ++i) {
    const double x = g.x(i);
    u[i] = std::cos(x) + 0.5 * std::sin(3 * x) + 0.25 * cplx(std::cos(5 * x), std::sin(2 * x));
  }
  return u;
}

double max_diff(const ComplexVector& a, const ComplexVector& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const ComplexVector& a) {
  double m = 0;
  for (const auto& v : a) m = std::max(m, std::abs(v));
  return m;
}

} // namespace

TEST(Grid, LayoutAndValidation) {
  const GridSpec g(kPi, 16, 1.0);
  EXPECT_DOUBLE_EQ(g.x(0), -kPi);
  EXPECT_NEAR(g.dx(), 2 * kPi / 16, 1e-15);
  EXPECT_EQ(g.index(g.nyquist_slot()), -8);
  EXPECT_DOUBLE_EQ(g.xi(g.slot(3)), 3.0);
  EXPECT_DOUBLE_EQ(g.xi(g.slot(-3)), -3.0);
  EXPECT_THROW(GridSpec(1.0, 12), InvalidArgument);
  EXPECT_THROW(GridSpec(1.0, 4), InvalidArgument);
  EXPECT_THROW(GridSpec(-1.0, 16), InvalidArgument);
  EXPECT_THROW(GridSpec(1.0, 16, 0.5), InvalidArgument);
}

TEST(Dft, MatchesDirectSum) {
  const GridSpec g(3.0, 64, 1.0);
  const auto u = random_field(64, 1);
  EXPECT_LT(max_diff(dft_forward(g, u), naive_forward(g, u)), 1e-14);
}

TEST(Dft, RoundTrip) {
  const GridSpec g(5.0, 256, 1.0);
  const auto u = random_field(256, 2);
  EXPECT_LT(max_diff(dft_inverse(g, dft_forward(g, u)), u), 1e-13);
}

TEST(Dft, ConstantAndModes) {
  const GridSpec g(kPi, 32, 1.0);
  const auto c = dft_forward(g, ComplexVector(32, 1.0));
  EXPECT_NEAR(std::abs(c[0] - 1.0), 0.0, 1e-15);
  for (std::size_t m = 1; m < 32; ++m) EXPECT_LT(std::abs(c[m]), 1e-15);
  for (long j : {-16L, -5L, 1L, 7L, 15L}) {
    const auto cj = dft_forward(g, mode(g, j));
    for (std::size_t m = 0; m < 32; ++m) {
      EXPECT_NEAR(std::abs(cj[m] - (m == g.slot(j) ? 1.0 : 0.0)), 0.0, 1e-13) << j << " " << m;
    }
  }
}

TEST(Dft, Parseval) {
  const GridSpec g(2.0, 128, 1.0);
  const auto u = random_field(128, 3);
  const double a = l2_norm(g, u), b = coefficient_norm(g, dft_forward(g, u));
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(Dft, SizeMismatch) {
  const GridSpec g(2.0, 16, 1.0);
  EXPECT_THROW(dft_forward(g, ComplexVector(8)), InvalidArgument);
  EXPECT_THROW(dft_inverse(g, ComplexVector(32)), InvalidArgument);
}

TEST(SpectralField, CacheMatchesTransform) {
  const GridSpec g(2.0, 64, 1.0);
  const SpectralField f(g, random_field(64, 4));
  ASSERT_TRUE(f.has_spectrum());
  const auto c = dft_forward(g, f.values());
  EXPECT_LT(max_diff(c, f.spectrum()), 1e-12 * max_abs(c));
}

TEST(Multiplier, IdentityEigenmodeAndOverflow) {
  const GridSpec g(kPi, 64, 2.0);
  const auto u = random_field(64, 5);
  EXPECT_LT(max_diff(apply_multiplier(g, [](double) { return cplx(1.0); }, u), u), 1e-13);
  const auto e = mode(g, 6);
  const auto w = apply_multiplier(g, [](double xi) { return cplx(4.0 + xi * xi); }, e);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(std::abs(w[i] - 40.0 * e[i]), 0.0, 40.0 * 1e-12);
  EXPECT_THROW(apply_multiplier(g, [](double xi) { return cplx(std::exp(1000.0 + xi)); }, u), NumericalAbort);
}

TEST(Multiplier, DerivativeMatchesDifferences) {
  const double L = 20.0;
  for (std::size_t n : {256u, 512u}) {
    const GridSpec g(L, n, 1.0);
    ComplexVector u(n), exact(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = g.x(i);
      u[i] = std::exp(-x * x);
      exact[i] = -2 * x * std::exp(-x * x);
    }
    const auto d = apply_multiplier(g, [](double xi) { return cplx(0.0, xi); }, u, Parity::Odd);
    EXPECT_LT(max_diff(d, exact), 1e-12);
    ComplexVector fd(n);
    for (std::size_t i = 0; i < n; ++i) fd[i] = (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2 * g.dx());
    EXPECT_LT(max_diff(d, fd), 2.0 * g.dx() * g.dx());
  }
}

TEST(Kn, AgreesWithDirectSum) {
  const GridSpec g(4.0, 32, 1.5);
  const auto u = random_field(32, 6);
  SymbolFn a = [](double x, double xi) { return cplx(std::cos(x) * xi, bracket(x) / (1 + xi * xi)); };
  EXPECT_LT(max_diff(apply_kn(g, a, u), naive_kn(g, a, u)), 1e-12);
}

TEST(Kn, ReducesToMultiplierAndMultiplication) {
  const GridSpec g(6.0, 128, 1.0);
  const auto u = random_field(128, 7);
  MultiplierFn m = [](double xi) { return cplx(std::sqrt(1 + xi * xi), 0.3 * xi); };
  auto gfun = [](double x) { return 1.0 + 0.5 * std::sin(x) + x * x / 100.0; };
  const auto ref_m = apply_multiplier(g, m, u);
  EXPECT_LT(max_diff(apply_kn(g, [&](double, double xi) { return m(xi); }, u), ref_m), 1e-12 * max_abs(ref_m));
  ComplexVector gu(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) gu[i] = gfun(g.x(i)) * u[i];
  EXPECT_LT(max_diff(apply_kn(g, [&](double x, double) { return cplx(gfun(x)); }, u), gu), 1e-12);
  ComplexVector gm(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) gm[i] = gfun(g.x(i)) * ref_m[i];
  EXPECT_LT(max_diff(apply_kn(g, [&](double x, double xi) { return gfun(x) * m(xi); }, u), gm),
            1e-12 * max_abs(gm));
}

TEST(Kn, LinearityAndUnitSymbol) {
  const GridSpec g(3.0, 64, 1.0);
  const auto u = random_field(64, 8), v = random_field(64, 9);
  SymbolFn a = [](double x, double xi) { return cplx(bracket(x) * xi, 1.0); };
  const cplx alpha(0.3, -1.2);
  ComplexVector w(64);
  for (std::size_t i = 0; i < 64; ++i) w[i] = alpha * u[i] + v[i];
  const auto lhs = apply_kn(g, a, w);
  const auto au = apply_kn(g, a, u), av = apply_kn(g, a, v);
  ComplexVector rhs(64);
  for (std::size_t i = 0; i < 64; ++i) rhs[i] = alpha * au[i] + av[i];
  EXPECT_LT(max_diff(lhs, rhs), 1e-12 * max_abs(rhs));
  EXPECT_LT(max_diff(apply_kn(g, [](double, double) { return cplx(1.0); }, u), u), 1e-13);
}

TEST(Kn, MultipliersCompose) {
  const GridSpec g(3.0, 64, 1.0);
  const auto u = random_field(64, 10);
  MultiplierFn m1 = [](double xi) { return cplx(1 + xi * xi); };
  MultiplierFn m2 = [](double xi) { return cplx(0.0, xi); };
  const auto two = apply_multiplier(g, m2, apply_multiplier(g, m1, u));
  const auto one = apply_multiplier(g, [&](double xi) { return m1(xi) * m2(xi); }, u);
  EXPECT_LT(max_diff(one, two), 1e-12 * max_abs(one));
}

TEST(Kn, ThreadCountDoesNotChangeResult) {
  const GridSpec g(3.0, 256, 1.0);
  const auto u = random_field(256, 11);
  SymbolFn a = [](double x, double xi) { return cplx(std::exp(-x * x) * xi, std::cos(xi)); };
  set_threads(1);
  const auto one = apply_kn(g, a, u);
  set_threads(4);
  const auto four = apply_kn(g, a, u);
  set_threads(1);
  EXPECT_EQ(max_diff(one, four), 0.0);
}

TEST(LossOperator, ZeroIsIdentity) {
  const GridSpec g(kPi, 64, 1.0);
  const auto u = random_field(64, 12);
  EXPECT_LT(max_diff(loss_operator(g, 0.0, 3.0, StructurePair::bracket_powers(0.5, 1.0), u), u), 1e-13);
}

TEST(LossOperator, ConstantPairIsMultiplier) {
  const GridSpec g(kPi, 64, 2.0);
  const auto u = random_field(64, 13);
  const double eps = 0.3, sigma = 3.0;
  const auto ref = apply_multiplier(
      g, [&](double xi) { return cplx(std::exp(eps * std::pow(bracket(xi, 2.0), 1 / sigma))); }, u);
  EXPECT_LT(max_diff(loss_operator(g, eps, sigma, StructurePair::constant(), u), ref), 1e-12 * max_abs(ref));
}

TEST(LossOperator, EpsilonDerivative) {
  const GridSpec g(8.0, 64, 1.0);
  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  const auto u = band_limited(g);
  const double sigma = 3.0;
  const auto target = apply_kn(g, [&](double x, double xi) { return cplx(std::pow(pair.phi(x) * bracket(xi, 1.0), 1 / sigma)); }, u);
  auto quotient = [&](double eps) {
    const auto w = loss_operator(g, eps, sigma, pair, u);
    ComplexVector q(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) q[i] = (w[i] - u[i]) / eps;
    return q;
  };
  const auto q4 = quotient(1e-4), q5 = quotient(1e-5);
  ComplexVector rich(q4.size());
  for (std::size_t i = 0; i < q4.size(); ++i) rich[i] = (10.0 * q5[i] - q4[i]) / 9.0;
  const double e4 = max_diff(q4, target), e5 = max_diff(q5, target), er = max_diff(rich, target);
  EXPECT_LT(e5, e4);
  EXPECT_LT(er, 1e-6 * max_abs(target));
}

TEST(LossOperator, OverflowGuard) {
  const GridSpec g(kPi, 1024, 1.0);
  EXPECT_THROW(loss_operator(g, 200.0, 3.0, StructurePair::constant(), ComplexVector(1024, 1.0)), NumericalAbort);
  EXPECT_THROW(loss_operator(g, -1.0, 3.0, StructurePair::constant(), ComplexVector(1024, 1.0)), InvalidArgument);
}

TEST(LossOperator, LargeKInvertibility) {
  const auto pair = StructurePair::bracket_powers(1.0, 1.0);
  auto error_at = [&](double k) {
    const GridSpec g(4.0, 64, k);
    const auto u = band_limited(g);
    const double eps = 0.05, sigma = 3.0;
    const auto w = loss_operator(g, eps, sigma, pair, u);
    const auto back = apply_kn(
        g, [&](double x, double xi) { return cplx(std::exp(-eps * std::pow(pair.phi(x) * bracket(xi, k), 1 / sigma))); }, w);
    return max_diff(back, u) / max_abs(u);
  };
  EXPECT_LT(error_at(64.0), error_at(4.0));
}

TEST(Sobolev, ReducesToL2) {
  const GridSpec g(2.0, 64, 1.0);
  const auto u = random_field(64, 14);
  EXPECT_NEAR(sobolev_norm(g, u, {}, StructurePair::bracket_powers(0.5, 1.0)), l2_norm(g, u), 1e-14);
}

TEST(Sobolev, SingleModeClosedForm) {
  const GridSpec g(kPi, 64, 2.0);
  for (long j : {0L, 3L, -11L}) {
    const auto u = mode(g, j);
    const SobolevIndex idx{1.5, 0.7, 0.2, 4.0};
    const double b = bracket(static_cast<double>(j), 2.0);
    const double expect = std::sqrt(2 * kPi) * std::pow(b, 1.5) * std::exp(0.2 * std::pow(b, 0.25));
    EXPECT_NEAR(sobolev_norm(g, u, idx, StructurePair::constant()), expect, 1e-10 * expect);
  }
}

TEST(Sobolev, ZeroDecayIndexIgnoresPhi) {
  const GridSpec g(5.0, 64, 1.0);
  const auto u = random_field(64, 15);
  const SobolevIndex idx{2.0, 0.0, 0.0, 3.0};
  EXPECT_DOUBLE_EQ(sobolev_norm(g, u, idx, StructurePair::bracket_powers(1.0, 1.0)),
                   sobolev_norm(g, u, idx, StructurePair::constant()));
}

TEST(Sobolev, MonotoneInIndexAndEpsilon) {
  const GridSpec g(5.0, 64, 1.0);
  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const auto u = random_field(64, seed);
    double prev = 0;
    for (double s1 : {0.0, 0.5, 1.0, 2.0}) {
      const double v = sobolev_norm(g, u, {s1, 0.0, 0.1, 3.0}, pair);
      EXPECT_GE(v, prev);
      prev = v;
    }
    prev = 0;
    for (double eps : {0.0, 0.05, 0.1, 0.3}) {
      const double v = sobolev_norm(g, u, {1.0, 0.5, eps, 3.0}, pair);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Csv, HeadersAndPrecision) {
  const GridSpec g(1.0, 8, 1.0);
  ComplexVector u(8, cplx(1.0 / 3.0, -2.0));
  std::ostringstream f, s;
  write_field_csv(f, g, u);
  write_spectrum_csv(s, g, u);
  EXPECT_EQ(f.str().substr(0, f.str().find('\n')), "x,re_u,im_u");
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "xi,abs_u_hat");
  EXPECT_NE(f.str().find("0.33333333333333331"), std::string::npos);
}

TEST(Sobolev, SpectralEntryMatchesFieldEntry) {
  const GridSpec g(5.0, 64, 1.5);
  const auto u = random_field(64, 31);
  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  const SobolevIndex idx{1.0, 0.5, 0.3, 3.0};
  const double a = sobolev_norm(g, u, idx, pair);
  EXPECT_NEAR(sobolev_norm_spectral(g, dft_forward(g, u), idx, pair), a, 1e-12 * a);
  EXPECT_LT(max_diff(apply_kn_spectral(g, SymbolMatrix(g, [](double x, double xi) { return cplx(x, xi); }),
                                       dft_forward(g, u)),
                     apply_kn(g, [](double x, double xi) { return cplx(x, xi); }, u)),
            1e-12);
}

TEST(Sobolev, CleanSpectrumAvoidsRoundingBlowUp) {
  // A single mode with a loss weight near e^60 at the top of the grid: the
  // rounding noise of a sampled field is amplified, the exact spectrum is not.
  const GridSpec g(kPi, 64, 1.0);
  const auto u = mode(g, 2);
  ComplexVector c(64, 0.0);
  c[g.slot(2)] = 1.0;
  const SobolevIndex idx{0.0, 0.0, 19.0, 3.0};
  const double expect = std::sqrt(2 * kPi) * std::exp(19.0 * std::pow(bracket(2.0, 1.0), 1.0 / 3.0));
  EXPECT_NEAR(sobolev_norm_spectral(g, c, idx, StructurePair::constant()), expect, 1e-12 * expect);
  EXPECT_GT(sobolev_norm(g, u, idx, StructurePair::constant()), 0.0);
}
