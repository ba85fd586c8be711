#include <gtest/gtest.h>

#include <cmath>

#include <singwave/analysis.hpp>

using namespace singwave;

namespace {

double rel_err(const GridSpec& g, const ComplexVector& a, const ComplexVector& b) {
  ComplexVector d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return l2_norm(g, d) / l2_norm(g, b);
}

ComplexVector gaussian(const GridSpec& g, double width, double center = 0.0) {
  ComplexVector u(g.N());
  for (std::size_t i = 0; i < g.N(); ++i) {
    const double y = (g.x(i) - center) / width;
    u[i] = std::exp(-0.5 * y * y);
  }
  return u;
}

RealVector linspace(double a, double b, std::size_t n) {
  RealVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

} // namespace

TEST(FallingFactorial, SmallCases) {
  EXPECT_EQ(falling_factorial(3.7, 0), 1.0);
  EXPECT_DOUBLE_EQ(falling_factorial(-0.5, 2), 0.75);
  EXPECT_DOUBLE_EQ(falling_factorial(2.0, 2), 2.0);
  EXPECT_DOUBLE_EQ(falling_factorial(2.0, 3), 0.0);
  EXPECT_THROW(falling_factorial(1.0, -1), InvalidArgument);
}

TEST(CounterexampleCoefficients, KnownValues) {
  EXPECT_EQ(counterexample_coefficients(0), RealVector({1.0}));
  const auto c1 = counterexample_coefficients(1);
  ASSERT_EQ(c1.size(), 2u);
  EXPECT_DOUBLE_EQ(c1[1], 4.0);
  const auto c2 = counterexample_coefficients(2);
  ASSERT_EQ(c2.size(), 3u);
  EXPECT_DOUBLE_EQ(c2[0], 1.0);
  EXPECT_DOUBLE_EQ(c2[1], 8.0);
  EXPECT_NEAR(c2[2], 16.0 / 3.0, 1e-15);
  const auto c3 = counterexample_coefficients(3);
  EXPECT_DOUBLE_EQ(c3[1], 12.0);
  EXPECT_NEAR(c3[2], 16.0, 1e-14);
  EXPECT_NEAR(c3[3], 64.0 / 15.0, 1e-14);
  EXPECT_THROW(counterexample_coefficients(-1), InvalidArgument);
}

TEST(TrigPolynomial, RandomHasEightDistinctLowModes) {
  const auto u0 = TrigPolynomial::random(42);
  ASSERT_EQ(u0.modes.size(), 8u);
  for (std::size_t i = 0; i < u0.modes.size(); ++i) {
    EXPECT_NE(u0.modes[i].first, 0);
    EXPECT_LE(std::labs(u0.modes[i].first), 4);
    if (i > 0) EXPECT_LT(u0.modes[i - 1].first, u0.modes[i].first);
  }
  const auto again = TrigPolynomial::random(42);
  EXPECT_EQ(again.modes, u0.modes);
}

TEST(TrigPolynomial, DerivativesMatchDifferences) {
  const auto u0 = TrigPolynomial::random(7, 2.0);
  const double x = 0.37, h = 1e-5;
  for (int order : {0, 1, 2}) {
    const cplx fd = (u0.value(x + h, order) - u0.value(x - h, order)) / (2 * h);
    EXPECT_NEAR(std::abs(fd - u0.value(x, order + 1)), 0.0, 1e-7 * std::abs(u0.value(x, order + 1)) + 1e-9);
  }
}

TEST(ClosedForm, FiniteLossDataLine) {
  const auto u0 = TrigPolynomial::random(3);
  for (int m = 0; m <= 3; ++m) {
    const auto cf = closed_form(Example::Finite, m, u0);
    for (double x : {-2.0, 0.1, 1.3}) {
      EXPECT_NEAR(std::abs(cf.value(0.0, x) - u0.value(x)), 0.0, 1e-14);
      EXPECT_NEAR(std::abs(cf.dt(0.0, x) - (4.0 * m + 1.0) * u0.value(x, 1)), 0.0, 1e-13);
    }
  }
}

TEST(ClosedForm, FiniteLossSecondOrderExpansion) {
  const auto u0 = TrigPolynomial::random(4);
  const auto cf = closed_form(Example::Finite, 2, u0);
  for (double t : {0.2, 1.0}) {
    for (double x : {-1.0, 0.5}) {
      const cplx expect = u0.value(x + t) + 8.0 * t * u0.value(x + t, 1) + 16.0 / 3.0 * t * t * u0.value(x + t, 2);
      EXPECT_NEAR(std::abs(cf.value(t, x) - expect), 0.0, 1e-12);
    }
  }
}

TEST(ClosedForm, OtherExamples) {
  const auto u0 = TrigPolynomial::random(5);
  const double t = 0.6, x = 0.8;
  EXPECT_NEAR(std::abs(closed_form(Example::NotNecessary, 0, u0).value(t, x) - t * u0.value(x + t)), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(closed_form(Example::Nonunique, 0, u0).value(t, x) - t * t * u0.value(x + t)), 0.0, 1e-14);
  const double I = 2 * t + 2 * (std::sin(std::sqrt(t)) - std::sqrt(t) * std::cos(std::sqrt(t)));
  EXPECT_NEAR(std::abs(closed_form(Example::NoLoss, 0, u0).value(t, x) - u0.value(x + I)), 0.0, 1e-13);
  const auto nonunique = closed_form(Example::Nonunique, 0, u0);
  EXPECT_EQ(nonunique.value(0.0, x), cplx(0.0));
  EXPECT_EQ(nonunique.dt(0.0, x), cplx(0.0));
  EXPECT_EQ(closed_form(Example::NotNecessary, 0, u0).value(0.0, x), cplx(0.0));
  EXPECT_NEAR(std::abs(closed_form(Example::NotNecessary, 0, u0).dt(0.0, x) - u0.value(x)), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(closed_form(Example::NoLoss, 0, u0).dt(0.0, x) - 2.0 * u0.value(x, 1)), 0.0, 1e-13);
}

TEST(ClosedForm, TimeDerivativesMatchDifferences) {
  const auto u0 = TrigPolynomial::random(6);
  const double h = 1e-6;
  for (auto id : {Example::Finite, Example::NotNecessary, Example::NoLoss, Example::Nonunique}) {
    const auto cf = closed_form(id, 2, u0);
    for (double t : {0.1, 0.7}) {
      const cplx fd = (cf.value(t + h, 0.4) - cf.value(t - h, 0.4)) / (2 * h);
      EXPECT_NEAR(std::abs(fd - cf.dt(t, 0.4)), 0.0, 1e-7 * std::max(1.0, std::abs(fd))) << to_string(id);
    }
  }
}

TEST(ClosedForm, ShiftIntegralProperties) {
  EXPECT_EQ(no_loss_shift(0.0), 0.0);
  const double h = 1e-6;
  for (double t : {0.01, 0.3, 1.0, 4.0}) {
    const double d = (no_loss_shift(t + h) - no_loss_shift(t - h)) / (2 * h);
    EXPECT_NEAR(d, 2.0 + std::sin(std::sqrt(t)), 1e-8);
    EXPECT_LE(no_loss_shift(t), 3.0 * t);
  }
}

TEST(ClosedForm, ExampleIdentifiers) {
  EXPECT_EQ(example_from_id("no-loss"), Example::NoLoss);
  EXPECT_EQ(to_string(Example::Nonunique), "nonunique");
  EXPECT_THROW(example_from_id("7.5"), InvalidArgument);
}

TEST(ResidualCheck, AllCounterexamplesSolveTheirEquations) {
  const GridSpec g(kPi, 512);
  const auto u0 = TrigPolynomial::random(42);
  const RealVector ts{0.05, 0.3, 0.7, 1.0};
  for (int m = 0; m <= 3; ++m) EXPECT_LT(residual_check(Example::Finite, m, u0, g, ts), 1e-6) << "m = " << m;
  EXPECT_LT(residual_check(Example::NotNecessary, 0, u0, g, ts), 1e-6);
  EXPECT_LT(residual_check(Example::NoLoss, 0, u0, g, ts), 1e-6);
  EXPECT_LT(residual_check(Example::Nonunique, 0, u0, g, ts), 1e-6);
}

TEST(ResidualCheck, DetectsWrongSolution) {
  // The loss-not-necessary closed form does not solve the nonunique operator.
  const GridSpec g(kPi, 64);
  const auto u0 = TrigPolynomial::random(42);
  const ClosedForm wrong(Example::NotNecessary, 0, u0);
  CauchyProblem pb;
  pb.family = counterexample_family(Example::Nonunique);
  const double t = 0.5, h = 1e-3;
  const auto u = wrong.sample(g, t);
  ComplexVector utt(g.N());
  const auto up = wrong.sample(g, t + h), um = wrong.sample(g, t - h);
  for (std::size_t i = 0; i < g.N(); ++i) utt[i] = (up[i] - 2.0 * u[i] + um[i]) / (h * h);
  const auto [du, dv] = assemble_rhs(t, u, wrong.sample_dt(g, t), pb, g);
  double r = 0.0;
  for (std::size_t i = 0; i < g.N(); ++i) r = std::max(r, std::abs(utt[i] - dv[i]));
  EXPECT_GT(r, 0.1);
}

TEST(LossSlope, TranslationAndDerivative) {
  const GridSpec g(kPi, 512);
  const auto u0 = TrigPolynomial::broadband(1, kPi, 200);
  const auto band = FrequencyBand::standard(g.N());
  EXPECT_EQ(band.lo, 32);
  EXPECT_EQ(band.hi, 85);
  EXPECT_NEAR(loss_slope(g, u0.sample(g, 0, 0.7), u0.sample(g), band).slope, 0.0, 0.05);
  EXPECT_NEAR(loss_slope(g, u0.sample(g, 1), u0.sample(g), band).slope, 1.0, 0.05);
  EXPECT_THROW(loss_slope(g, u0.sample(g), u0.sample(g), {300, 400}), InvalidArgument);
}

TEST(LossSlope, CounterexampleClosedForms) {
  const GridSpec g(kPi, 512);
  const auto u0 = TrigPolynomial::broadband(2, kPi, 200);
  const auto band = FrequencyBand::standard(g.N());
  const auto ref = u0.sample(g);
  for (int m = 1; m <= 3; ++m) {
    const auto ut = closed_form(Example::Finite, m, u0).sample(g, 1.0);
    EXPECT_NEAR(loss_slope(g, ut, ref, band).slope, m, 0.2) << "m = " << m;
  }
  EXPECT_NEAR(loss_slope(g, closed_form(Example::NotNecessary, 0, u0).sample(g, 1.0), ref, band).slope, 0.0, 0.05);
  EXPECT_NEAR(loss_slope(g, closed_form(Example::NoLoss, 0, u0).sample(g, 1.0), ref, band).slope, 0.0, 0.05);
}

TEST(PropagationSpeed, ClosedForms) {
  const GridSpec g(kPi, 32);
  const auto ts = linspace(1e-3, 4.0, 4000);
  EXPECT_NEAR(propagation_speed(wave_family(), g, ts), 1.0, 1e-15);
  EXPECT_NEAR(propagation_speed(counterexample_family(Example::NoLoss), g, ts), 3.0, 1e-5);
  EXPECT_NEAR(propagation_speed(counterexample_family(Example::NoLoss), g, linspace(1e-3, 1.0, 100)),
              2.0 + std::sin(1.0), 1e-12);
  const auto pair = StructurePair::bracket_powers(0.5, 1.0);
  auto fam = make_separable_family(
      "4 omega^2", [pair](double, double x) { return 4.0 * pair.omega(x) * pair.omega(x); },
      [](double, double) { return 0.0; }, [](double, double) { return 0.0; }, FrequencyFactor::Square, 1.0);
  fam.pair = pair;
  EXPECT_NEAR(propagation_speed(fam, g, {0.5}), 2.0, 1e-14);
}

TEST(Cone, ZeroSolutionPasses) {
  const GridSpec g(kPi, 32);
  Trajectory traj;
  for (double t : {0.0, 0.5}) traj.snapshots.push_back({t, ComplexVector(g.N()), ComplexVector(g.N())});
  const auto rep = cone_check(traj, g, ConeSpec::for_family(wave_family(), 1.0));
  EXPECT_TRUE(rep.passed());
}

TEST(Cone, WaveBumpSpreadsAtUnitSpeed) {
  const GridSpec g(20.0, 512);
  CauchyProblem pb;
  pb.family = wave_family();
  pb.f1 = gaussian(g, 0.4);
  pb.f2.assign(g.N(), 0.0);
  pb.T = 4.0;
  const auto traj = integrate(pb, g, TimeMesh::graded(0.0, 4.0, 800, 1.0), linspace(0.0, 4.0, 9));
  const auto rep = cone_check(traj, g, ConeSpec::for_family(pb.family, 1.0));
  EXPECT_TRUE(rep.passed());
  EXPECT_TRUE(rep.valid);
  // The measured radius really grows at the unit speed.
  EXPECT_NEAR(rep.entries.back().measured - rep.initial_radius, 4.0, 0.2);
  // A cone with half the speed is violated.
  EXPECT_FALSE(cone_check(traj, g, ConeSpec::for_family(pb.family, 0.5)).passed());
}

TEST(Cone, NoLossExampleStaysInsideSpeedThree) {
  const GridSpec g(20.0, 512);
  CauchyProblem pb;
  pb.family = counterexample_family(Example::NoLoss);
  pb.f1 = gaussian(g, 0.4);
  pb.f2 = spectral_derivative(g, pb.f1, 1);
  for (auto& c : pb.f2) c *= 2.0;
  pb.T = 4.0;
  const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, 1024), linspace(0.0, 4.0, 17));
  const double c_star = propagation_speed(pb.family, g, linspace(1e-3, 4.0, 4000));
  const auto rep = cone_check(traj, g, ConeSpec::for_family(pb.family, c_star));
  EXPECT_TRUE(rep.passed());
  for (const auto& e : rep.entries) EXPECT_LE(e.measured - rep.initial_radius, 3.0 * e.t + 3.0 * g.dx());
}

TEST(Cone, WraparoundIsInvalid) {
  const GridSpec g(4.0, 128);
  CauchyProblem pb;
  pb.family = wave_family();
  pb.f1 = gaussian(g, 0.2);
  pb.f2.assign(g.N(), 0.0);
  pb.T = 3.0;
  const auto traj = integrate(pb, g, TimeMesh::graded(0.0, 3.0, 600, 1.0), {3.0});
  const auto rep = cone_check(traj, g, ConeSpec::for_family(pb.family, 1.0));
  EXPECT_FALSE(rep.valid);
  EXPECT_FALSE(rep.passed());
  EXPECT_THROW(ConeSpec::for_family(wave_family(), 0.0), InvalidArgument);
}

namespace {

Trajectory run_wave(const GridSpec& g, const TrigPolynomial& u0, std::size_t M, CauchyProblem& pb) {
  pb.family = wave_family(1.0, FrequencyFactor::Bracket);
  pb.f1 = u0.sample(g);
  pb.f2 = u0.sample(g, 1);
  pb.periodic_data = true;
  return integrate(pb, g, TimeMesh::graded(0.0, 1.0, M, 1.0), linspace(0.0, 1.0, 11));
}

} // namespace

TEST(Energy, ZeroDataGivesZeroVerdict) {
  const GridSpec g(kPi, 16);
  CauchyProblem pb;
  pb.family = wave_family();
  pb.f1.assign(g.N(), 0.0);
  pb.f2.assign(g.N(), 0.0);
  pb.periodic_data = true;
  const auto traj = integrate(pb, g, TimeMesh::graded(0.0, 1.0, 16, 1.0), {0.5, 1.0});
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto tr = energy_monitor(traj, pb, g, {}, prof, 1.0);
  EXPECT_EQ(tr.verdict, 0.0);
  for (std::size_t i = 0; i < tr.times.size(); ++i) EXPECT_EQ(tr.energy(i), 0.0);
}

TEST(Energy, WaveVerdictIsRefinementStable) {
  const auto u0 = TrigPolynomial::random(11);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const GridSpec g1(kPi, 32), g2(kPi, 64);
  CauchyProblem p1, p2;
  const auto t1 = run_wave(g1, u0, 200, p1);
  const auto t2 = run_wave(g2, u0, 400, p2);
  const double v1 = energy_monitor(t1, p1, g1, {}, prof, 0.0).verdict;
  const double v2 = energy_monitor(t2, p2, g2, {}, prof, 0.0).verdict;
  EXPECT_TRUE(std::isfinite(v1));
  EXPECT_GT(v1, 0.0);
  EXPECT_LT(std::max(v1, v2) / std::min(v1, v2), 2.0);
}

TEST(Energy, FrozenLambdaNeverDecreasesEnergy) {
  const auto u0 = TrigPolynomial::random(12);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const GridSpec g(kPi, 32);
  CauchyProblem pb;
  const auto traj = run_wave(g, u0, 200, pb);
  const auto moving = energy_monitor(traj, pb, g, {}, prof, 0.5);
  EnergyOptions opt;
  opt.freeze_lambda = true;
  const auto frozen = energy_monitor(traj, pb, g, {}, prof, 0.5, opt);
  for (std::size_t i = 0; i < moving.times.size(); ++i) {
    EXPECT_GE(frozen.energy(i), moving.energy(i));
    if (i > 0) EXPECT_LT(moving.lambda_values[i], moving.lambda_values[i - 1]);
  }
  EXPECT_EQ(moving.lambda_values.back(), 0.0);
}

TEST(Energy, ForcingEntersDataBound) {
  const GridSpec g(kPi, 32);
  CauchyProblem pb;
  pb.family = wave_family(1.0, FrequencyFactor::Bracket);
  pb.f1.assign(g.N(), 0.0);
  pb.f2.assign(g.N(), 0.0);
  pb.forcing = [](double, double x) { return std::cos(x); };
  pb.periodic_data = true;
  const auto traj = integrate(pb, g, TimeMesh::graded(0.0, 1.0, 64, 1.0), linspace(0.0, 1.0, 65));
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto tr = energy_monitor(traj, pb, g, {}, prof, 0.0);
  // ||cos||_{L2(-pi, pi)} = sqrt(pi), so D(1) = sqrt(pi).
  EXPECT_NEAR(tr.data_bound.back(), std::sqrt(kPi), 1e-12);
  EXPECT_GT(tr.verdict, 0.0);
  EXPECT_TRUE(std::isfinite(tr.verdict));
}

TEST(Energy, OverflowGuard) {
  const GridSpec g(kPi, 64);
  CauchyProblem pb;
  const auto traj = run_wave(g, TrigPolynomial::random(1), 64, pb);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  EXPECT_THROW(energy_monitor(traj, pb, g, {}, prof, 1e3), NumericalAbort);
}

TEST(Energy, LargeLambdaVerdictIndependentOfGrid) {
  // Lambda(0) = 24 puts weights near e^76 on the top modes of N = 64, where
  // only rounding noise lives.
  const auto u0 = TrigPolynomial::random(17);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  RealVector v;
  for (std::size_t N : {32u, 64u}) {
    const GridSpec g(kPi, N);
    CauchyProblem pb;
    const auto traj = run_wave(g, u0, 8 * N, pb);
    v.push_back(energy_monitor(traj, pb, g, {}, prof, 4.0).verdict);
  }
  EXPECT_NEAR(v[1], v[0], 1e-6 * v[0]);
}

TEST(Energy, TheoremRunVerdictNonIncreasingInLambda) {
  const GridSpec g(kPi, 32);
  const auto u0 = TrigPolynomial::random(13);
  CauchyProblem pb;
  pb.family = theorem_coefficient({});
  pb.f1 = u0.sample(g);
  pb.f2.assign(g.N(), 0.0);
  pb.periodic_data = true;
  const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, 256), linspace(0.0, 1.0, 21));
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double lam : {0.5, 1.0, 2.0, 4.0}) {
    const double v = energy_monitor(traj, pb, g, {}, prof, lam).verdict;
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(v, prev * (1.0 + 1e-12)) << "lambda = " << lam;
    prev = v;
  }
}

TEST(Lambda, ZeroBlocksGiveZero) {
  const GridSpec g(kPi, 16);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto fit = fit_lambda_from_blocks([](double, double, double) { return BlockSymbols{}; },
                                          StructurePair::constant(), 1.0, {0.1, 1.0}, g.xs(), g.xis(), prof);
  EXPECT_EQ(fit.lambda, 0.0);
  EXPECT_EQ(fit.samples, 2u * 16u * 16u);
}

TEST(Lambda, FreeWaveOutsideTheCutoffRegionGivesZero) {
  // For t <xi>_k >= 6 the cutoffs are inactive and the reference wave has no
  // block terms at all.
  const double k = 8.0;
  const GridSpec g(kPi, 32, k);
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto fit = fit_lambda(wave_family(1.0, FrequencyFactor::Bracket, k), g, linspace(6.0 / k, 1.0, 8), prof);
  EXPECT_EQ(fit.lambda, 0.0);
  // Inside the cutoff region the transition terms are present.
  EXPECT_GT(fit_lambda(wave_family(1.0, FrequencyFactor::Bracket, k), g, {0.1}, prof).lambda, 0.0);
}

TEST(Lambda, TheoremFamilyStableUnderRefinement) {
  const auto prof = make_profile(0.0, 1.25, 0.0, 3.0, 1.0);
  const auto fam = theorem_coefficient({});
  const auto coarse = fit_lambda(fam, GridSpec(kPi, 32), PhaseLattice::log_spaced(24, 1e-4, 1.0), prof);
  const auto fine = fit_lambda(fam, GridSpec(kPi, 64), PhaseLattice::log_spaced(48, 1e-4, 1.0), prof);
  EXPECT_GT(coarse.lambda, 0.0);
  EXPECT_LT(std::max(coarse.lambda, fine.lambda) / std::min(coarse.lambda, fine.lambda), 2.0);
}

TEST(Lambda, DoublingLowerOrderTermDoublesLambda) {
  const auto prof = make_profile(0.0, 1.25, 0.5, 3.0, 1.0);
  TheoremFamilyParams prm;
  prm.r = 0.5;
  prm.beta = 200.0;
  const GridSpec g(kPi, 32);
  const auto ts = PhaseLattice::log_spaced(24, 1e-4, 1.0);
  const double l1 = fit_lambda(theorem_coefficient(prm), g, ts, prof).lambda;
  prm.beta = 400.0;
  const double l2 = fit_lambda(theorem_coefficient(prm), g, ts, prof).lambda;
  EXPECT_NEAR(l2 / l1, 2.0, 0.2);
}

TEST(Lambda, BlockSymbolsMatchOperatorsOnSingleModes) {
  // x-independent coefficients: every operator is a Fourier multiplier, so the
  // symbol blocks act exactly on a single mode.
  const GridSpec g(kPi, 32);
  TheoremFamilyParams prm;
  prm.r = 0.5;
  prm.beta = 3.0;
  CauchyProblem pb;
  pb.family = theorem_coefficient(prm);
  pb.family.b0 = [](double t, double) { return 0.7 / std::sqrt(t); };
  pb.family.b2 = [](double, double) { return 0.4; };
  const SystemSymbols sym(pb.family);
  for (double t : {0.02, 0.2, 0.9}) {
    const SystemOperators ops(pb, g, t);
    for (long j : {0L, 3L, -9L}) {
      const double xi = static_cast<double>(j);
      ComplexVector e(g.N()), z(g.N(), 0.0);
      for (std::size_t i = 0; i < g.N(); ++i) e[i] = std::exp(cplx(0.0, xi * g.x(i)));
      const auto b = sym(t, 0.0, xi);
      const auto [c1, c2] = apply_system_blocks(ops, e, z);
      const auto [d1, d2] = apply_system_blocks(ops, z, e);
      const std::size_t i = 5;
      const double scale = 1.0 + frobenius(b.a0) + frobenius(b.a1);
      EXPECT_NEAR(std::abs(c1[i] - (b.a0[0] + b.a1[0]) * e[i]), 0.0, 1e-9 * scale) << t << " " << j;
      EXPECT_NEAR(std::abs(d1[i] - (b.a0[1] + b.a1[1]) * e[i]), 0.0, 1e-9 * scale) << t << " " << j;
      EXPECT_NEAR(std::abs(c2[i] - (b.a0[2] + b.a1[2]) * e[i]), 0.0, 1e-9 * scale) << t << " " << j;
      EXPECT_NEAR(std::abs(d2[i] - (b.a0[3] + b.a1[3]) * e[i]), 0.0, 1e-9 * scale) << t << " " << j;
    }
  }
}
