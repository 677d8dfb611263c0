#include <gtest/gtest.h>

#include <random>

#include "nhgps/model.hpp"

using namespace nhgps;

TEST(PhiEval, EmptyHistoryIsBackground) {
  const std::vector<double> s{0.3, -1.2}, q{0.1, 0.9};
  const auto phi = phi_eval(s, [](double) { return 5.0; }, {}, DecayParam{20.0}, q);
  EXPECT_EQ(phi, s);
}

TEST(PhiEval, SingleEventArithmetic) {
  const std::vector<double> s{0.0}, q{0.1}, hist{0.0};
  const auto phi = phi_eval(s, [](double) { return 1.0; }, hist, DecayParam{20.0}, q);
  EXPECT_NEAR(phi[0], std::exp(-2.0), 1e-15);
  EXPECT_NEAR(phi[0], 0.135335, 1e-6);
}

TEST(PhiEval, MatchesNaiveLoopAndIsStrict) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::vector<double> hist{0.1, 0.2, 0.45, 0.5, 0.8};
  std::vector<double> q{0.05, 0.2, 0.3, 0.5, 0.77, 0.95}, s(q.size());
  for (auto& v : s) v = n(rng);
  const double c1 = n(rng), c2 = n(rng);
  const auto g = [&](double u) { return c1 * std::cos(3.0 * u) + c2 * u; };
  const auto phi = phi_eval(s, g, hist, DecayParam{4.0}, q);
  for (std::size_t l = 0; l < q.size(); ++l) {
    double ref = s[l];
    for (double t : hist)
      if (t < q[l]) ref += g(q[l] - t) * std::exp(-4.0 * (q[l] - t));
    EXPECT_NEAR(phi[l], ref, 1e-12);
  }
  // Events exactly at the query time are excluded.
  EXPECT_NEAR(phi[1], s[1] + g(0.1) * std::exp(-0.4), 1e-12);
}

TEST(PhiEval, UndefinedMemoryValueIsAnError) {
  const std::vector<double> s{0.0}, q{0.5}, hist{0.1};
  EXPECT_THROW((void)phi_eval(s, [](double) { return std::nan(""); }, hist, DecayParam{1.0}, q), ValidationError);
}

TEST(Intensity, ClosedForms) {
  EXPECT_DOUBLE_EQ(intensity(std::vector<double>{0.0}, 320.0)[0], 160.0);
  EXPECT_NEAR(intensity(std::vector<double>{1.0}, 2.0)[0], 1.462117, 1e-6);
  EXPECT_NEAR(intensity(std::vector<double>{50.0}, 7.0)[0], 7.0, 1e-12);
  const auto e = evaluate_intensity({0.1, 0.2}, {-3.0, 2.0}, 4.0);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_GT(e.values[i], 0.0);
    EXPECT_LT(e.values[i], 4.0);
  }
  EXPECT_LT(e.values[0], e.values[1]);
}

TEST(LogLikelihood, ConstantRate) {
  const std::vector<double> ev{0.1, 0.4, 0.45, 0.9};
  const auto grid = trapezoid_grid(0.0, 2.0, 101);
  const double ll = log_likelihood(ev, [](double) { return 3.5; }, grid);
  EXPECT_NEAR(ll, 4.0 * std::log(3.5) - 3.5 * 2.0, 1e-12);
}

TEST(LogLikelihood, PiecewiseConstantRate) {
  // Rate 2 on [0, 0.5), 6 on [0.5, 1]; grid nodes land on the jump.
  const auto rate = [](double t) { return t < 0.5 ? 2.0 : 6.0; };
  const std::vector<double> ev{0.2, 0.7, 0.8};
  const auto grid = trapezoid_grid(0.0, 1.0, 200001);
  const double ll = log_likelihood(ev, rate, grid);
  EXPECT_NEAR(ll, std::log(2.0) + 2.0 * std::log(6.0) - (1.0 + 3.0), 1e-4);
}

TEST(LogLikelihood, NhgpsToyMatchesDenseRiemannSum) {
  const std::vector<double> ev{0.1, 0.25, 0.3, 0.6, 0.85};
  const auto rate = [&](double t) {
    const std::vector<double> s{std::sin(4.0 * t) - 0.5}, q{t};
    return intensity(phi_eval(s, [](double u) { return 1.0 - 3.0 * u; }, ev, DecayParam{20.0}, q), 40.0)[0];
  };
  // The intensity jumps at events, so the trapezoid grid must be fine too.
  const auto grid = trapezoid_grid(0.0, 1.0, 1000001);
  double riemann = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) riemann += rate((i + 0.5) / n) / n;
  double ref = -riemann;
  for (double t : ev) ref += std::log(rate(t));
  EXPECT_NEAR(log_likelihood(ev, rate, grid), ref, 1e-4);
}

TEST(LogLikelihood, NonPositiveRateAtEventIsMinusInfinity) {
  const std::vector<double> ev{0.5};
  EXPECT_EQ(log_likelihood(ev, [](double) { return 0.0; }, trapezoid_grid(0, 1, 3)),
            -std::numeric_limits<double>::infinity());
}

TEST(LogLikelihood, LargerBoundHurtsWhenPhiIsLowOffEvents) {
  const std::vector<double> ev{0.3, 0.6};
  const auto grid = trapezoid_grid(0.0, 1.0, 20001);
  const auto make = [&](double lambda) {
    return [&, lambda](double t) {
      const bool near = std::abs(t - 0.3) < 1e-3 || std::abs(t - 0.6) < 1e-3;
      return lambda * sigmoid(near ? 4.0 : -2.0);
    };
  };
  EXPECT_GT(log_likelihood(ev, make(50.0), grid), log_likelihood(ev, make(500.0), grid));
}

TEST(EventSequence, SortsValidatesAndSeparatesDuplicates) {
  const auto ev = EventSequence::make({0.9, 0.1, 0.5, 0.5}, 1.0);
  ASSERT_EQ(ev.size(), 4u);
  EXPECT_TRUE(std::is_sorted(ev.times.begin(), ev.times.end()));
  for (std::size_t i = 1; i < ev.size(); ++i) EXPECT_GT(ev.times[i], ev.times[i - 1]);
  EXPECT_NEAR(ev.times[2], 0.5 + 1e-9, 1e-15);
  EXPECT_THROW((void)EventSequence::make({-0.1}, 1.0), ValidationError);
  EXPECT_THROW((void)EventSequence::make({1.2}, 1.0), ValidationError);
  EXPECT_THROW((void)EventSequence::make({0.2}, 0.0), ValidationError);
  EXPECT_THROW((void)EventSequence::make({0.2}, 1.0, {3}, 2), ValidationError);
  const auto typed = EventSequence::make({0.2, 0.1}, 1.0, {2, 0}, 3);
  EXPECT_EQ(typed.types, (std::vector<int>{0, 2}));
  EXPECT_EQ(typed.times_of_type(2), std::vector<double>{0.2});
  EXPECT_TRUE(typed.times_of_type(1).empty());
}

TEST(Multivariate, SingleDimensionReducesToUnivariate) {
  const auto ev = EventSequence::make({0.1, 0.3, 0.6}, 1.0);
  const std::vector<double> s{0.2, -0.4}, q{0.35, 0.9};
  const auto g = [](double u) { return 0.7 - u; };
  const auto uni = phi_eval(s, g, ev.times, DecayParam{3.0}, q);
  const auto multi = multivariate_phi(0, ev, s, {CouplingFunction{g, DecayParam{3.0}}}, q);
  EXPECT_EQ(uni, multi);

  const ModelHyper h;
  const auto mm = MultivariateModel::from(h);
  const auto ku = h.kernel(ev.times, 1.0).gram(q);
  const auto km = mm.kernel_for(0, ev).gram(q);
  EXPECT_EQ((ku - km).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Multivariate, ZeroCouplingIgnoresOtherType) {
  const auto ev = EventSequence::make({0.1, 0.2, 0.3, 0.5}, 1.0, {0, 1, 1, 0}, 2);
  const std::vector<double> s{0.0, 0.0}, q{0.4, 0.8};
  const auto g = [](double) { return 1.0; };
  const auto with_zero = multivariate_phi(0, ev, s, {CouplingFunction{g, {2.0}}, std::nullopt}, q);
  const auto own = phi_eval(s, g, ev.times_of_type(0), DecayParam{2.0}, q);
  EXPECT_EQ(with_zero, own);
}

TEST(Multivariate, MatchesNaiveLoop) {
  const auto ev = EventSequence::make({0.05, 0.1, 0.22, 0.3, 0.41, 0.6}, 1.0, {0, 1, 0, 1, 0, 1}, 2);
  const std::vector<double> s{0.1, -0.2, 0.3}, q{0.25, 0.5, 0.95};
  const auto g00 = [](double u) { return std::cos(u); };
  const auto g01 = [](double u) { return -2.0 * u; };
  const auto phi = multivariate_phi(0, ev, s, {CouplingFunction{g00, {3.0}}, CouplingFunction{g01, {7.0}}}, q);
  for (std::size_t l = 0; l < q.size(); ++l) {
    double ref = s[l];
    for (std::size_t i = 0; i < ev.size(); ++i) {
      if (!(ev.times[i] < q[l])) continue;
      const double u = q[l] - ev.times[i];
      ref += ev.types[i] == 0 ? g00(u) * std::exp(-3.0 * u) : g01(u) * std::exp(-7.0 * u);
    }
    EXPECT_NEAR(phi[l], ref, 1e-12);
  }
}

TEST(Multivariate, KernelUsesOnlyCoupledSources) {
  MultivariateModel m;
  m.dims = 2;
  m.background = {{1.0, 0.5}, {1.0, 0.5}};
  m.lambda_prior = {GammaPrior{}, GammaPrior{}};
  m.coupling = {{MemoryTerm{{1.0, 0.07}, {20.0}}, std::nullopt},
                {MemoryTerm{{0.5, 0.1}, {10.0}}, MemoryTerm{{1.0, 0.07}, {20.0}}}};
  m.validate();
  const auto ev = EventSequence::make({0.1, 0.2, 0.3}, 1.0, {0, 1, 0}, 2);
  EXPECT_EQ(m.history_for(0, ev).size(), 1u);
  EXPECT_EQ(m.history_for(1, ev).size(), 2u);
  EXPECT_EQ(m.kernel_for(0, ev).gram(std::vector<double>{0.5}).value(),
            ModelHyper{}.kernel(ev.times_of_type(0), 1.0).gram(std::vector<double>{0.5}).value());
}
