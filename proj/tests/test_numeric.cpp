#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nhgps/numeric.hpp"

using namespace nhgps;

TEST(Sigmoid, ComplementIsExact) {
  for (double x : {-40.0, -7.5, -1.0, -1e-9, 0.0, 0.3, 2.0, 19.0, 700.0}) {
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15) << x;
  }
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
}

TEST(Sigmoid, LogSigmoidMatchesLogOfSigmoid) {
  for (double x : {-30.0, -2.0, 0.0, 1.5, 30.0}) EXPECT_NEAR(log_sigmoid(x), std::log(sigmoid(x)), 1e-13);
  EXPECT_NEAR(log_sigmoid(-800.0), -800.0, 1e-12);
}

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  const auto& gh = gauss_hermite_20();
  double m0 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const double x = gh.nodes[i];
    m0 += gh.weights[i];
    m2 += gh.weights[i] * x * x;
    m4 += gh.weights[i] * x * x * x * x;
  }
  EXPECT_NEAR(m0, std::sqrt(kPi), 1e-13);
  EXPECT_NEAR(m2, std::sqrt(kPi) / 2.0, 1e-13);
  EXPECT_NEAR(m4, 3.0 * std::sqrt(kPi) / 4.0, 1e-12);
}

TEST(GaussHermite, ExpectedSigmoidAgreesWithMonteCarlo) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.7, 1.3);
  double acc = 0;
  const int reps = 400000;
  for (int i = 0; i < reps; ++i) acc += sigmoid(n(rng));
  EXPECT_NEAR(expected_sigmoid(0.7, 1.69), acc / reps, 2e-3);
  EXPECT_DOUBLE_EQ(expected_sigmoid(1.2, 0.0), sigmoid(1.2));
}

TEST(Trapezoid, ExactForLinearFunctions) {
  const auto g = trapezoid_grid(0.0, 2.0, 17);
  double acc = 0;
  for (std::size_t i = 0; i < g.size(); ++i) acc += g.weights[i] * (3.0 * g.points[i] + 1.0);
  EXPECT_NEAR(acc, 8.0, 1e-13);
  EXPECT_THROW((void)trapezoid_grid(0.0, 1.0, 1), ValidationError);
}

TEST(Kolmogorov, KnownQuantiles) {
  EXPECT_NEAR(kolmogorov_survival(1.3581), 0.05, 1e-4);
  EXPECT_NEAR(kolmogorov_survival(1.2238), 0.10, 1e-4);
  EXPECT_NEAR(kolmogorov_survival(1.6276), 0.01, 1e-4);
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
}

TEST(Interpolation, LinearAndClamped) {
  std::vector<double> xs{0.0, 1.0, 2.0}, ys{0.0, 2.0, 0.0};
  EXPECT_DOUBLE_EQ(linear_interpolate(xs, ys, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(linear_interpolate(xs, ys, 1.5), 1.0);
  EXPECT_DOUBLE_EQ(linear_interpolate(xs, ys, -1.0), 0.0);
}
