#include <gtest/gtest.h>

#include <random>

#include "nhgps/simulate.hpp"

using namespace nhgps;

namespace {

GroundTruth constant_truth(double s_value, double lambda, double window) {
  GroundTruth gt;
  gt.window = window;
  gt.lambda = {lambda};
  gt.background = {GridFunction{{0.0, window}, {s_value, s_value}, false}};
  gt.memory = {{std::nullopt}};
  gt.model = MultivariateModel::from(ModelHyper{});
  return gt;
}

}  // namespace

TEST(DrawGp, MarginalVarianceAndCovariance) {
  const RbfParams p{1.7, 0.3};
  const std::vector<double> grid{0.0, 0.1, 0.25};
  Rng rng(1);
  const int n = 10000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd v = draw_gp_function(p, grid, rng);
    acc += v * v.transpose();
  }
  acc /= n;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(acc(i, j), rbf(grid[i], grid[j], p), 0.05 * p.amplitude) << i << "," << j;
  }
  EXPECT_NEAR(acc(0, 0), p.amplitude, 0.05 * p.amplitude);
}

TEST(DrawGp, NearbyPointsAreNearlyEqual) {
  const RbfParams p{1.0, 0.07};
  const std::vector<double> grid{0.3, 0.3007};
  Rng rng(2);
  double num = 0, d0 = 0, d1 = 0;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::VectorXd v = draw_gp_function(p, grid, rng);
    num += v(0) * v(1);
    d0 += v(0) * v(0);
    d1 += v(1) * v(1);
    EXPECT_LT(std::abs(v(0) - v(1)), 0.1);  // sd of the difference is 0.014
  }
  EXPECT_GT(num / std::sqrt(d0 * d1), 0.999);
}

TEST(Thinning, ConstantHalfAcceptance) {
  const auto gt = constant_truth(0.0, 40.0, 1.0);
  Rng rng(3);
  double sum = 0.0;
  const int runs = 500;
  for (int i = 0; i < runs; ++i) sum += static_cast<double>(thinning_simulate(gt, rng).size());
  const double mean = sum / runs;
  EXPECT_NEAR(mean, 20.0, 3.0 * std::sqrt(20.0 / runs));
}

TEST(Thinning, SaturatedNegativeBackgroundGivesNoEvents) {
  const auto gt = constant_truth(-20.0, 320.0, 1.0);
  Rng rng(4);
  std::size_t total = 0;
  for (int i = 0; i < 100; ++i) total += thinning_simulate(gt, rng).size();
  EXPECT_EQ(total, 0u);
}

TEST(Thinning, SyntheticParameterEventCounts) {
  const ModelHyper h;  // a_s = 1, sigma_s = 0.5, a_g = 1, sigma_g = 0.07, alpha = 20
  std::vector<std::size_t> counts;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto gt = draw_ground_truth(h, 320.0, 1.0, 1000 + s);
    Rng rng(77 + s);
    counts.push_back(thinning_simulate(gt, rng).size());
  }
  std::nth_element(counts.begin(), counts.begin() + 50, counts.end());
  EXPECT_GE(counts[50], 5u);
  EXPECT_LE(counts[50], 150u);
}

TEST(Thinning, HistogramMatchesCoxIntensity) {
  // No memory: a sigmoidal Cox process with known rate per bin.
  GroundTruth gt = constant_truth(0.0, 60.0, 1.0);
  gt.background[0].grid = uniform_grid(0.0, 1.0, 0.01);
  for (double t : gt.background[0].grid) gt.background[0].values.push_back(3.0 * std::sin(6.0 * t));
  const int bins = 10, runs = 2000;
  std::vector<double> hist(bins, 0.0);
  Rng rng(5);
  for (int i = 0; i < runs; ++i)
    for (double t : thinning_simulate(gt, rng).times) hist[std::min(bins - 1, static_cast<int>(t * bins))] += 1.0;
  for (int b = 0; b < bins; ++b) {
    double expect = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const double t = (b + (k + 0.5) / 1000.0) / bins;
      expect += 60.0 * sigmoid(gt.background[0](t)) / (1000.0 * bins);
    }
    const double observed = hist[b] / runs;
    EXPECT_NEAR(observed, expect, 4.0 * std::sqrt(expect / runs)) << "bin " << b;
  }
}

TEST(Thinning, CausalAndOrderInvariant) {
  const auto gt = draw_ground_truth(ModelHyper{}, 320.0, 1.0, 42);
  Rng rng(6);
  auto cands = draw_candidates(gt.lambda, 0.0, 1.0, rng);
  const auto prob = [&](const Candidate& c, const EventSequence& ev) {
    for (double t : ev.times) EXPECT_LT(t, c.time);
    return sigmoid(gt.phi(c.type, c.time, ev));
  };
  const auto full = thin_candidates(cands, 1.0, 1, prob);
  // Truncating later candidates leaves the earlier decisions unchanged.
  const std::vector<Candidate> half(cands.begin(), cands.begin() + static_cast<long>(cands.size() / 2));
  const auto part = thin_candidates(half, 1.0, 1, prob);
  ASSERT_LE(part.size(), full.size());
  for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(part.times[i], full.times[i]);
  // Shuffling before the chronological sort gives the same accepted set.
  std::shuffle(cands.begin(), cands.end(), rng);
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.time < b.time; });
  EXPECT_EQ(thin_candidates(cands, 1.0, 1, prob).times, full.times);
}

TEST(Thinning, DeterministicUnderSeed) {
  const auto a = draw_ground_truth(ModelHyper{}, 320.0, 1.0, 9);
  const auto b = draw_ground_truth(ModelHyper{}, 320.0, 1.0, 9);
  EXPECT_EQ(a.background[0].values, b.background[0].values);
  Rng r1(10), r2(10);
  EXPECT_EQ(thinning_simulate(a, r1).times, thinning_simulate(b, r2).times);
}

TEST(Thinning, MultivariateLabelsAndCoupling) {
  MultivariateModel m;
  m.dims = 2;
  m.background = {{1.0, 0.5}, {1.0, 0.5}};
  m.lambda_prior = {GammaPrior{}, GammaPrior{}};
  m.coupling = {{MemoryTerm{{1.0, 0.07}, {20.0}}, std::nullopt}, {std::nullopt, MemoryTerm{{1.0, 0.07}, {20.0}}}};
  const auto gt = draw_ground_truth(m, {50.0, 80.0}, 2.0, 3);
  Rng rng(11);
  const auto ev = thinning_simulate(gt, rng);
  EXPECT_TRUE(ev.labelled());
  EXPECT_EQ(ev.type_count, 2);
  for (int r : ev.types) EXPECT_TRUE(r == 0 || r == 1);
  EXPECT_TRUE(std::is_sorted(ev.times.begin(), ev.times.end()));
}
