#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nhgps/kernels.hpp"

using namespace nhgps;

namespace {

// Quadruple-loop reference for one entry of the aggregated kernel.
double brute_entry(double tl, double tk, const std::vector<double>& hist, RbfParams s, RbfParams g, double alpha) {
  double v = s.amplitude * std::exp(-(tl - tk) * (tl - tk) / (s.lengthscale * s.lengthscale));
  for (double hi : hist) {
    if (!(hi < tl)) continue;
    for (double hj : hist) {
      if (!(hj < tk)) continue;
      const double u = tl - hi, w = tk - hj;
      v += g.amplitude * std::exp(-(u - w) * (u - w) / (g.lengthscale * g.lengthscale)) * std::exp(-alpha * (u + w));
    }
  }
  return v;
}

Eigen::MatrixXd brute_matrix(const std::vector<double>& rows, const std::vector<double>& cols,
                             const std::vector<double>& hist, RbfParams s, RbfParams g, double alpha) {
  Eigen::MatrixXd m(rows.size(), cols.size());
  for (std::size_t l = 0; l < rows.size(); ++l)
    for (std::size_t k = 0; k < cols.size(); ++k) m(l, k) = brute_entry(rows[l], cols[k], hist, s, g, alpha);
  return m;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / std::max(1.0, std::abs(b(i, j))));
  return worst;
}

std::vector<double> sorted_uniform(std::mt19937_64& rng, int n, double hi) {
  std::uniform_real_distribution<double> u(0.0, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end());
  return v;
}

HawkesKernel make_kernel(const std::vector<double>& hist, RbfParams s, RbfParams g, double alpha, double window,
                         KernelMethod method) {
  auto k = HawkesKernel::univariate(s, g, DecayParam{alpha}, hist, window);
  k.set_method(method);
  return k;
}

}  // namespace

TEST(Rbf, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(rbf(0.3, 0.3, {1.0, 0.07}), 1.0);
  EXPECT_NEAR(rbf(0.0, 0.07, {1.0, 0.07}), std::exp(-1.0), 1e-15);
  const double direct = 2.0 * std::exp(-std::pow(0.1 - 0.35, 2) / std::pow(0.5, 2));
  EXPECT_NEAR(rbf(0.1, 0.35, {2.0, 0.5}), direct, 1e-15);
  EXPECT_DOUBLE_EQ(rbf(0.1, 0.35, {2.0, 0.5}), rbf(0.35, 0.1, {2.0, 0.5}));
}

TEST(Rbf, ParameterValidation) {
  EXPECT_THROW(RbfParams({0.0, 1.0}).validate(), ValidationError);
  EXPECT_THROW(RbfParams({1.0, -1.0}).validate(), ValidationError);
  EXPECT_THROW(DecayParam{0.0}.validate(), ValidationError);
}

TEST(AggregatedKernel, EmptyHistoryIsBackgroundKernel) {
  std::vector<double> pts{0.1, 0.4, 0.9};
  const RbfParams s{1.3, 0.5};
  const auto k = aggregated_kernel(pts, pts, {}, s, {1.0, 0.07}, {20.0}, 1.0);
  for (int l = 0; l < 3; ++l)
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(k.values(l, c), rbf(pts[l], pts[c], s));
}

TEST(AggregatedKernel, SingleEventHugeLengthscale) {
  std::vector<double> pts{1.0};
  const RbfParams s{1.0, 0.5};
  for (auto method : {KernelMethod::direct, KernelMethod::spectral}) {
    const auto k = make_kernel({0.0}, s, {1.0, 1e6}, 20.0, 1.0, method);
    const double v = k.matrix(pts, pts)(0, 0);
    EXPECT_NEAR(v, 1.0 + std::exp(-40.0), 1e-15);
    EXPECT_NEAR(v, brute_entry(1.0, 1.0, {0.0}, s, {1.0, 1e6}, 20.0), 1e-15);
  }
}

TEST(AggregatedKernel, PaperParametersMatchBruteForce) {
  const std::vector<double> hist{0.12, 0.31, 0.33};
  const std::vector<double> rows{0.32, 0.8};
  const RbfParams s{1.0, 0.5}, g{1.0, 0.07};
  const auto ref = brute_matrix(rows, rows, hist, s, g, 20.0);
  for (auto method : {KernelMethod::direct, KernelMethod::spectral}) {
    const auto k = make_kernel(hist, s, g, 20.0, 1.0, method);
    EXPECT_LT(rel_err(k.matrix(rows, rows), ref), 1e-10);
    EXPECT_LT(rel_err(k.gram(rows), ref), 1e-10);
  }
}

TEST(AggregatedKernel, RandomSmallInstancesMatchBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lg(-1.0, 1.0);
  std::uniform_int_distribution<int> cnt(0, 5), pcnt(1, 5);
  for (int rep = 0; rep < 50; ++rep) {
    const double window = std::exp(lg(rng));
    const auto hist = sorted_uniform(rng, cnt(rng), window);
    const auto rows = sorted_uniform(rng, pcnt(rng), window);
    const auto cols = sorted_uniform(rng, pcnt(rng), window);
    const RbfParams s{std::exp(lg(rng)), 0.3 * std::exp(lg(rng))};
    const RbfParams g{std::exp(lg(rng)), 0.1 * std::exp(lg(rng))};
    const double alpha = 10.0 * std::exp(lg(rng));
    const auto ref = brute_matrix(rows, cols, hist, s, g, alpha);
    for (auto method : {KernelMethod::direct, KernelMethod::spectral, KernelMethod::automatic}) {
      const auto k = make_kernel(hist, s, g, alpha, window, method);
      EXPECT_LT(rel_err(k.matrix(rows, cols), ref), 1e-10) << rep;
      const Eigen::VectorXd d = k.diagonal(rows);
      const auto ref_sq = brute_matrix(rows, rows, hist, s, g, alpha);
      EXPECT_LT(rel_err(d, ref_sq.diagonal()), 1e-10) << rep;
    }
  }
}

TEST(AggregatedKernel, SpectralAndDirectAgreeOnLargerHistories) {
  std::mt19937_64 rng(5);
  const auto hist = sorted_uniform(rng, 60, 1.0);
  const auto pts = sorted_uniform(rng, 40, 1.0);
  const RbfParams s{1.0, 0.5}, g{1.0, 0.07};
  const auto a = make_kernel(hist, s, g, 20.0, 1.0, KernelMethod::direct);
  const auto b = make_kernel(hist, s, g, 20.0, 1.0, KernelMethod::spectral);
  EXPECT_LT(rel_err(a.gram(pts), b.gram(pts)), 1e-10);
  const auto ga = a.gradients(pts, pts), gb = b.gradients(pts, pts);
  for (std::size_t p = 0; p < ga.size(); ++p) EXPECT_LT(rel_err(ga[p], gb[p]), 1e-9) << p;
}

TEST(AggregatedKernel, SymmetricAndPositiveDefinite) {
  std::mt19937_64 rng(17);
  const auto hist = sorted_uniform(rng, 25, 1.0);
  std::vector<double> pts = hist;
  const auto extra = sorted_uniform(rng, 30, 1.0);
  pts.insert(pts.end(), extra.begin(), extra.end());
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, hist, 1.0);
  const Eigen::MatrixXd m = k.gram(pts);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      EXPECT_LE(std::abs(m(i, j) - m(j, i)), 1e-12 * std::max(1.0, std::abs(m(i, j))));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * m.maxCoeff());
  EXPECT_NO_THROW((void)robust_cholesky(m));
  EXPECT_EQ(robust_cholesky(m).jitter, kDefaultJitter);
}

TEST(AggregatedKernel, CrossHistoryReducesToSharedHistory) {
  std::mt19937_64 rng(2);
  const auto hist = sorted_uniform(rng, 8, 1.0);
  const auto rows = sorted_uniform(rng, 4, 1.0);
  const auto cols = sorted_uniform(rng, 3, 1.0);
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, hist, 1.0);
  EXPECT_LT(rel_err(k.cross(rows, k.history(), cols, k.history()), k.matrix(rows, cols)), 1e-14);
}

TEST(AggregatedKernel, CrossHistoryMatchesTwoSidedBruteForce) {
  const std::vector<double> ha{0.1, 0.5}, hb{0.2, 0.3, 0.7};
  const std::vector<double> rows{0.6, 0.9}, cols{0.4, 0.8};
  const RbfParams s{0.8, 0.4}, g{1.2, 0.15};
  const double alpha = 3.0;
  for (auto method : {KernelMethod::direct, KernelMethod::spectral}) {
    auto k = HawkesKernel::univariate(s, g, {alpha}, ha, 1.0);
    k.set_method(method);
    const Eigen::MatrixXd m = k.cross(rows, History{ha}, cols, History{hb});
    for (int l = 0; l < 2; ++l) {
      for (int c = 0; c < 2; ++c) {
        double ref = rbf(rows[l], cols[c], s);
        for (double hi : ha)
          for (double hj : hb)
            if (hi < rows[l] && hj < cols[c]) {
              const double u = rows[l] - hi, v = cols[c] - hj;
              ref += g.amplitude * std::exp(-(u - v) * (u - v) / (g.lengthscale * g.lengthscale) - alpha * (u + v));
            }
        EXPECT_NEAR(m(l, c), ref, 1e-12);
      }
    }
  }
}

TEST(AggregatedKernel, StrictInequalityExcludesCoincidentEvent) {
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, {0.5}, 1.0);
  std::vector<double> at{0.5};
  EXPECT_DOUBLE_EQ(k.matrix(at, at)(0, 0), 1.0);
}

TEST(AggregatedKernel, RejectsTimesOutsideWindow) {
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, {0.5}, 1.0);
  std::vector<double> bad{1.5}, good{0.5};
  EXPECT_THROW((void)k.matrix(bad, good), ValidationError);
  std::vector<double> neg{-0.1};
  EXPECT_THROW((void)k.matrix(neg, good), ValidationError);
}

TEST(Hypergrads, BackgroundAmplitudeWithEmptyHistory) {
  std::vector<double> pts{0.1, 0.3, 0.85};
  const RbfParams s{1.7, 0.4};
  const auto g = kernel_hypergrads(pts, {}, s, {1.0, 0.07}, {20.0}, 1.0);
  ASSERT_EQ(g.size(), 5u);
  for (int l = 0; l < 3; ++l)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(g[0](l, c), std::exp(-std::pow(pts[l] - pts[c], 2) / 0.16), 1e-15);
}

TEST(Hypergrads, DecayDerivativeSingleEvent) {
  const double t_event = 0.2, a_g = 1.5, sg = 0.1, alpha = 7.0;
  std::vector<double> pts{0.45, 0.6};
  for (auto method : {KernelMethod::direct, KernelMethod::spectral}) {
    auto k = HawkesKernel::univariate({1.0, 0.5}, {a_g, sg}, {alpha}, {t_event}, 1.0);
    k.set_method(method);
    const auto g = k.gradients(pts, pts);
    const double u = pts[0] - t_event, v = pts[1] - t_event;
    const double entry = a_g * std::exp(-(u - v) * (u - v) / (sg * sg)) * std::exp(-alpha * (u + v));
    EXPECT_NEAR(g[4](0, 1), -(u + v) * entry, 1e-13);
    EXPECT_NEAR(g[3](0, 1), entry * 2.0 * (u - v) * (u - v) / (sg * sg * sg), 1e-12);
    EXPECT_NEAR(g[2](0, 1), entry / a_g, 1e-13);
  }
}

TEST(Hypergrads, MatchCentralDifferencesAtRandomDraws) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> lg(-0.7, 0.7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto hist = sorted_uniform(rng, 6, 1.0);
    const auto rows = sorted_uniform(rng, 5, 1.0);
    const auto cols = sorted_uniform(rng, 4, 1.0);
    std::vector<double> p{std::exp(lg(rng)), 0.5 * std::exp(lg(rng)), std::exp(lg(rng)), 0.1 * std::exp(lg(rng)),
                          15.0 * std::exp(lg(rng))};
    for (auto method : {KernelMethod::direct, KernelMethod::spectral}) {
      auto base = HawkesKernel::univariate({p[0], p[1]}, {p[2], p[3]}, {p[4]}, hist, 1.0);
      base.set_method(method);
      const auto g = base.gradients(rows, cols);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-5 * p[i];
        auto up = p, dn = p;
        up[i] += h;
        dn[i] -= h;
        const Eigen::MatrixXd fd =
            (base.with_parameters(up).matrix(rows, cols) - base.with_parameters(dn).matrix(rows, cols)) / (2.0 * h);
        for (Eigen::Index a = 0; a < fd.rows(); ++a)
          for (Eigen::Index b = 0; b < fd.cols(); ++b) {
            const double scale = std::max({std::abs(fd(a, b)), std::abs(g[i](a, b)), 1e-6});
            EXPECT_LT(std::abs(fd(a, b) - g[i](a, b)) / scale, 1e-4) << rep << " param " << i;
          }
      }
      const auto dg = base.diagonal_gradients(rows);
      const auto full = base.gradients(rows, rows);
      for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LT(rel_err(dg[i], full[i].diagonal()), 1e-10);
    }
  }
}

TEST(LogPriorGrad, ZeroPhiLeavesTraceTerm) {
  std::vector<double> pts{0.1, 0.4, 0.45, 0.8};
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, {0.05, 0.42}, 1.0);
  const Eigen::MatrixXd m = k.gram(pts);
  const auto grads = k.gradients(pts, pts);
  const auto g = log_gp_prior_grad(Eigen::VectorXd::Zero(4), m, grads);
  Eigen::MatrixXd mj = m;
  mj.diagonal().array() += kDefaultJitter;
  const Eigen::MatrixXd inv = mj.inverse();
  for (std::size_t i = 0; i < grads.size(); ++i) EXPECT_NEAR(g[i], -0.5 * (inv * grads[i]).trace(), 1e-9);
}

TEST(LogPriorGrad, FrozenParameterGivesZero) {
  std::vector<double> pts{0.1, 0.4};
  const auto k = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, {0.05}, 1.0);
  Eigen::VectorXd phi(2);
  phi << 0.3, -1.2;
  const auto g = log_gp_prior_grad(phi, k.gram(pts), {Eigen::MatrixXd::Zero(2, 2)});
  EXPECT_EQ(g[0], 0.0);
}

TEST(LogPriorGrad, MatchesFiniteDifferencesOfLogDensity) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> lg(-0.5, 0.5);
  std::normal_distribution<double> nrm(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto hist = sorted_uniform(rng, 4, 1.0);
    const auto pts = sorted_uniform(rng, 5, 1.0);
    std::vector<double> p{std::exp(lg(rng)), 0.5 * std::exp(lg(rng)), std::exp(lg(rng)), 0.1 * std::exp(lg(rng)),
                          15.0 * std::exp(lg(rng))};
    Eigen::VectorXd phi(5);
    for (int i = 0; i < 5; ++i) phi(i) = nrm(rng);
    const auto base = HawkesKernel::univariate({p[0], p[1]}, {p[2], p[3]}, {p[4]}, hist, 1.0);
    const auto g = log_gp_prior_grad(phi, base.gram(pts), base.gradients(pts, pts));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-5 * p[i];
      auto up = p, dn = p;
      up[i] += h;
      dn[i] -= h;
      const double fd = (log_gp_prior(phi, base.with_parameters(up).gram(pts)) -
                         log_gp_prior(phi, base.with_parameters(dn).gram(pts))) /
                        (2.0 * h);
      EXPECT_LT(std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}), 1e-4) << rep << " " << i;
    }
  }
}
