#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "nhgps/error.hpp"

namespace nhgps {

inline constexpr double kPi = std::numbers::pi;

// Logistic link; both branches avoid overflow so that sigmoid(x) + sigmoid(-x) == 1.
[[nodiscard]] inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[nodiscard]] inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

[[nodiscard]] inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

[[nodiscard]] inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

[[nodiscard]] inline double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  // Asymptotic Mills-ratio expansion, accurate far into the lower tail.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * kPi) + std::log(series);
}

[[nodiscard]] inline double digamma(double x) { return boost::math::digamma(x); }

// Nodes and weights for integrals against exp(-x^2) (Golub-Welsch).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

[[nodiscard]] inline GaussHermiteRule gauss_hermite(int n) {
  require(n >= 1, "gauss_hermite: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(0.5 * i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = eig.eigenvalues()(i);
    const double v = eig.eigenvectors()(0, i);
    rule.weights[i] = std::sqrt(kPi) * v * v;
  }
  return rule;
}

inline const GaussHermiteRule& gauss_hermite_20() {
  static const GaussHermiteRule rule = gauss_hermite(20);
  return rule;
}

// E[sigmoid(X)] for X ~ N(mean, var) by 20-node Gauss-Hermite.
[[nodiscard]] inline double expected_sigmoid(double mean, double var) {
  const auto& gh = gauss_hermite_20();
  const double scale = std::sqrt(2.0 * std::max(var, 0.0));
  double acc = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) acc += gh.weights[i] * sigmoid(mean + scale * gh.nodes[i]);
  return acc / std::sqrt(kPi);
}

// Uniform grid with composite-trapezoid weights.
struct QuadratureGrid {
  std::vector<double> points;
  std::vector<double> weights;

  [[nodiscard]] std::size_t size() const { return points.size(); }
};

[[nodiscard]] inline QuadratureGrid trapezoid_grid(double a, double b, std::size_t n) {
  require(n >= 2, "trapezoid grid needs at least two points");
  require(b > a, "trapezoid grid needs a non-empty interval");
  QuadratureGrid g;
  g.points.resize(n);
  g.weights.assign(n, (b - a) / static_cast<double>(n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    g.points[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  g.points.back() = b;
  g.weights.front() *= 0.5;
  g.weights.back() *= 0.5;
  return g;
}

// Uniform grid strictly inside (a, b): midpoints of n equal cells.
[[nodiscard]] inline std::vector<double> interior_grid(double a, double b, std::size_t n) {
  std::vector<double> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = a + (b - a) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return pts;
}

// P(K > x) for the limiting Kolmogorov distribution, 100-term alternating series.
[[nodiscard]] inline double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.1) return 1.0;  // exact value differs from 1 by less than 1e-50 here
  double acc = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    acc += (k % 2 == 1 ? term : -term);
  }
  return std::clamp(2.0 * acc, 0.0, 1.0);
}

[[nodiscard]] inline double linear_interpolate(std::span<const double> xs, std::span<const double> ys, double x) {
  if (xs.empty()) return 0.0;
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  const std::size_t lo = hi - 1;
  const double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return (1.0 - w) * ys[lo] + w * ys[hi];
}

}  // namespace nhgps
