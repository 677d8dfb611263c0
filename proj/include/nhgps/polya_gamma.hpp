#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include "nhgps/numeric.hpp"

namespace nhgps {

using Rng = std::mt19937_64;

// E[PG(1, c)] = tanh(c/2) / (2c), with the Taylor form near zero.
[[nodiscard]] inline double pg_mean(double c) {
  c = std::abs(c);
  if (c < 1e-6) return 0.25 - c * c / 48.0;
  return std::tanh(0.5 * c) / (2.0 * c);
}

// Var[PG(1, c)] = (sinh c - c) / (4 c^3 cosh^2(c/2)).
[[nodiscard]] inline double pg_variance(double c) {
  c = std::abs(c);
  if (c < 1e-3) return 1.0 / 24.0 - c * c / 120.0;
  const double ch = std::cosh(0.5 * c);
  return (std::sinh(c) - c) / (4.0 * c * c * c * ch * ch);
}

// Exponent f(w, phi) of the augmentation sigmoid(phi) = E_{PG(1,0)}[exp f(w, phi)].
[[nodiscard]] inline double pg_augmentation_exponent(double w, double phi) {
  return -0.5 * phi * phi * w + 0.5 * phi - std::numbers::ln2;
}

namespace detail {

inline constexpr double kPgTrunc = 2.0 / kPi;  // switch point of the two series envelopes

// n-th coefficient of the alternating series for J*(1, z), piecewise around kPgTrunc.
inline double pg_series_term(int n, double x) {
  const double k = n + 0.5;
  if (x <= kPgTrunc) {
    return std::exp(std::log(kPi * k) + 1.5 * (std::log(2.0 / kPi) - std::log(x)) - 2.0 * k * k / x);
  }
  return kPi * k * std::exp(-0.5 * x * kPi * kPi * k * k);
}

// Gamma(1/2) restricted to (1/kPgTrunc, inf), by rejection from a shifted exponential.
inline double truncated_gamma_half(Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double c = 0.5 * kPi;
  while (true) {
    const double x = 2.0 * expo(rng) + c;
    if (unif(rng) <= std::sqrt(c / x)) return x;
  }
}

inline double inverse_gaussian(double mu, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double y = norm(rng);
  const double v = y * y;
  double x = mu + 0.5 * mu * (mu * v - std::sqrt(4.0 * mu * v + mu * mu * v * v));
  if (unif(rng) > mu / (mu + x)) x = mu * mu / x;
  return x;
}

// Inverse Gaussian IG(1/z, 1) truncated to (0, kPgTrunc).
inline double truncated_inverse_gaussian(double z, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double mu = z > 0.0 ? 1.0 / z : std::numeric_limits<double>::infinity();
  if (mu > kPgTrunc) {
    while (true) {
      const double x = 1.0 / truncated_gamma_half(rng);
      if (std::log(unif(rng)) < -0.5 * z * z * x) return x;
    }
  }
  double x = kPgTrunc + 1.0;
  while (x >= kPgTrunc) x = inverse_gaussian(mu, rng);
  return x;
}

}  // namespace detail

// Exact draw from PG(1, c) by the alternating-series rejection sampler on J*(1, c/2).
[[nodiscard]] inline double pg_sample(double c, Rng& rng) {
  const double z = 0.5 * std::abs(c);
  const double t = detail::kPgTrunc;
  const double k = 0.5 * z * z + kPi * kPi / 8.0;
  // Mass ratio of the left (inverse Gaussian) to the right (exponential) envelope piece.
  const double w = std::sqrt(0.5 * kPi);
  const double log_a = std::log(4.0 / kPi) - z + std::log(k) + k * t;
  const double left = std::exp(log_a + log_normal_cdf(w * (t * z - 1.0))) +
                      std::exp(log_a + 2.0 * z + log_normal_cdf(-w * (t * z + 1.0)));
  const double p_right = 1.0 / (1.0 + left);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  while (true) {
    double x;
    if (unif(rng) < p_right) {
      x = t + expo(rng) / k;
    } else {
      x = detail::truncated_inverse_gaussian(z, rng);
    }
    double s = detail::pg_series_term(0, x);
    const double y = unif(rng) * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= detail::pg_series_term(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += detail::pg_series_term(n, x);
        if (y > s) break;
      }
    }
  }
}

struct IdentityCheck {
  double lhs = 0.0;       // sigmoid(phi)
  double rhs = 0.0;       // Monte-Carlo estimate of E_{PG(1,0)}[exp f(w, phi)]
  double std_error = 0.0;
};

[[nodiscard]] inline IdentityCheck sigmoid_identity_check(double phi, std::size_t n_mc, Rng& rng) {
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double v = std::exp(pg_augmentation_exponent(pg_sample(0.0, rng), phi));
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_mc);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {sigmoid(phi), mean, std::sqrt(var / n)};
}

}  // namespace nhgps
