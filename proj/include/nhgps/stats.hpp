#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/numeric.hpp"

namespace nhgps {

[[nodiscard]] inline double mean_of(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

[[nodiscard]] inline double variance_of(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

// Linear-interpolation quantile (type 7).
[[nodiscard]] inline double quantile(std::vector<double> x, double q) {
  require(!x.empty(), "quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

// Sample autocorrelation for lags 0..max_lag.
[[nodiscard]] inline std::vector<double> autocorrelation(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  max_lag = n == 0 ? 0 : std::min(max_lag, n - 1);
  std::vector<double> out;
  if (n == 0) return out;
  const double m = mean_of(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  out.reserve(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double c = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) c += (x[i] - m) * (x[i + k] - m);
    out.push_back(c0 > 0.0 ? c / c0 : (k == 0 ? 1.0 : 0.0));
  }
  return out;
}

struct RankTest {
  double statistic = 0.0;  // U of the first sample
  double p_value = 1.0;    // two-sided, normal approximation with tie correction
};

[[nodiscard]] inline RankTest mann_whitney(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), "rank test needs two non-empty samples");
  struct Item {
    double v;
    int group;
  };
  std::vector<Item> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.push_back({v, 0});
  for (double v : b) all.push_back({v, 1});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
  double rank_sum = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg = 0.5 * static_cast<double>(i + j + 1);  // ranks i+1..j
    const double ties = static_cast<double>(j - i);
    tie_term += ties * ties * ties - ties;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].group == 0) rank_sum += avg;
    i = j;
  }
  RankTest out;
  out.statistic = rank_sum - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return out;
  const double z = (std::abs(out.statistic - mu) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, 2.0 * normal_cdf(-std::max(z, 0.0)));
  return out;
}

}  // namespace nhgps
