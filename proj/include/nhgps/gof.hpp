#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/model.hpp"
#include "nhgps/numeric.hpp"
#include "nhgps/predictive.hpp"

namespace nhgps {

// Intensity of one dimension along a fixed realized history.
using PathIntensity = std::function<std::vector<double>(std::span<const double>)>;

[[nodiscard]] inline PathIntensity path_intensity(const Predictive& pred, EventSequence ev) {
  return [&pred, ev = std::move(ev)](std::span<const double> q) { return pred.intensity(q, ev); };
}

struct RescaledTimes {
  std::vector<double> tau;  // compensator increments between consecutive events, from t = 0
  double tail = 0.0;        // increment from the last event to the window end, not tested
};

// tau_i = int_{t_{i-1}}^{t_i} Lambda(u) du by composite trapezoid. Each gap gets at least
// `resolution` points per unit of expected count, using N / T as the scale of Lambda.
// Left ends are nudged past the previous event so the intensity includes its jump.
[[nodiscard]] inline RescaledTimes rescale(std::span<const double> events, const PathIntensity& rate, double window,
                                           double resolution = 50.0) {
  require(resolution > 0.0, "rescale resolution must be positive");
  require(std::is_sorted(events.begin(), events.end()), "rescale needs sorted events");
  require(events.empty() || events.back() <= window, "events exceed the window");
  const double scale = std::max(1.0, static_cast<double>(events.size())) / window;
  auto integrate = [&](double a, double b, bool after_event) {
    if (b <= a) return 0.0;
    const auto steps = static_cast<std::size_t>(std::ceil(resolution * scale * (b - a))) + 8;
    std::vector<double> pts(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) pts[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(steps);
    pts.back() = b;
    if (after_event) pts.front() = a + std::min(1e-9 * window, 1e-6 * (b - a));
    const auto v = rate(pts);
    double acc = 0.0;
    for (std::size_t i = 0; i <= steps; ++i) {
      if (!(v[i] > 0.0)) {
        throw NumericalError("non-positive intensity " + std::to_string(v[i]) + " at t = " + std::to_string(pts[i]));
      }
      const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
      acc += w * v[i];
    }
    return acc * (b - a) / static_cast<double>(steps);
  };
  RescaledTimes out;
  double prev = 0.0;
  bool after_event = false;
  for (double t : events) {
    out.tau.push_back(integrate(prev, t, after_event));
    prev = t;
    after_event = true;
  }
  out.tail = integrate(prev, window, after_event);
  return out;
}

[[nodiscard]] inline std::vector<double> to_uniform(std::span<const double> tau) {
  std::vector<double> z(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) z[i] = -std::expm1(-tau[i]);
  return z;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// One-sample KS against Uniform(0, 1) with the asymptotic Kolmogorov p-value.
[[nodiscard]] inline KsResult ks_uniform_test(std::span<const double> z) {
  require(z.size() >= 5, "KS test needs at least 5 values, got " + std::to_string(z.size()));
  std::vector<double> s(z.begin(), z.end());
  for (double v : s) require(v >= 0.0 && v <= 1.0, "KS input " + std::to_string(v) + " outside [0, 1]");
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double k = static_cast<double>(i);
    d = std::max({d, (k + 1.0) / n - s[i], s[i] - k / n});
  }
  return {d, kolmogorov_survival(std::sqrt(n) * d)};
}

struct QqPoint {
  double theoretical = 0.0;
  double empirical = 0.0;
};

struct QqData {
  std::vector<QqPoint> points;
  double band = 0.0;  // 95% half-width, 1.36 / sqrt(n)
};

[[nodiscard]] inline QqData qq_data(std::span<const double> z) {
  require(z.size() >= 2, "QQ data needs at least 2 values");
  std::vector<double> s(z.begin(), z.end());
  std::sort(s.begin(), s.end());
  QqData q;
  const double n = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) q.points.push_back({(static_cast<double>(i) + 0.5) / n, s[i]});
  q.band = 1.36 / std::sqrt(n);
  return q;
}

struct GofReport {
  std::vector<double> tau;
  std::vector<double> z;
  double statistic = 0.0;
  double p_value = 1.0;
  QqData qq;
};

[[nodiscard]] inline GofReport gof_report(std::vector<double> tau) {
  GofReport r;
  r.z = to_uniform(tau);
  r.tau = std::move(tau);
  const auto ks = ks_uniform_test(r.z);
  r.statistic = ks.statistic;
  r.p_value = ks.p_value;
  r.qq = qq_data(r.z);
  return r;
}

[[nodiscard]] inline GofReport gof_report(std::span<const double> events, const PathIntensity& rate, double window,
                                          double resolution = 50.0) {
  return gof_report(rescale(events, rate, window, resolution).tau);
}

// One report per event type; dimensions with fewer than 5 events are skipped (nullopt).
[[nodiscard]] inline std::vector<std::optional<GofReport>> multivariate_gof(const EventSequence& ev,
                                                                            const std::vector<PathIntensity>& rates,
                                                                            double resolution = 50.0) {
  require(rates.size() == static_cast<std::size_t>(std::max(1, ev.type_count)),
          "multivariate GOF needs one intensity per event type");
  std::vector<std::optional<GofReport>> out;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    const auto times = ev.times_of_type(static_cast<int>(r));
    if (times.size() < 5) {
      notice("GOF skipped for dimension " + std::to_string(r) + ": only " + std::to_string(times.size()) + " events");
      out.emplace_back(std::nullopt);
      continue;
    }
    out.emplace_back(gof_report(times, rates[r], ev.window, resolution));
  }
  return out;
}

// Pools rescaled increments of several recordings into one KS sample.
[[nodiscard]] inline GofReport pooled_gof(const std::vector<GofReport>& reports) {
  std::vector<double> tau;
  for (const auto& r : reports) tau.insert(tau.end(), r.tau.begin(), r.tau.end());
  return gof_report(std::move(tau));
}

}  // namespace nhgps
