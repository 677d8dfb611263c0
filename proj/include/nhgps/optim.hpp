#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "nhgps/error.hpp"

namespace nhgps {

// Adam with the usual defaults, ascending an objective in log-parameter space
// so positive parameters stay positive.
struct AdamAscent {
  double step = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  std::size_t t = 0;

  // grad_log[i] = d objective / d log(param[i]); returns updated raw parameters.
  // A non-finite gradient skips the step.
  [[nodiscard]] std::vector<double> ascend(std::span<const double> params, std::span<const double> grad_log) {
    require(params.size() == grad_log.size(), "adam: parameter/gradient size mismatch");
    std::vector<double> out(params.begin(), params.end());
    for (double g : grad_log) {
      if (!std::isfinite(g)) {
        warn("skipping hyperparameter step with non-finite gradient");
        return out;
      }
    }
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
      t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad_log[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad_log[i] * grad_log[i];
      const double delta = step * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      out[i] = params[i] * std::exp(delta);
    }
    return out;
  }
};

// Chain rule to log parameters: d f / d log p = p * d f / d p.
[[nodiscard]] inline std::vector<double> to_log_gradient(std::span<const double> params, std::span<const double> grad) {
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out[i] = params[i] * grad[i];
  return out;
}

}  // namespace nhgps
