#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/kernels.hpp"
#include "nhgps/numeric.hpp"

namespace nhgps {

struct GammaPrior {
  double shape = 2.5;
  double rate = 0.007;

  void validate() const {
    require(std::isfinite(shape) && shape > 0.0, "lambda prior shape must be positive");
    require(std::isfinite(rate) && rate > 0.0, "lambda prior rate must be positive");
  }
  friend bool operator==(const GammaPrior&, const GammaPrior&) = default;
};

struct ModelHyper {
  RbfParams background{1.0, 0.5};
  RbfParams memory{1.0, 0.07};
  DecayParam decay{20.0};
  GammaPrior lambda_prior;

  void validate() const {
    background.validate("background kernel");
    memory.validate("memory kernel");
    decay.validate("decay");
    lambda_prior.validate();
  }

  [[nodiscard]] HawkesKernel kernel(std::vector<double> history, double window) const {
    return HawkesKernel::univariate(background, memory, decay, std::move(history), window);
  }

  // Kernel parameters in the order a_s, sigma_s, a_g, sigma_g, alpha.
  [[nodiscard]] std::vector<double> kernel_parameters() const {
    return {background.amplitude, background.lengthscale, memory.amplitude, memory.lengthscale, decay.rate};
  }

  [[nodiscard]] ModelHyper with_kernel_parameters(std::span<const double> p) const {
    require(p.size() == 5, "expected five kernel parameters");
    ModelHyper h = *this;
    h.background = {p[0], p[1]};
    h.memory = {p[2], p[3]};
    h.decay = {p[4]};
    h.validate();
    return h;
  }

  friend bool operator==(const ModelHyper&, const ModelHyper&) = default;
};

// Sorted event times on [0, window], optionally labelled with types 0..R-1.
struct EventSequence {
  std::vector<double> times;
  std::vector<int> types;  // empty when unlabelled
  double window = 1.0;
  int type_count = 1;

  // Sorts, validates and separates coincident times by 1e-9 * window.
  static EventSequence make(std::vector<double> times, double window, std::vector<int> types = {},
                            int type_count = 0) {
    require(std::isfinite(window) && window > 0.0, "observation window T must be positive");
    require(types.empty() || types.size() == times.size(), "type labels must match event count");
    EventSequence ev;
    ev.window = window;
    if (types.empty()) {
      ev.type_count = 1;
    } else {
      const int seen = types.empty() ? 0 : *std::max_element(types.begin(), types.end()) + 1;
      ev.type_count = type_count > 0 ? type_count : seen;
      for (int r : types) require(r >= 0 && r < ev.type_count, "event type " + std::to_string(r) + " out of range");
    }
    for (double t : times) {
      require(std::isfinite(t), "event times must be finite");
      require(t >= 0.0, "negative event time " + std::to_string(t));
      require(t <= window, "event time " + std::to_string(t) + " exceeds window " + std::to_string(window));
    }
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    ev.times.reserve(times.size());
    for (std::size_t i : order) {
      ev.times.push_back(times[i]);
      if (!types.empty()) ev.types.push_back(types[i]);
    }
    const double nudge = 1e-9 * window;
    std::size_t moved = 0;
    for (std::size_t i = 1; i < ev.times.size(); ++i) {
      if (ev.times[i] <= ev.times[i - 1]) {
        ev.times[i] = ev.times[i - 1] + nudge;
        ++moved;
      }
    }
    if (moved > 0) {
      require(ev.times.back() <= window, "duplicate-time separation pushed an event past the window");
      notice("separated " + std::to_string(moved) + " coincident event time(s) by " + std::to_string(nudge));
    }
    return ev;
  }

  [[nodiscard]] std::size_t size() const { return times.size(); }
  [[nodiscard]] bool labelled() const { return !types.empty(); }
  [[nodiscard]] int type_of(std::size_t i) const { return types.empty() ? 0 : types[i]; }

  [[nodiscard]] std::vector<double> times_of_type(int r) const {
    if (types.empty()) return r == 0 ? times : std::vector<double>{};
    std::vector<double> out;
    for (std::size_t i = 0; i < times.size(); ++i)
      if (types[i] == r) out.push_back(times[i]);
    return out;
  }

  // Prefix of the sequence on the shorter window [0, to].
  [[nodiscard]] EventSequence until(double to) const {
    EventSequence ev;
    ev.window = to;
    ev.type_count = type_count;
    for (std::size_t i = 0; i < times.size() && times[i] <= to; ++i) {
      ev.times.push_back(times[i]);
      if (!types.empty()) ev.types.push_back(types[i]);
    }
    return ev;
  }
};

struct IntensityEvaluation {
  std::vector<double> query;
  std::vector<double> phi;
  std::vector<double> values;
  double lambda = 0.0;
};

using MemoryFunction = std::function<double(double)>;

// phi(t) = s(t) + sum_{t_n < t} g(t - t_n) exp(-alpha (t - t_n)).
[[nodiscard]] inline std::vector<double> phi_eval(std::span<const double> s_values, const MemoryFunction& g,
                                                  std::span<const double> history, const DecayParam& decay,
                                                  std::span<const double> query) {
  require(s_values.size() == query.size(), "phi_eval: one background value per query time");
  std::vector<double> out(query.size());
  for (std::size_t l = 0; l < query.size(); ++l) {
    double acc = s_values[l];
    for (double tn : history) {
      if (!(tn < query[l])) continue;
      const double u = query[l] - tn;
      const double gv = g(u);
      if (!std::isfinite(gv)) throw ValidationError("memory function undefined at lag " + std::to_string(u));
      acc += gv * std::exp(-decay.rate * u);
    }
    out[l] = acc;
  }
  return out;
}

[[nodiscard]] inline std::vector<double> intensity(std::span<const double> phi, double lambda) {
  require(lambda > 0.0, "intensity bound must be positive");
  std::vector<double> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = lambda * sigmoid(phi[i]);
  return out;
}

[[nodiscard]] inline IntensityEvaluation evaluate_intensity(std::vector<double> query, std::vector<double> phi,
                                                            double lambda) {
  IntensityEvaluation e;
  e.values = intensity(phi, lambda);
  e.query = std::move(query);
  e.phi = std::move(phi);
  e.lambda = lambda;
  return e;
}

using IntensityFunction = std::function<double(double)>;

// sum_n log L(t_n) - int_0^T L, the integral by the supplied quadrature.
[[nodiscard]] inline double log_likelihood(std::span<const double> events, const IntensityFunction& rate,
                                           const QuadratureGrid& grid) {
  double acc = 0.0;
  for (double t : events) {
    const double v = rate(t);
    if (!(v > 0.0)) {
      warn("non-positive intensity " + std::to_string(v) + " at event time " + std::to_string(t));
      return -std::numeric_limits<double>::infinity();
    }
    acc += std::log(v);
  }
  for (std::size_t i = 0; i < grid.size(); ++i) acc -= grid.weights[i] * rate(grid.points[i]);
  return acc;
}

// Vectorised variant when the intensity is already tabulated at events and grid.
[[nodiscard]] inline double log_likelihood_tabulated(std::span<const double> at_events,
                                                     std::span<const double> at_grid,
                                                     std::span<const double> weights) {
  double acc = 0.0;
  for (double v : at_events) {
    if (!(v > 0.0)) {
      warn("non-positive intensity at an event time");
      return -std::numeric_limits<double>::infinity();
    }
    acc += std::log(v);
  }
  for (std::size_t i = 0; i < at_grid.size(); ++i) acc -= weights[i] * at_grid[i];
  return acc;
}

// R-dimensional model: target r has its own bound prior and background, and a
// memory term for every source m with nonzero coupling.
struct MultivariateModel {
  int dims = 1;
  std::vector<RbfParams> background;
  std::vector<GammaPrior> lambda_prior;
  std::vector<std::vector<std::optional<MemoryTerm>>> coupling;  // [target][source]

  static MultivariateModel from(const ModelHyper& h) {
    MultivariateModel m;
    m.dims = 1;
    m.background = {h.background};
    m.lambda_prior = {h.lambda_prior};
    m.coupling = {{MemoryTerm{h.memory, h.decay}}};
    return m;
  }

  void validate() const {
    require(dims >= 1, "multivariate model needs at least one dimension");
    const auto r = static_cast<std::size_t>(dims);
    require(background.size() == r && lambda_prior.size() == r && coupling.size() == r,
            "multivariate model: per-dimension parameter lists must have R entries");
    for (std::size_t i = 0; i < r; ++i) {
      background[i].validate("background kernel");
      lambda_prior[i].validate();
      require(coupling[i].size() == r, "multivariate model: coupling grid must be R x R");
      for (const auto& c : coupling[i]) {
        if (!c) continue;
        c->shape.validate("memory kernel");
        c->decay.validate("memory decay");
      }
    }
  }

  [[nodiscard]] std::vector<int> sources(int r) const {
    std::vector<int> out;
    for (int m = 0; m < dims; ++m)
      if (coupling[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)]) out.push_back(m);
    return out;
  }

  // One history list per coupled source, in source order.
  [[nodiscard]] History history_for(int r, const EventSequence& events) const {
    History h;
    for (int m : sources(r)) h.push_back(events.times_of_type(m));
    return h;
  }

  [[nodiscard]] HawkesKernel kernel_for(int r, const EventSequence& events) const {
    std::vector<MemoryTerm> terms;
    for (int m : sources(r)) terms.push_back(*coupling[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)]);
    return HawkesKernel(background[static_cast<std::size_t>(r)], std::move(terms), history_for(r, events),
                        events.window);
  }
};

struct CouplingFunction {
  MemoryFunction shape;
  DecayParam decay;
};

// phi^r(t) = s^r(t) + sum_m sum_{t^m_n < t} g_{r,m}(t - t^m_n) exp(-alpha_{r,m}(t - t^m_n)).
[[nodiscard]] inline std::vector<double> multivariate_phi(int r, const EventSequence& events,
                                                          std::span<const double> s_values,
                                                          const std::vector<std::optional<CouplingFunction>>& pairs,
                                                          std::span<const double> query) {
  require(r >= 0 && r < events.type_count, "multivariate_phi: dimension out of range");
  require(pairs.size() == static_cast<std::size_t>(events.type_count),
          "multivariate_phi: need one (possibly absent) coupling per source type");
  std::vector<double> out(s_values.begin(), s_values.end());
  require(out.size() == query.size(), "multivariate_phi: one background value per query time");
  for (int m = 0; m < events.type_count; ++m) {
    const auto& pair = pairs[static_cast<std::size_t>(m)];
    if (!pair) continue;
    out = phi_eval(out, pair->shape, events.times_of_type(m), pair->decay, query);
  }
  return out;
}

}  // namespace nhgps
