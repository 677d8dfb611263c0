#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/features.hpp"
#include "nhgps/model.hpp"
#include "nhgps/polya_gamma.hpp"

namespace nhgps {

// Piecewise-linear function on a sorted grid. Below the grid it holds the first
// value; past the end it either holds the last value or drops to zero.
struct GridFunction {
  std::vector<double> grid;
  std::vector<double> values;
  bool zero_beyond = false;

  [[nodiscard]] double operator()(double x) const {
    if (zero_beyond && x > grid.back()) return 0.0;
    return linear_interpolate(grid, values, x);
  }
};

[[nodiscard]] inline std::vector<double> uniform_grid(double lo, double hi, double max_spacing) {
  require(hi > lo && max_spacing > 0.0, "uniform_grid: empty interval or spacing");
  const auto cells = static_cast<std::size_t>(std::ceil((hi - lo) / max_spacing - 1e-9));
  std::vector<double> g(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cells);
  g.back() = hi;
  return g;
}

// Spacing rule for truth grids: fine enough for linear interpolation of an RBF draw.
[[nodiscard]] inline double truth_grid_spacing(const RbfParams& p, double window) {
  return std::min(p.lengthscale / 5.0, window / 2000.0);
}

// Joint zero-mean Gaussian draw with RBF covariance at the grid points, using
// the exact spectral expansion so any grid size costs O(n Q).
[[nodiscard]] inline Eigen::VectorXd draw_gp_function(const RbfParams& kernel, std::span<const double> grid,
                                                      Rng& rng) {
  kernel.validate();
  if (grid.empty()) return {};
  require(std::is_sorted(grid.begin(), grid.end()), "draw_gp_function: grid must be sorted");
  const double lo = grid.front();
  std::vector<double> shifted(grid.begin(), grid.end());
  for (double& x : shifted) x -= lo;
  const RbfExpansion expansion(kernel, shifted.back());
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd beta(expansion.size());
  for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = norm(rng);
  return expansion.design(shifted) * beta;
}

struct MemoryTruth {
  GridFunction shape;
  DecayParam decay;
};

// Sampled generative process: per-dimension bound and background, per-pair memory.
struct GroundTruth {
  double window = 1.0;
  std::vector<double> lambda;
  std::vector<GridFunction> background;
  std::vector<std::vector<std::optional<MemoryTruth>>> memory;  // [target][source]
  MultivariateModel model;
  std::uint64_t seed = 0;

  [[nodiscard]] int dims() const { return static_cast<int>(lambda.size()); }

  // phi^r(t) with memory from events of `events` strictly before t.
  [[nodiscard]] double phi(int r, double t, const EventSequence& events) const {
    const auto ri = static_cast<std::size_t>(r);
    double acc = background[ri](t);
    for (std::size_t i = 0; i < events.size() && events.times[i] < t; ++i) {
      const auto& m = memory[ri][static_cast<std::size_t>(events.type_of(i))];
      if (!m) continue;
      const double u = t - events.times[i];
      acc += m->shape(u) * std::exp(-m->decay.rate * u);
    }
    return acc;
  }

  [[nodiscard]] std::vector<double> intensity(int r, std::span<const double> query,
                                              const EventSequence& events) const {
    std::vector<double> out(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
      out[i] = lambda[static_cast<std::size_t>(r)] * sigmoid(phi(r, query[i], events));
    }
    return out;
  }
};

[[nodiscard]] inline GroundTruth draw_ground_truth(const MultivariateModel& model, std::vector<double> lambda,
                                                   double window, std::uint64_t seed) {
  model.validate();
  require(std::isfinite(window) && window > 0.0, "simulation window T must be positive");
  require(lambda.size() == static_cast<std::size_t>(model.dims), "need one intensity bound per dimension");
  for (double l : lambda) require(std::isfinite(l) && l > 0.0, "intensity bound lambda must be positive");
  Rng rng(seed);
  GroundTruth gt;
  gt.window = window;
  gt.lambda = std::move(lambda);
  gt.model = model;
  gt.seed = seed;
  const auto dims = static_cast<std::size_t>(model.dims);
  gt.memory.resize(dims);
  for (std::size_t r = 0; r < dims; ++r) {
    GridFunction s;
    s.grid = uniform_grid(0.0, window, truth_grid_spacing(model.background[r], window));
    const Eigen::VectorXd v = draw_gp_function(model.background[r], s.grid, rng);
    s.values.assign(v.data(), v.data() + v.size());
    gt.background.push_back(std::move(s));
  }
  for (std::size_t r = 0; r < dims; ++r) {
    gt.memory[r].resize(dims);
    for (std::size_t m = 0; m < dims; ++m) {
      const auto& term = model.coupling[r][m];
      if (!term) continue;
      MemoryTruth mt;
      mt.decay = term->decay;
      mt.shape.zero_beyond = true;
      mt.shape.grid = uniform_grid(0.0, window, truth_grid_spacing(term->shape, window));
      const Eigen::VectorXd v = draw_gp_function(term->shape, mt.shape.grid, rng);
      mt.shape.values.assign(v.data(), v.data() + v.size());
      gt.memory[r][m] = std::move(mt);
    }
  }
  return gt;
}

[[nodiscard]] inline GroundTruth draw_ground_truth(const ModelHyper& hyper, double lambda, double window,
                                                   std::uint64_t seed) {
  return draw_ground_truth(MultivariateModel::from(hyper), {lambda}, window, seed);
}

struct Candidate {
  double time = 0.0;
  double uniform = 0.0;  // acceptance draw
  int type = 0;
};

// J_r ~ Poisson(bound_r (end - start)) uniform candidates per dimension, in time order.
[[nodiscard]] inline std::vector<Candidate> draw_candidates(std::span<const double> bound, double start, double end,
                                                            Rng& rng) {
  std::vector<Candidate> c;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t r = 0; r < bound.size(); ++r) {
    std::poisson_distribution<long> pois(bound[r] * (end - start));
    const long j = bound[r] > 0.0 ? pois(rng) : 0;
    for (long i = 0; i < j; ++i) {
      Candidate k;
      k.time = start + (end - start) * unif(rng);
      k.uniform = unif(rng);
      k.type = static_cast<int>(r);
      c.push_back(k);
    }
  }
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    return a.time < b.time || (a.time == b.time && a.type < b.type);
  });
  return c;
}

// Chronological thinning: candidate j is kept iff u_j < p(j, accepted so far),
// where `accept_prob` only sees events accepted before candidate j.
template <class AcceptProb>
EventSequence thin_candidates(const std::vector<Candidate>& cands, double window, int dims, AcceptProb&& accept_prob,
                              EventSequence prefix = {}) {
  EventSequence ev = std::move(prefix);
  ev.window = window;
  ev.type_count = dims;
  for (const auto& c : cands) {
    if (c.uniform < accept_prob(c, ev)) {
      ev.times.push_back(c.time);
      if (dims > 1) ev.types.push_back(c.type);
    }
  }
  return ev;
}

[[nodiscard]] inline EventSequence thinning_simulate(const GroundTruth& gt, Rng& rng) {
  const auto cands = draw_candidates(gt.lambda, 0.0, gt.window, rng);
  return thin_candidates(cands, gt.window, gt.dims(), [&](const Candidate& c, const EventSequence& ev) {
    return sigmoid(gt.phi(c.type, c.time, ev));
  });
}

}  // namespace nhgps
