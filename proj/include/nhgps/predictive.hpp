#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/features.hpp"
#include "nhgps/gibbs.hpp"
#include "nhgps/gp.hpp"
#include "nhgps/model.hpp"
#include "nhgps/numeric.hpp"
#include "nhgps/simulate.hpp"

namespace nhgps {

// Which event types feed each memory term of a fitted kernel; -1 takes every event.
struct HistorySpec {
  std::vector<int> sources{0};

  [[nodiscard]] History operator()(const EventSequence& ev) const {
    History h;
    for (int m : sources) h.push_back(m < 0 ? ev.times : ev.times_of_type(m));
    return h;
  }

  static HistorySpec all_events() { return HistorySpec{{-1}}; }
  static HistorySpec for_dimension(const MultivariateModel& model, int r) { return HistorySpec{model.sources(r)}; }
};

// A single posterior function draw, queried at non-decreasing times.
class PhiDraw {
 public:
  virtual ~PhiDraw() = default;
  [[nodiscard]] virtual double lambda() const = 0;
  virtual double phi(double t, const EventSequence& ev) = 0;
};

// Posterior predictive for one target dimension. Query histories come from `ev`,
// so the same object predicts on the training window and on later test windows.
class Predictive {
 public:
  virtual ~Predictive() = default;
  // Upper bound on the plug-in intensity, used as the thinning rate.
  [[nodiscard]] virtual double bound() const = 0;
  [[nodiscard]] virtual double mean_lambda() const = 0;
  [[nodiscard]] virtual PhiMarginals phi(std::span<const double> query, const EventSequence& ev) const = 0;
  // Plug-in intensity: posterior mean of lambda * sigmoid(phi(t)).
  [[nodiscard]] virtual std::vector<double> intensity(std::span<const double> query, const EventSequence& ev) const = 0;
  [[nodiscard]] virtual std::unique_ptr<PhiDraw> draw(Rng& rng) const = 0;
};

// Mixture over retained Gibbs snapshots; each snapshot carries the exact function draw beta.
class ChainPredictive final : public Predictive {
 public:
  ChainPredictive(const HawkesKernel& prior, HistorySpec spec, const ChainOutput& chain) : spec_(std::move(spec)) {
    require(!chain.snapshots.empty(), "chain predictive needs at least one retained snapshot");
    require(prior.memory().size() == spec_.sources.size(), "history spec must list one source per memory term");
    for (const auto& snap : chain.snapshots) {
      auto it = index_.find(snap.kernel_index);
      if (it == index_.end()) {
        const auto params = chain.kernel_trace.at(snap.kernel_index);
        bases_.emplace_back(prior.with_parameters(params), std::max(chain.horizon, prior.window()));
        groups_.emplace_back();
        it = index_.emplace(snap.kernel_index, bases_.size() - 1).first;
      }
      auto& g = groups_[it->second];
      g.lambda.push_back(snap.lambda);
      g.beta.push_back(snap.beta);
    }
    for (auto& g : groups_) {
      g.coef.resize(g.beta.front().size(), static_cast<Eigen::Index>(g.beta.size()));
      for (std::size_t s = 0; s < g.beta.size(); ++s) g.coef.col(static_cast<Eigen::Index>(s)) = g.beta[s];
      for (double l : g.lambda) {
        lambda_max_ = std::max(lambda_max_, l);
        lambda_sum_ += l;
        ++count_;
      }
    }
  }

  [[nodiscard]] double bound() const override { return lambda_max_; }
  [[nodiscard]] double mean_lambda() const override { return lambda_sum_ / static_cast<double>(count_); }
  [[nodiscard]] double horizon() const { return bases_.front().horizon(); }
  [[nodiscard]] std::size_t snapshot_count() const { return count_; }

  [[nodiscard]] PhiMarginals phi(std::span<const double> query, const EventSequence& ev) const override {
    const auto n = static_cast<Eigen::Index>(query.size());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sum_sq = Eigen::VectorXd::Zero(n);
    const History hist = spec_(ev);
    for (std::size_t b = 0; b < bases_.size(); ++b) {
      const Eigen::MatrixXd values = bases_[b].design(query, hist) * groups_[b].coef;
      sum += values.rowwise().sum();
      sum_sq += values.array().square().rowwise().sum().matrix();
    }
    const double c = static_cast<double>(count_);
    PhiMarginals out;
    out.mean = sum / c;
    out.var = (sum_sq / c - out.mean.cwiseAbs2()).cwiseMax(0.0);
    return out;
  }

  [[nodiscard]] std::vector<double> intensity(std::span<const double> query, const EventSequence& ev) const override {
    std::vector<double> out(query.size(), 0.0);
    const History hist = spec_(ev);
    for (std::size_t b = 0; b < bases_.size(); ++b) {
      const Eigen::MatrixXd values = bases_[b].design(query, hist) * groups_[b].coef;
      for (Eigen::Index i = 0; i < values.rows(); ++i)
        for (Eigen::Index s = 0; s < values.cols(); ++s)
          out[static_cast<std::size_t>(i)] += groups_[b].lambda[static_cast<std::size_t>(s)] * sigmoid(values(i, s));
    }
    for (double& v : out) v /= static_cast<double>(count_);
    return out;
  }

  [[nodiscard]] std::unique_ptr<PhiDraw> draw(Rng& rng) const override {
    std::uniform_int_distribution<std::size_t> pick(0, count_ - 1);
    std::size_t k = pick(rng);
    std::size_t b = 0;
    while (k >= groups_[b].lambda.size()) k -= groups_[b++].lambda.size();
    return std::make_unique<SnapshotDraw>(bases_[b], spec_, groups_[b].lambda[k], groups_[b].beta[k]);
  }

 private:
  struct Group {
    std::vector<double> lambda;
    std::vector<Eigen::VectorXd> beta;
    Eigen::MatrixXd coef;  // basis size x snapshots
  };

  class SnapshotDraw final : public PhiDraw {
   public:
    SnapshotDraw(const PhiBasis& basis, const HistorySpec& spec, double lambda, Eigen::VectorXd beta)
        : basis_(basis), spec_(spec), lambda_(lambda), beta_(std::move(beta)) {}
    [[nodiscard]] double lambda() const override { return lambda_; }
    double phi(double t, const EventSequence& ev) override {
      const double q[1] = {t};
      return (basis_.design(q, spec_(ev)) * beta_)(0);
    }

   private:
    const PhiBasis& basis_;
    const HistorySpec& spec_;
    double lambda_;
    Eigen::VectorXd beta_;
  };

  HistorySpec spec_;
  std::vector<PhiBasis> bases_;
  std::vector<Group> groups_;
  std::map<std::size_t, std::size_t> index_;
  double lambda_max_ = 0.0;
  double lambda_sum_ = 0.0;
  std::size_t count_ = 0;
};

// q(lambda) = Gamma(alpha, beta) with the sparse posterior of phi.
class VariationalPredictive final : public Predictive {
 public:
  VariationalPredictive(SparseGp posterior, double alpha, double beta, HistorySpec spec)
      : post_(std::move(posterior)), alpha_(alpha), beta_(beta), spec_(std::move(spec)) {
    require(alpha > 0.0 && beta > 0.0, "variational predictive needs a proper Gamma for lambda");
    require(post_.kernel().memory().size() == spec_.sources.size(),
            "history spec must list one source per memory term");
  }

  [[nodiscard]] const SparseGp& posterior() const { return post_; }
  [[nodiscard]] double alpha() const { return alpha_; }
  [[nodiscard]] double beta() const { return beta_; }
  [[nodiscard]] double bound() const override { return alpha_ / beta_; }
  [[nodiscard]] double mean_lambda() const override { return alpha_ / beta_; }

  [[nodiscard]] PhiMarginals phi(std::span<const double> query, const EventSequence& ev) const override {
    return post_.marginals(query, spec_(ev), query_window(query, ev));
  }

  [[nodiscard]] std::vector<double> intensity(std::span<const double> query, const EventSequence& ev) const override {
    const auto m = phi(query, ev);
    std::vector<double> out(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      out[i] = mean_lambda() * expected_sigmoid(m.mean(k), m.var(k));
    }
    return out;
  }

  [[nodiscard]] std::unique_ptr<PhiDraw> draw(Rng& rng) const override {
    std::gamma_distribution<double> gamma(alpha_, 1.0 / beta_);
    return std::make_unique<SequentialDraw>(*this, gamma(rng), rng);
  }

 private:
  [[nodiscard]] double query_window(std::span<const double> query, const EventSequence& ev) const {
    double w = std::max(ev.window, post_.kernel().window());
    for (double t : query) w = std::max(w, t);
    return w;
  }

  // Joint Gaussian path built one point at a time: each value is drawn from its
  // posterior conditional given the values already returned.
  class SequentialDraw final : public PhiDraw {
   public:
    SequentialDraw(const VariationalPredictive& owner, double lambda, Rng& rng)
        : owner_(owner), lambda_(lambda), rng_(rng) {}
    [[nodiscard]] double lambda() const override { return lambda_; }

    double phi(double t, const EventSequence& ev) override {
      const auto& post = owner_.post_;
      const double q[1] = {t};
      const History hist = owner_.spec_(ev);
      const double window = owner_.query_window(q, ev);
      const HawkesKernel qk = post.kernel().with_window(window);
      const auto marg = post.marginals(q, hist, window);
      const Eigen::VectorXd k_at = qk.cross(post.anchors(), post.kernel().history(), q, hist).col(0);
      const Eigen::VectorXd proj_t = post.prior_factor().solve(k_at);
      const auto n = static_cast<Eigen::Index>(points_.size());
      Eigen::VectorXd l = Eigen::VectorXd::Zero(n);
      if (n > 0) {
        Eigen::VectorXd c = qk.cross(q, hist, points_, hist).row(0).transpose() - proj_.transpose() * k_at;
        if (post.covariance().size() > 0) c += proj_.transpose() * (post.covariance() * proj_t);
        l = chol_.topLeftCorner(n, n).triangularView<Eigen::Lower>().solve(c);
      }
      const double var = marg.var(0);
      const double d = std::sqrt(std::max(var - l.squaredNorm(), 1e-12 * std::max(var, 1.0)));
      std::normal_distribution<double> norm(0.0, 1.0);
      const double xi = norm(rng_);
      const double value = marg.mean(0) + (n > 0 ? l.dot(white_) : 0.0) + d * xi;

      points_.push_back(t);
      proj_.conservativeResize(proj_t.size(), n + 1);
      proj_.col(n) = proj_t;
      chol_.conservativeResize(n + 1, n + 1);
      chol_.row(n).head(n) = l.transpose();
      chol_.col(n).head(n).setZero();
      chol_(n, n) = d;
      white_.conservativeResize(n + 1);
      white_(n) = xi;
      return value;
    }

   private:
    const VariationalPredictive& owner_;
    double lambda_;
    Rng& rng_;
    std::vector<double> points_;
    Eigen::MatrixXd proj_;   // K_c^-1 k_c(t) for every returned point
    Eigen::MatrixXd chol_;   // lower factor of the posterior covariance of returned values
    Eigen::VectorXd white_;  // whitened residuals of returned values
  };

  SparseGp post_;
  double alpha_, beta_;
  HistorySpec spec_;
};

enum class PredictiveMode { plugin, mean_function, function_draw };

[[nodiscard]] inline std::string to_string(PredictiveMode m) {
  switch (m) {
    case PredictiveMode::plugin: return "plugin";
    case PredictiveMode::mean_function: return "mean";
    case PredictiveMode::function_draw: return "draw";
  }
  return "?";
}

[[nodiscard]] inline PredictiveMode parse_predictive_mode(const std::string& s) {
  if (s == "plugin") return PredictiveMode::plugin;
  if (s == "mean") return PredictiveMode::mean_function;
  if (s == "draw") return PredictiveMode::function_draw;
  throw ValidationError("unknown predictive mode '" + s + "' (expected plugin, mean or draw)");
}

// Continues `prefix` on (start, end] by thinning, one predictive per dimension.
// plugin: rate bound, keep with probability Lambda_hat / bound.
// mean_function: lambda = E[lambda], phi = posterior mean.
// function_draw: one posterior draw of (lambda, phi) per call.
[[nodiscard]] inline EventSequence posterior_predictive_simulate(const std::vector<const Predictive*>& dims,
                                                                 double start, double end, EventSequence prefix,
                                                                 PredictiveMode mode, Rng& rng) {
  require(!dims.empty(), "posterior predictive simulation needs at least one dimension");
  require(end > start, "simulation interval must be non-empty");
  const int r_count = static_cast<int>(dims.size());
  std::vector<double> bounds(dims.size());
  std::vector<std::unique_ptr<PhiDraw>> draws;
  for (std::size_t r = 0; r < dims.size(); ++r) {
    switch (mode) {
      case PredictiveMode::plugin: bounds[r] = dims[r]->bound(); break;
      case PredictiveMode::mean_function: bounds[r] = dims[r]->mean_lambda(); break;
      case PredictiveMode::function_draw:
        draws.push_back(dims[r]->draw(rng));
        bounds[r] = draws.back()->lambda();
        break;
    }
  }
  const auto cands = draw_candidates(bounds, start, end, rng);
  return thin_candidates(cands, end, r_count, [&](const Candidate& c, const EventSequence& ev) {
    const auto r = static_cast<std::size_t>(c.type);
    const double q[1] = {c.time};
    switch (mode) {
      case PredictiveMode::plugin: return dims[r]->intensity(q, ev)[0] / bounds[r];
      case PredictiveMode::mean_function: return sigmoid(dims[r]->phi(q, ev).mean(0));
      case PredictiveMode::function_draw: return sigmoid(draws[r]->phi(c.time, ev));
    }
    return 0.0;
  }, std::move(prefix));
}

[[nodiscard]] inline EventSequence posterior_predictive_simulate(const Predictive& pred, double window,
                                                                 PredictiveMode mode, Rng& rng) {
  return posterior_predictive_simulate({&pred}, 0.0, window, EventSequence{{}, {}, window, 1}, mode, rng);
}

// Log-likelihood of the events on (from, to] under the plug-in intensity, conditioning on
// every earlier event of `ev`. `type` picks which events this predictive scores (-1: all).
[[nodiscard]] inline double held_out_log_likelihood(const Predictive& pred, const EventSequence& ev, double from,
                                                    double to, int type = -1, std::size_t grid_count = 2001) {
  require(to > from, "held-out interval must be non-empty");
  std::vector<double> hits;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (ev.times[i] > from && ev.times[i] <= to && (type < 0 || ev.type_of(i) == type)) hits.push_back(ev.times[i]);
  }
  const auto grid = trapezoid_grid(from, to, grid_count);
  const auto on_grid = pred.intensity(grid.points, ev);
  double integral = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) integral += grid.weights[i] * on_grid[i];
  double acc = -integral;
  if (!hits.empty()) {
    for (double v : pred.intensity(hits, ev)) {
      if (!(v > 0.0)) {
        warn("plug-in intensity vanished at a held-out event; log-likelihood is -inf");
        return -std::numeric_limits<double>::infinity();
      }
      acc += std::log(v);
    }
  }
  return acc;
}

}  // namespace nhgps
