#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/features.hpp"
#include "nhgps/kernels.hpp"
#include "nhgps/model.hpp"
#include "nhgps/optim.hpp"
#include "nhgps/polya_gamma.hpp"
#include "nhgps/simulate.hpp"
#include "nhgps/stats.hpp"

namespace nhgps {

struct GibbsConfig {
  std::size_t iterations = 5000;
  std::optional<std::size_t> burn_in;  // default: half the iterations
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  bool learn_hyper = false;
  std::size_t hyper_every = 2;
  std::size_t grad_average_window = 1;
  double step_size = 1e-2;
  std::size_t grid_points = 200;
  std::size_t max_snapshots = 250;
  double horizon = 0.0;  // prediction range of the stored draws; 0 means the window

  [[nodiscard]] std::size_t effective_burn_in() const { return burn_in.value_or(iterations / 2); }

  void validate() const {
    require(effective_burn_in() <= iterations, "burn_in must not exceed iterations");
    require(thin >= 1, "thin must be at least 1");
    require(hyper_every >= 1 && grad_average_window >= 1, "hyper schedule values must be positive");
    require(step_size > 0.0, "step_size must be positive");
    require(grid_points >= 2, "grid_points must be at least 2");
    require(max_snapshots >= 1, "max_snapshots must be positive");
    require(horizon >= 0.0, "horizon must be non-negative");
  }
};

// One augmented-posterior sample. phi and marks hold the N observed points first,
// then the M latent points; beta are the basis coefficients of the current draw of phi.
struct GibbsState {
  double lambda = 1.0;
  std::vector<double> latent;
  Eigen::MatrixXd latent_design;
  Eigen::VectorXd phi;
  Eigen::VectorXd marks;
  Eigen::VectorXd beta;
  std::size_t iteration = 0;

  [[nodiscard]] std::size_t latent_count() const { return latent.size(); }
};

struct LatentStep {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
};

class GibbsSampler {
 public:
  GibbsSampler(std::vector<double> observed, double window, const HawkesKernel& prior, GammaPrior lambda_prior,
               double horizon = 0.0)
      : observed_(std::move(observed)),
        window_(window),
        lambda_prior_(lambda_prior),
        basis_(prior, horizon > 0.0 ? std::max(horizon, window) : window) {
    lambda_prior_.validate();
    require(std::is_sorted(observed_.begin(), observed_.end()), "observed events must be sorted");
    observed_design_ = basis_.design(observed_);
  }

  [[nodiscard]] const std::vector<double>& observed() const { return observed_; }
  [[nodiscard]] double window() const { return window_; }
  [[nodiscard]] const GammaPrior& lambda_prior() const { return lambda_prior_; }
  [[nodiscard]] const HawkesKernel& kernel() const { return basis_.kernel(); }
  [[nodiscard]] const PhiBasis& basis() const { return basis_; }
  [[nodiscard]] const Eigen::MatrixXd& observed_design() const { return observed_design_; }

  // New kernel parameters; the latent design rows of `state` are rebuilt to match.
  void set_kernel(const HawkesKernel& kernel, GibbsState* state = nullptr) {
    basis_ = PhiBasis(kernel, basis_.horizon());
    observed_design_ = basis_.design(observed_);
    if (state) state->latent_design = basis_.design(state->latent);
  }

  void set_observed(std::vector<double> observed) {
    require(std::is_sorted(observed.begin(), observed.end()), "observed events must be sorted");
    observed_ = std::move(observed);
    observed_design_ = basis_.design(observed_);
  }

  // lambda at its prior mean, M ~ Poisson(lambda T / 2) uniform latent times, phi from the prior.
  [[nodiscard]] GibbsState initial_state(Rng& rng) const {
    GibbsState s;
    s.lambda = lambda_prior_.shape / lambda_prior_.rate;
    std::poisson_distribution<long> pois(0.5 * s.lambda * window_);
    std::uniform_real_distribution<double> unif(0.0, window_);
    const long m = pois(rng);
    for (long i = 0; i < m; ++i) s.latent.push_back(unif(rng));
    std::sort(s.latent.begin(), s.latent.end());
    s.latent_design = basis_.design(s.latent);
    std::normal_distribution<double> norm(0.0, 1.0);
    s.beta.resize(basis_.size());
    for (Eigen::Index i = 0; i < s.beta.size(); ++i) s.beta(i) = norm(rng);
    refresh_phi(s);
    s.marks.resize(s.phi.size());
    for (Eigen::Index i = 0; i < s.phi.size(); ++i) s.marks(i) = pg_mean(s.phi(i));
    return s;
  }

  // State at a given (lambda, beta, latent set); marks are placeholders until the next PG step.
  [[nodiscard]] GibbsState state_from(double lambda, Eigen::VectorXd beta, std::vector<double> latent) const {
    require(beta.size() == basis_.size(), "state_from: beta must match the basis size");
    GibbsState s;
    s.lambda = lambda;
    std::sort(latent.begin(), latent.end());
    s.latent = std::move(latent);
    s.latent_design = basis_.design(s.latent);
    s.beta = std::move(beta);
    refresh_phi(s);
    s.marks = Eigen::VectorXd::Constant(s.phi.size(), 0.25);
    return s;
  }

  // w ~ PG(1, |phi|) at every observed and latent point.
  void sample_pg_marks(GibbsState& s, Rng& rng) const {
    s.marks.resize(s.phi.size());
    for (Eigen::Index i = 0; i < s.phi.size(); ++i) s.marks(i) = pg_sample(s.phi(i), rng);
  }

  // lambda ~ Gamma(alpha0 + N + M, beta0 + T).
  void sample_lambda(GibbsState& s, Rng& rng) const {
    const double shape = lambda_prior_.shape + static_cast<double>(observed_.size() + s.latent.size());
    std::gamma_distribution<double> gamma(shape, 1.0 / (lambda_prior_.rate + window_));
    s.lambda = gamma(rng);
  }

  // Joint draw of phi given the marks: Gaussian pseudo-observations +1/(2w) at
  // observed points and -1/(2w) at latent points. In weight space the posterior
  // of beta has precision I + X' W X and mean (I + X' W X)^-1 X' kappa, kappa = +-1/2.
  void sample_phi(GibbsState& s, Rng& rng) const {
    const auto n = static_cast<Eigen::Index>(observed_.size());
    const auto m = static_cast<Eigen::Index>(s.latent.size());
    require(s.marks.size() == n + m, "sample_phi: marks must cover observed and latent points");
    const Eigen::Index d = basis_.size();
    Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    if (n > 0) {
      const Eigen::VectorXd w = s.marks.head(n);
      const Eigen::MatrixXd xw = w.cwiseSqrt().asDiagonal() * observed_design_;
      prec.selfadjointView<Eigen::Lower>().rankUpdate(xw.transpose());
      rhs += 0.5 * observed_design_.colwise().sum().transpose();
    }
    if (m > 0) {
      const Eigen::VectorXd w = s.marks.tail(m);
      const Eigen::MatrixXd xw = w.cwiseSqrt().asDiagonal() * s.latent_design;
      prec.selfadjointView<Eigen::Lower>().rankUpdate(xw.transpose());
      rhs -= 0.5 * s.latent_design.colwise().sum().transpose();
    }
    const Eigen::LLT<Eigen::MatrixXd> chol(prec.selfadjointView<Eigen::Lower>());
    if (chol.info() != Eigen::Success) throw NumericalError("sample_phi: posterior precision not positive definite");
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = norm(rng);
    s.beta = chol.solve(rhs) + chol.matrixU().solve(z);
    refresh_phi(s);
  }

  // Replaces the latent events wholesale: J ~ Poisson(lambda T) uniform candidates,
  // phi there from the current joint draw (so conditioned on phi at the observed and
  // previous latent points), candidate kept iff u < sigmoid(-phi).
  LatentStep sample_latent_events(GibbsState& s, Rng& rng) const {
    const double bound = s.lambda;
    const auto cands = draw_candidates(std::span<const double>(&bound, 1), 0.0, window_, rng);
    std::vector<double> times(cands.size());
    for (std::size_t j = 0; j < cands.size(); ++j) times[j] = cands[j].time;
    const Eigen::MatrixXd x = basis_.design(times);
    const Eigen::VectorXd phi_c = x * s.beta;
    std::vector<Eigen::Index> keep;
    for (std::size_t j = 0; j < cands.size(); ++j) {
      if (cands[j].uniform < sigmoid(-phi_c(static_cast<Eigen::Index>(j)))) keep.push_back(static_cast<Eigen::Index>(j));
    }
    const auto n = static_cast<Eigen::Index>(observed_.size());
    const auto m = static_cast<Eigen::Index>(keep.size());
    s.latent.resize(keep.size());
    s.latent_design.resize(m, basis_.size());
    Eigen::VectorXd phi(n + m), marks(n + m);
    phi.head(n) = s.phi.head(n);
    marks.head(n) = s.marks.head(n);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Eigen::Index j = keep[static_cast<std::size_t>(k)];
      s.latent[static_cast<std::size_t>(k)] = times[static_cast<std::size_t>(j)];
      s.latent_design.row(k) = x.row(j);
      phi(n + k) = phi_c(j);
      marks(n + k) = pg_sample(phi_c(j), rng);
    }
    s.phi = std::move(phi);
    s.marks = std::move(marks);
    return {cands.size(), keep.size()};
  }

  // One sweep in the order PG marks, lambda, phi, latent events.
  LatentStep sweep(GibbsState& s, Rng& rng) const {
    sample_pg_marks(s, rng);
    sample_lambda(s, rng);
    sample_phi(s, rng);
    const auto step = sample_latent_events(s, rng);
    ++s.iteration;
    return step;
  }

  // d log N(phi_{N+M}; 0, K) / d log(theta) for every kernel parameter.
  [[nodiscard]] std::vector<double> prior_log_gradient(const GibbsState& s) const {
    std::vector<double> pts = observed_;
    pts.insert(pts.end(), s.latent.begin(), s.latent.end());
    const auto& k = kernel();
    const auto grads = k.gradients(pts, pts);
    const auto g = log_gp_prior_grad(s.phi, k.gram(pts), grads);
    return to_log_gradient(k.parameters(), g);
  }

  // phi at the given times from the current draw.
  [[nodiscard]] Eigen::VectorXd phi_at(const GibbsState& s, std::span<const double> times) const {
    return basis_.design(times) * s.beta;
  }

 private:
  void refresh_phi(GibbsState& s) const {
    const auto n = static_cast<Eigen::Index>(observed_.size());
    const auto m = static_cast<Eigen::Index>(s.latent.size());
    s.phi.resize(n + m);
    if (n > 0) s.phi.head(n) = observed_design_ * s.beta;
    if (m > 0) s.phi.tail(m) = s.latent_design * s.beta;
  }

  std::vector<double> observed_;
  double window_;
  GammaPrior lambda_prior_;
  PhiBasis basis_;
  Eigen::MatrixXd observed_design_;
};

struct ChainSnapshot {
  double lambda = 0.0;
  Eigen::VectorXd beta;
  std::size_t kernel_index = 0;  // into ChainOutput::kernel_trace
};

struct ChainOutput {
  std::vector<double> grid;
  std::vector<double> lambda;
  std::vector<double> latent_count;
  Eigen::MatrixXd phi_grid;  // retained samples x grid
  std::vector<double> lambda_autocorr;
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  std::vector<std::vector<double>> kernel_trace;  // kernel parameters, initial first
  std::vector<ChainSnapshot> snapshots;
  std::size_t iterations = 0, burn_in = 0, thin = 1;
  std::uint64_t seed = 0;
  double horizon = 0.0;
  double seconds = 0.0;

  [[nodiscard]] std::size_t sample_count() const { return lambda.size(); }
};

// Runs the sampler; `sampler` ends holding the last kernel if hyperparameters are learned.
[[nodiscard]] inline ChainOutput run_chain(GibbsSampler& sampler, const GibbsConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  ChainOutput out;
  out.iterations = cfg.iterations;
  out.burn_in = cfg.effective_burn_in();
  out.thin = cfg.thin;
  out.seed = cfg.seed;
  out.horizon = sampler.basis().horizon();
  const auto grid = trapezoid_grid(0.0, sampler.window(), cfg.grid_points);
  out.grid = grid.points;
  out.kernel_trace.push_back(sampler.kernel().parameters());

  const std::size_t retained = cfg.iterations > out.burn_in ? (cfg.iterations - out.burn_in) / cfg.thin : 0;
  const std::size_t stride = std::max<std::size_t>(1, (retained + cfg.max_snapshots - 1) / cfg.max_snapshots);
  out.phi_grid.resize(static_cast<Eigen::Index>(retained), static_cast<Eigen::Index>(grid.size()));
  if (cfg.iterations == 0) return out;

  Eigen::MatrixXd grid_design = sampler.basis().design(out.grid);
  GibbsState state = sampler.initial_state(rng);
  AdamAscent adam;
  adam.step = cfg.step_size;
  std::deque<std::vector<double>> recent;
  std::size_t kept = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto step = sampler.sweep(state, rng);
    out.proposed += step.proposed;
    out.accepted += step.accepted;
    if (cfg.learn_hyper && (it + 1) % cfg.hyper_every == 0) {
      recent.push_back(sampler.prior_log_gradient(state));
      if (recent.size() > cfg.grad_average_window) recent.pop_front();
      std::vector<double> avg(recent.front().size(), 0.0);
      for (const auto& g : recent)
        for (std::size_t i = 0; i < g.size(); ++i) avg[i] += g[i] / static_cast<double>(recent.size());
      const auto params = adam.ascend(sampler.kernel().parameters(), avg);
      if (params != sampler.kernel().parameters()) {
        sampler.set_kernel(sampler.kernel().with_parameters(params), &state);
        grid_design = sampler.basis().design(out.grid);
        out.kernel_trace.push_back(params);
      }
    }
    if (it < out.burn_in || (it - out.burn_in) % cfg.thin != 0 || kept >= retained) continue;
    out.lambda.push_back(state.lambda);
    out.latent_count.push_back(static_cast<double>(state.latent_count()));
    out.phi_grid.row(static_cast<Eigen::Index>(kept)) = (grid_design * state.beta).transpose();
    if (kept % stride == 0) out.snapshots.push_back({state.lambda, state.beta, out.kernel_trace.size() - 1});
    ++kept;
  }
  out.phi_grid.conservativeResize(static_cast<Eigen::Index>(kept), Eigen::NoChange);
  out.lambda_autocorr = autocorrelation(out.lambda, out.lambda.size() / 2);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// Fresh (observed, latent) split given lambda and the function draw beta: candidates
// at rate lambda become observed with probability sigmoid(phi), latent otherwise.
// With the kernel history held fixed this is an exact draw of the augmented data.
[[nodiscard]] inline std::pair<std::vector<double>, std::vector<double>> resample_augmented_data(
    const GibbsSampler& sampler, double lambda, const Eigen::VectorXd& beta, Rng& rng) {
  const auto cands = draw_candidates(std::span<const double>(&lambda, 1), 0.0, sampler.window(), rng);
  std::vector<double> times(cands.size());
  for (std::size_t j = 0; j < cands.size(); ++j) times[j] = cands[j].time;
  const Eigen::VectorXd phi = sampler.basis().design(times) * beta;
  std::vector<double> observed, latent;
  for (std::size_t j = 0; j < cands.size(); ++j) {
    (cands[j].uniform < sigmoid(phi(static_cast<Eigen::Index>(j))) ? observed : latent).push_back(times[j]);
  }
  return {observed, latent};
}

}  // namespace nhgps
