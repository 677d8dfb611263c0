#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/gp.hpp"
#include "nhgps/kernels.hpp"
#include "nhgps/model.hpp"
#include "nhgps/numeric.hpp"
#include "nhgps/optim.hpp"
#include "nhgps/polya_gamma.hpp"

#include <boost/math/special_functions/gamma.hpp>

namespace nhgps {

enum class ViFactor { phi, lambda, pg, latent };

[[nodiscard]] inline std::string to_string(ViFactor f) {
  switch (f) {
    case ViFactor::phi: return "phi";
    case ViFactor::lambda: return "lambda";
    case ViFactor::pg: return "pg";
    case ViFactor::latent: return "latent";
  }
  return "?";
}

[[nodiscard]] inline ViFactor parse_vi_factor(const std::string& s) {
  if (s == "phi") return ViFactor::phi;
  if (s == "lambda") return ViFactor::lambda;
  if (s == "pg") return ViFactor::pg;
  if (s == "latent") return ViFactor::latent;
  throw ValidationError("unknown VI factor '" + s + "' (expected phi, lambda, pg or latent)");
}

struct ViConfig {
  std::size_t inducing_count = 100;
  std::size_t grid_count = 1000;
  std::size_t max_rounds = 200;
  double tol = 1e-6;
  double jitter = kDefaultJitter;
  std::array<ViFactor, 4> order{ViFactor::phi, ViFactor::lambda, ViFactor::pg, ViFactor::latent};
  bool learn_hyper = false;
  double step_size = 1e-2;
  std::uint64_t seed = 0;
  std::vector<double> inducing;  // explicit locations override the uniform grid

  void validate() const {
    require(inducing_count >= 1 || !inducing.empty(), "inducing_count must be positive");
    require(grid_count >= 2, "grid_count must be at least 2");
    require(tol >= 0.0, "tol must be non-negative");
    require(jitter > 0.0, "jitter must be positive");
    require(step_size > 0.0, "step_size must be positive");
    for (std::size_t i = 0; i < order.size(); ++i)
      for (std::size_t j = i + 1; j < order.size(); ++j)
        require(order[i] != order[j], "VI update order must list each factor once");
  }
};

// Data and fixed discretisation for one target process.
struct VariationalProblem {
  std::vector<double> observed;
  double window = 1.0;
  GammaPrior lambda_prior;
  QuadratureGrid grid;
  std::vector<double> inducing;
  std::vector<double> eval_points;  // observed times, then grid points
  Eigen::VectorXd quad;             // 1 at observed times, trapezoid weights on the grid
  double jitter = kDefaultJitter;

  [[nodiscard]] Eigen::Index n_obs() const { return static_cast<Eigen::Index>(observed.size()); }
  [[nodiscard]] Eigen::Index n_grid() const { return static_cast<Eigen::Index>(grid.size()); }
};

[[nodiscard]] inline VariationalProblem make_problem(std::vector<double> observed, double window,
                                                     GammaPrior lambda_prior, const ViConfig& cfg) {
  cfg.validate();
  lambda_prior.validate();
  require(std::is_sorted(observed.begin(), observed.end()), "observed events must be sorted");
  VariationalProblem p;
  p.observed = std::move(observed);
  p.window = window;
  p.lambda_prior = lambda_prior;
  p.grid = trapezoid_grid(0.0, window, cfg.grid_count);
  p.inducing = cfg.inducing.empty() ? interior_grid(0.0, window, cfg.inducing_count) : cfg.inducing;
  p.eval_points = p.observed;
  p.eval_points.insert(p.eval_points.end(), p.grid.points.begin(), p.grid.points.end());
  p.quad.resize(p.n_obs() + p.n_grid());
  p.quad.head(p.n_obs()).setOnes();
  for (Eigen::Index g = 0; g < p.n_grid(); ++g) p.quad(p.n_obs() + g) = p.grid.weights[static_cast<std::size_t>(g)];
  p.jitter = cfg.jitter;
  return p;
}

struct VariationalState {
  explicit VariationalState(HawkesKernel k) : kernel(std::move(k)) {}

  HawkesKernel kernel;
  double alpha = 1.0;  // q(lambda) = Gamma(alpha, beta)
  double beta = 1.0;
  Eigen::VectorXd mu_c;  // q(phi_c) = N(mu_c, sigma_c)
  Eigen::MatrixXd sigma_c;
  Eigen::VectorXd tilt_obs, omega_obs;                  // q(w_n) = PG(1, c_n), <w_n>
  Eigen::VectorXd tilt_grid, omega_grid, latent_rate;  // latent process on the grid
  SparseBasis basis;
  PhiMarginals marg;  // at problem.eval_points
  std::vector<double> elbo_trace;
  std::vector<double> update_trace;
  std::vector<std::vector<double>> kernel_trace;
  std::size_t rounds = 0;
  bool converged = false;

  [[nodiscard]] double mean_lambda() const { return alpha / beta; }
  [[nodiscard]] double mean_log_lambda() const { return digamma(alpha) - std::log(beta); }
  [[nodiscard]] SparseGp posterior() const {
    return SparseGp(kernel, basis.inducing, mu_c, sigma_c, basis.prior.jitter);
  }
};

inline void refresh_marginals(const VariationalProblem&, VariationalState& s) {
  s.marg = basis_marginals(s.basis, whiten(s.basis, s.mu_c, s.sigma_c));
}

// Swaps the prior kernel while holding (mu_c, sigma_c) and the other factors fixed.
inline void set_kernel(const VariationalProblem& p, VariationalState& s, const HawkesKernel& kernel) {
  s.kernel = kernel;
  s.basis = make_sparse_basis(kernel, p.inducing, p.eval_points, p.jitter);
  refresh_marginals(p, s);
}

inline void update_q_latent(const VariationalProblem& p, VariationalState& s);

// mu_c = 0, sigma_c = K_c, tilts 0, (alpha, beta) = (alpha0 + N, beta0 + T), then one latent pass.
[[nodiscard]] inline VariationalState initial_state(const VariationalProblem& p, const HawkesKernel& kernel) {
  VariationalState s(kernel);
  s.basis = make_sparse_basis(kernel, p.inducing, p.eval_points, p.jitter);
  const auto c = static_cast<Eigen::Index>(p.inducing.size());
  s.mu_c = Eigen::VectorXd::Zero(c);
  s.sigma_c = s.basis.prior.lower() * s.basis.prior.lower().transpose();
  refresh_marginals(p, s);
  s.alpha = p.lambda_prior.shape + static_cast<double>(p.observed.size());
  s.beta = p.lambda_prior.rate + p.window;
  s.tilt_obs = Eigen::VectorXd::Zero(p.n_obs());
  s.omega_obs = Eigen::VectorXd::Constant(p.n_obs(), pg_mean(0.0));
  update_q_latent(p, s);
  s.kernel_trace.push_back(kernel.parameters());
  return s;
}

// alpha = alpha0 + N + int Lambda_q2, beta = beta0 + T.
inline void update_q_lambda(const VariationalProblem& p, VariationalState& s) {
  double mass = 0.0;
  for (Eigen::Index g = 0; g < p.n_grid(); ++g) mass += p.quad(p.n_obs() + g) * s.latent_rate(g);
  if (mass < 0.0) {
    warn("negative latent mass " + std::to_string(mass) + " clamped to zero");
    mass = 0.0;
  }
  s.alpha = p.lambda_prior.shape + static_cast<double>(p.observed.size()) + mass;
  s.beta = p.lambda_prior.rate + p.window;
}

// c_n = sqrt(<phi_n^2>) and <w_n> = E PG(1, c_n).
inline void update_q_pg(const VariationalProblem& p, VariationalState& s) {
  const Eigen::Index n = p.n_obs();
  s.tilt_obs.resize(n);
  s.omega_obs.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.tilt_obs(i) = std::sqrt(s.marg.mean(i) * s.marg.mean(i) + s.marg.var(i));
    s.omega_obs(i) = pg_mean(s.tilt_obs(i));
  }
}

// Lambda_q2(t) = exp(<ln lambda>) exp(-<phi>/2) / (2 cosh(c/2)), c = sqrt(<phi^2>).
inline void update_q_latent(const VariationalProblem& p, VariationalState& s) {
  const Eigen::Index n = p.n_obs(), g = p.n_grid();
  const double log_lambda = s.mean_log_lambda();
  s.tilt_grid.resize(g);
  s.omega_grid.resize(g);
  s.latent_rate.resize(g);
  for (Eigen::Index j = 0; j < g; ++j) {
    const double m = s.marg.mean(n + j);
    const double c = std::sqrt(m * m + s.marg.var(n + j));
    s.tilt_grid(j) = c;
    s.omega_grid(j) = pg_mean(c);
    s.latent_rate(j) = std::exp(log_lambda - 0.5 * m - std::numbers::ln2 - log_cosh(0.5 * c));
  }
}

// Weights of the Gaussian terms in phi: A at events <w_n>, on the grid <w(t)> Lambda_q2(t);
// b at events 1/2, on the grid -Lambda_q2(t)/2. Both already carry the quadrature weights.
inline void phi_weights(const VariationalProblem& p, const VariationalState& s, Eigen::VectorXd& a,
                        Eigen::VectorXd& b) {
  const Eigen::Index n = p.n_obs(), g = p.n_grid();
  a.resize(n + g);
  b.resize(n + g);
  a.head(n) = s.omega_obs;
  b.head(n).setConstant(0.5);
  for (Eigen::Index j = 0; j < g; ++j) {
    const double q = p.quad(n + j);
    a(n + j) = q * s.omega_grid(j) * s.latent_rate(j);
    b(n + j) = -0.5 * q * s.latent_rate(j);
  }
}

inline void update_q_phi(const VariationalProblem& p, VariationalState& s) {
  Eigen::VectorXd a, b;
  phi_weights(p, s, a, b);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.size());
  const auto q = whitened_update(s.basis, a, b, ones);
  auto [mean, cov] = unwhiten(s.basis, q);
  s.mu_c = std::move(mean);
  s.sigma_c = std::move(cov);
  s.marg = basis_marginals(s.basis, q);
}

inline void apply_update(const VariationalProblem& p, VariationalState& s, ViFactor f) {
  switch (f) {
    case ViFactor::phi: update_q_phi(p, s); break;
    case ViFactor::lambda: update_q_lambda(p, s); break;
    case ViFactor::pg: update_q_pg(p, s); break;
    case ViFactor::latent: update_q_latent(p, s); break;
  }
}

// KL(Gamma(a, b) || Gamma(a0, b0)), shape-rate parameterisation.
[[nodiscard]] inline double kl_gamma(double a, double b, double a0, double b0) {
  return (a - a0) * digamma(a) - std::lgamma(a) + std::lgamma(a0) + a0 * (std::log(b) - std::log(b0)) +
         a * (b0 - b) / b;
}

// KL(N(mu, S) || N(0, L L')) computed in whitened coordinates.
[[nodiscard]] inline double kl_inducing(const VariationalState& s) {
  const auto q = whiten(s.basis, s.mu_c, s.sigma_c);
  const Eigen::LLT<Eigen::MatrixXd> chol(q.cov);
  if (chol.info() != Eigen::Success) throw NumericalError("inducing covariance is not positive definite");
  const double log_det = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (q.cov.trace() + q.mean.squaredNorm() - static_cast<double>(q.mean.size()) - log_det);
}

// Evidence lower bound with the stored factors; event terms exact, latent terms by quadrature.
[[nodiscard]] inline double elbo(const VariationalProblem& p, const VariationalState& s) {
  const Eigen::Index n = p.n_obs(), g = p.n_grid();
  const double log_lambda = s.mean_log_lambda();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = s.marg.mean(i);
    const double sq = m * m + s.marg.var(i);
    const double c = s.tilt_obs(i);
    acc += log_lambda + 0.5 * m - std::numbers::ln2 - log_cosh(0.5 * c) + 0.5 * (c * c - sq) * s.omega_obs(i);
  }
  acc -= s.mean_lambda() * p.window;
  for (Eigen::Index j = 0; j < g; ++j) {
    const double rate = s.latent_rate(j);
    if (rate <= 0.0) continue;
    const double m = s.marg.mean(n + j);
    const double sq = m * m + s.marg.var(n + j);
    const double c = s.tilt_grid(j);
    const double integrand = log_lambda - 0.5 * m - std::numbers::ln2 - log_cosh(0.5 * c) +
                             0.5 * (c * c - sq) * s.omega_grid(j) - std::log(rate) + 1.0;
    acc += p.quad(n + j) * rate * integrand;
  }
  acc -= kl_inducing(s);
  acc -= kl_gamma(s.alpha, s.beta, p.lambda_prior.shape, p.lambda_prior.rate);
  return acc;
}

// d ELBO / d theta (raw kernel parameters) with every variational factor held fixed.
// With a = K^-1 k(t): <phi> = a' mu, var = k(t,t) - a'k + a' S a.
[[nodiscard]] inline std::vector<double> elbo_hypergradient(const VariationalProblem& p, const VariationalState& s) {
  const Eigen::Index n = p.n_obs();
  const Eigen::Index np = n + p.n_grid();
  // dL/dmean and dL/dvar at each evaluation point.
  Eigen::VectorXd a_w, b_w;
  phi_weights(p, s, a_w, b_w);
  const Eigen::VectorXd g_mean = b_w - (a_w.array() * s.marg.mean.array()).matrix();
  const Eigen::VectorXd g_var = -0.5 * a_w;

  const auto& chol = s.basis.prior;
  const Eigen::MatrixXd proj = chol.llt.matrixU().solve(s.basis.whitened);  // K^-1 K_cP
  const Eigen::VectorXd kmu = chol.solve(s.mu_c);
  const Eigen::MatrixXd k_inv = chol.solve(Eigen::MatrixXd::Identity(s.mu_c.size(), s.mu_c.size()));
  const Eigen::MatrixXd kis = k_inv * s.sigma_c;
  const Eigen::MatrixXd s_proj = s.sigma_c * proj;

  const auto d_cc = s.kernel.gradients(p.inducing, p.inducing);
  const auto d_cp = s.kernel.gradients(p.inducing, p.eval_points);
  const auto d_pp = s.kernel.diagonal_gradients(p.eval_points);

  std::vector<double> grad(d_cc.size());
  for (std::size_t k = 0; k < d_cc.size(); ++k) {
    const Eigen::MatrixXd& dk = d_cc[k];
    const Eigen::MatrixXd& dkp = d_cp[k];
    const Eigen::MatrixXd d_proj = chol.solve(dkp - dk * proj);
    const Eigen::VectorXd d_mean = d_proj.transpose() * s.mu_c;
    const Eigen::VectorXd d_var = d_pp[k] - 2.0 * (dkp.array() * proj.array()).colwise().sum().transpose().matrix() +
                                  (proj.array() * (dk * proj).array()).colwise().sum().transpose().matrix() +
                                  2.0 * (d_proj.array() * s_proj.array()).colwise().sum().transpose().matrix();
    const Eigen::MatrixXd kidk = k_inv * dk;
    const double d_kl = 0.5 * (-(kidk * kis).trace() - kmu.dot(dk * kmu) + kidk.trace());
    grad[k] = g_mean.dot(d_mean) + g_var.head(np).dot(d_var) - d_kl;
  }
  return grad;
}

// One Adam ascent step on the log kernel parameters.
inline void hyper_step_vi(const VariationalProblem& p, VariationalState& s, AdamAscent& adam) {
  const auto params = s.kernel.parameters();
  const auto grad = to_log_gradient(params, elbo_hypergradient(p, s));
  const auto next = adam.ascend(params, grad);
  if (next == params) return;
  set_kernel(p, s, s.kernel.with_parameters(next));
  s.kernel_trace.push_back(next);
}

// Coordinate ascent until the relative ELBO change falls below tol.
[[nodiscard]] inline VariationalState fit(const VariationalProblem& p, const HawkesKernel& kernel,
                                          const ViConfig& cfg) {
  cfg.validate();
  VariationalState s = initial_state(p, kernel);
  AdamAscent adam;
  adam.step = cfg.step_size;
  double prev = elbo(p, s);
  s.elbo_trace.push_back(prev);
  for (std::size_t r = 0; r < cfg.max_rounds; ++r) {
    for (ViFactor f : cfg.order) {
      apply_update(p, s, f);
      s.update_trace.push_back(elbo(p, s));
    }
    if (cfg.learn_hyper) hyper_step_vi(p, s, adam);
    const double cur = elbo(p, s);
    s.elbo_trace.push_back(cur);
    ++s.rounds;
    if (!std::isfinite(cur)) throw NumericalError("ELBO became non-finite in round " + std::to_string(r + 1));
    if (std::abs(cur - prev) < cfg.tol * std::abs(cur)) {
      s.converged = true;
      break;
    }
    prev = cur;
  }
  return s;
}

}  // namespace nhgps
