#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/kernels.hpp"
#include "nhgps/linalg.hpp"

namespace nhgps {

struct PhiMarginals {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

struct GaussianPrediction {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

namespace detail {

// Clamps tiny negative variances from cancellation; larger ones are a bug upstream.
inline void clamp_variances(Eigen::VectorXd& var, const Eigen::VectorXd& prior_var) {
  bool clamped = false;
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    if (var(i) >= 0.0) continue;
    if (var(i) < -1e-10 * std::max(1.0, prior_var(i))) {
      throw NumericalError("negative predictive variance " + std::to_string(var(i)));
    }
    var(i) = 0.0;
    clamped = true;
  }
  if (clamped) warn("clamped slightly negative predictive variances to zero");
}

}  // namespace detail

// Gaussian belief over phi at a set of anchor times; phi elsewhere follows the
// prior conditional given the anchors. An empty covariance means the anchor
// values are known exactly.
class GpPosterior {
 public:
  GpPosterior(HawkesKernel kernel, std::vector<double> anchors, Eigen::VectorXd mean, Eigen::MatrixXd cov,
              double jitter = kDefaultJitter)
      : kernel_(std::move(kernel)), anchors_(std::move(anchors)), mean_(std::move(mean)), cov_(std::move(cov)) {
    require(static_cast<std::size_t>(mean_.size()) == anchors_.size(), "posterior mean/anchor size mismatch");
    require(cov_.size() == 0 || (static_cast<std::size_t>(cov_.rows()) == anchors_.size() && cov_.rows() == cov_.cols()),
            "posterior covariance/anchor size mismatch");
    prior_ = robust_cholesky(kernel_.gram(anchors_), jitter);
    weights_ = prior_.solve(mean_);
  }

  [[nodiscard]] const HawkesKernel& kernel() const { return kernel_; }
  [[nodiscard]] const std::vector<double>& anchors() const { return anchors_; }
  [[nodiscard]] const Eigen::VectorXd& mean() const { return mean_; }
  [[nodiscard]] const Eigen::MatrixXd& covariance() const { return cov_; }
  [[nodiscard]] const JitteredCholesky& prior_factor() const { return prior_; }
  [[nodiscard]] double jitter() const { return prior_.jitter; }

  [[nodiscard]] GaussianPrediction predict(std::span<const double> query) const {
    return predict(query, kernel_.history(), kernel_.window());
  }

  // Query points carry their own event history (e.g. training events followed by test events).
  [[nodiscard]] GaussianPrediction predict(std::span<const double> query, const History& query_history,
                                           double window) const {
    const HawkesKernel qk = query_kernel(window);
    const Eigen::MatrixXd k_aq = qk.cross(anchors_, kernel_.history(), query, query_history);
    const Eigen::MatrixXd proj = prior_.solve(k_aq);
    GaussianPrediction out;
    out.mean = k_aq.transpose() * weights_;
    out.cov = qk.cross(query, query_history, query, query_history) - k_aq.transpose() * proj;
    if (cov_.size() > 0) out.cov += proj.transpose() * cov_ * proj;
    symmetrize(out.cov);
    return out;
  }

  [[nodiscard]] PhiMarginals marginals(std::span<const double> query) const {
    return marginals(query, kernel_.history(), kernel_.window());
  }

  [[nodiscard]] PhiMarginals marginals(std::span<const double> query, const History& query_history,
                                       double window) const {
    const HawkesKernel qk = query_kernel(window);
    const Eigen::MatrixXd k_aq = qk.cross(anchors_, kernel_.history(), query, query_history);
    const Eigen::MatrixXd proj = prior_.solve(k_aq);
    const Eigen::VectorXd prior_var = qk.diagonal(query, query_history);
    PhiMarginals out;
    out.mean = k_aq.transpose() * weights_;
    out.var = prior_var - (k_aq.array() * proj.array()).colwise().sum().transpose().matrix();
    if (cov_.size() > 0) out.var += ((cov_ * proj).array() * proj.array()).colwise().sum().transpose().matrix();
    detail::clamp_variances(out.var, prior_var);
    return out;
  }

 private:
  [[nodiscard]] HawkesKernel query_kernel(double window) const {
    return window == kernel_.window() ? kernel_ : kernel_.with_window(window);
  }

  HawkesKernel kernel_;
  std::vector<double> anchors_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  JitteredCholesky prior_;
  Eigen::VectorXd weights_;
};

// Inducing-point posterior q(phi_c) = N(mu_c, Sigma_c); predictions use kappa(t) = k_c(t)' K_c^-1.
using SparseGp = GpPosterior;

// Combines the prior GP at `points` with independent Gaussian pseudo-observations
// y_i of precision d_i: Sigma = (D + K^-1)^-1, mu = Sigma D y.
[[nodiscard]] inline GpPosterior gp_condition(const HawkesKernel& kernel, std::vector<double> points,
                                              const Eigen::VectorXd& pseudo_mean, const Eigen::VectorXd& precision,
                                              double jitter = kDefaultJitter) {
  const auto n = static_cast<Eigen::Index>(points.size());
  require(pseudo_mean.size() == n && precision.size() == n, "gp_condition: size mismatch");
  require((precision.array() >= 0.0).all(), "gp_condition: precisions must be non-negative");
  const auto chol = robust_cholesky(kernel.gram(points), jitter);
  Eigen::MatrixXd k = kernel.gram(points);
  k.diagonal().array() += chol.jitter;
  const Eigen::VectorXd root = precision.array().sqrt();
  Eigen::MatrixXd b = root.asDiagonal() * k * root.asDiagonal();
  b.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> bf(b);
  if (bf.info() != Eigen::Success) throw SingularKernelError("gp_condition: evidence system is singular");
  const Eigen::MatrixXd kr = k * root.asDiagonal();  // K D^1/2
  const Eigen::VectorXd dy = (root.array() * pseudo_mean.array()).matrix();
  Eigen::VectorXd mean = kr * bf.solve(dy);
  Eigen::MatrixXd cov = k - kr * bf.solve(kr.transpose());
  symmetrize(cov);
  return GpPosterior(kernel, std::move(points), std::move(mean), std::move(cov), chol.jitter);
}

[[nodiscard]] inline GaussianPrediction gp_predict(const GpPosterior& post, std::span<const double> query) {
  return post.predict(query);
}

// Precomputed pieces of an inducing-point approximation at fixed evaluation points.
struct SparseBasis {
  std::vector<double> inducing;
  std::vector<double> eval_points;
  JitteredCholesky prior;     // K_c + jitter = L L'
  Eigen::MatrixXd whitened;   // L^-1 K_{c, eval}
  Eigen::VectorXd prior_var;  // K(t, t) at eval points
};

[[nodiscard]] inline SparseBasis make_sparse_basis(const HawkesKernel& kernel, std::vector<double> inducing,
                                                   std::vector<double> eval_points,
                                                   double jitter = kDefaultJitter) {
  SparseBasis b;
  b.prior = robust_cholesky(kernel.gram(inducing), jitter);
  const Eigen::MatrixXd k_ce = kernel.matrix(inducing, eval_points);
  b.whitened = b.prior.llt.matrixL().solve(k_ce);
  b.prior_var = kernel.diagonal(eval_points);
  b.inducing = std::move(inducing);
  b.eval_points = std::move(eval_points);
  return b;
}

// q(v) for phi_c = L v, with prior v ~ N(0, I).
struct WhitenedGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Sigma_v^-1 = I + Psi diag(A q) Psi',  mu_v = Sigma_v Psi (b q).
[[nodiscard]] inline WhitenedGaussian whitened_update(const SparseBasis& basis, const Eigen::VectorXd& a_weights,
                                                      const Eigen::VectorXd& b_weights,
                                                      const Eigen::VectorXd& quad_weights) {
  const Eigen::MatrixXd& psi = basis.whitened;
  const Eigen::VectorXd aq = (a_weights.array() * quad_weights.array()).matrix();
  const Eigen::VectorXd bq = (b_weights.array() * quad_weights.array()).matrix();
  Eigen::MatrixXd prec = psi * aq.asDiagonal() * psi.transpose();
  prec.diagonal().array() += 1.0;
  symmetrize(prec);
  const Eigen::LLT<Eigen::MatrixXd> f(prec);
  if (f.info() != Eigen::Success) throw SingularKernelError("sparse update: precision is not positive definite");
  WhitenedGaussian out;
  out.cov = f.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
  symmetrize(out.cov);
  out.mean = out.cov * (psi * bq);
  return out;
}

[[nodiscard]] inline WhitenedGaussian whiten(const SparseBasis& basis, const Eigen::VectorXd& mean,
                                             const Eigen::MatrixXd& cov) {
  const auto l = basis.prior.llt.matrixL();
  WhitenedGaussian out;
  out.mean = l.solve(mean);
  const Eigen::MatrixXd half = l.solve(cov);
  out.cov = l.solve(half.transpose());
  symmetrize(out.cov);
  return out;
}

[[nodiscard]] inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> unwhiten(const SparseBasis& basis,
                                                                          const WhitenedGaussian& q) {
  const Eigen::MatrixXd l = basis.prior.lower();
  Eigen::MatrixXd cov = l * q.cov * l.transpose();
  symmetrize(cov);
  return {l * q.mean, std::move(cov)};
}

[[nodiscard]] inline PhiMarginals basis_marginals(const SparseBasis& basis, const WhitenedGaussian& q) {
  const Eigen::MatrixXd& psi = basis.whitened;
  PhiMarginals out;
  out.mean = psi.transpose() * q.mean;
  out.var = basis.prior_var - psi.array().square().colwise().sum().transpose().matrix() +
            ((q.cov * psi).array() * psi.array()).colwise().sum().transpose().matrix();
  detail::clamp_variances(out.var, basis.prior_var);
  return out;
}

[[nodiscard]] inline SparseGp sparse_update(const HawkesKernel& kernel, std::vector<double> inducing,
                                            const Eigen::VectorXd& a_weights, const Eigen::VectorXd& b_weights,
                                            std::vector<double> eval_points, const Eigen::VectorXd& quad_weights,
                                            double jitter = kDefaultJitter) {
  require(a_weights.size() == static_cast<Eigen::Index>(eval_points.size()) &&
              b_weights.size() == a_weights.size() && quad_weights.size() == a_weights.size(),
          "sparse_update: weight/point size mismatch");
  require((a_weights.array() >= 0.0).all(), "sparse_update: A weights must be non-negative");
  const auto basis = make_sparse_basis(kernel, inducing, std::move(eval_points), jitter);
  const auto q = whitened_update(basis, a_weights, b_weights, quad_weights);
  auto [mean, cov] = unwhiten(basis, q);
  return SparseGp(kernel, std::move(inducing), std::move(mean), std::move(cov), basis.prior.jitter);
}

[[nodiscard]] inline PhiMarginals sparse_predict(const SparseGp& sgp, std::span<const double> t) {
  return sgp.marginals(t);
}

}  // namespace nhgps
