#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "nhgps/kernels.hpp"

namespace nhgps {

// Finite expansion f(x) = z(x)' beta, beta ~ N(0, I), of an RBF process whose
// covariance z(x)'z(x') equals the kernel to double precision for |x - x'| <= span.
class RbfExpansion {
 public:
  RbfExpansion(const RbfParams& params, double span)
      : rule_(detail::spectral_rule(params.lengthscale, std::max(span, 1e-12))), span_(span) {
    params.validate();
    scale_.resize(static_cast<Eigen::Index>(rule_.weight.size()));
    for (std::size_t i = 0; i < rule_.weight.size(); ++i) {
      scale_(static_cast<Eigen::Index>(i)) = std::sqrt(params.amplitude * rule_.weight[i]);
    }
  }

  [[nodiscard]] Eigen::Index size() const { return scale_.size(); }
  [[nodiscard]] double span() const { return span_; }
  [[nodiscard]] const detail::SpectralRule& rule() const { return rule_; }
  [[nodiscard]] const Eigen::VectorXd& scale() const { return scale_; }

  [[nodiscard]] Eigen::MatrixXd design(std::span<const double> x) const {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(x.size()), size());
    std::vector<std::complex<double>> pw(static_cast<std::size_t>(rule_.modes + 1));
    for (std::size_t i = 0; i < x.size(); ++i) {
      detail::rotation_powers(rule_.step, x[i], pw);
      const auto r = static_cast<Eigen::Index>(i);
      z(r, 0) = scale_(0);
      for (int q = 1; q <= rule_.modes; ++q) {
        z(r, 2 * q - 1) = scale_(2 * q - 1) * pw[static_cast<std::size_t>(q)].real();
        z(r, 2 * q) = scale_(2 * q) * pw[static_cast<std::size_t>(q)].imag();
      }
    }
    return z;
  }

 private:
  detail::SpectralRule rule_;
  double span_;
  Eigen::VectorXd scale_;
};

// Weight-space form of the aggregated kernel: phi(t) = x(t)' beta with beta ~ N(0, I),
// where beta stacks the coefficients of s and of every memory function g_m.
// Exact for points in [0, horizon].
class PhiBasis {
 public:
  PhiBasis(const HawkesKernel& kernel, double horizon) : kernel_(kernel), horizon_(horizon) {
    require(horizon >= kernel.window() * (1.0 - 1e-12), "basis horizon must cover the kernel window");
    background_.emplace_back(kernel.background(), horizon);
    offsets_.push_back(0);
    Eigen::Index at = background_.front().size();
    for (const auto& term : kernel.memory()) {
      memory_.emplace_back(term.shape, horizon);
      offsets_.push_back(at);
      at += memory_.back().size();
    }
    size_ = at;
  }

  [[nodiscard]] Eigen::Index size() const { return size_; }
  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] const HawkesKernel& kernel() const { return kernel_; }
  [[nodiscard]] const RbfExpansion& background() const { return background_.front(); }
  [[nodiscard]] const RbfExpansion& memory(std::size_t m) const { return memory_[m]; }
  // Column offset of the background block (m = 0) or memory term m - 1.
  [[nodiscard]] Eigen::Index offset(std::size_t block) const { return offsets_[block]; }

  [[nodiscard]] Eigen::MatrixXd design(std::span<const double> pts) const { return design(pts, kernel_.history()); }

  [[nodiscard]] Eigen::MatrixXd design(std::span<const double> pts, const History& hist) const {
    require(hist.size() == memory_.size(), "basis history must provide one list per memory term");
    const double tol = 1e-12 * std::max(1.0, horizon_);
    for (double t : pts) {
      if (!(t >= -tol && t <= horizon_ + tol)) {
        throw ValidationError("time " + std::to_string(t) + " outside basis horizon [0, " +
                              std::to_string(horizon_) + "]");
      }
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(pts.size()), size_);
    x.leftCols(background().size()) = background().design(pts);
    Eigen::MatrixXd f;
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      detail::spectral_features(pts, hist[m], kernel_.memory()[m].decay.rate, memory_[m].rule(), f, nullptr);
      x.middleCols(offsets_[m + 1], memory_[m].size()) = f * memory_[m].scale().asDiagonal();
    }
    return x;
  }

 private:
  HawkesKernel kernel_;
  double horizon_;
  std::vector<RbfExpansion> background_;
  std::vector<RbfExpansion> memory_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index size_ = 0;
};

}  // namespace nhgps
