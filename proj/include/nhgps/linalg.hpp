#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

#include "nhgps/error.hpp"

namespace nhgps {

inline constexpr double kDefaultJitter = 1e-4;
inline constexpr double kMaxJitter = 1e-1;

// Cholesky factor of K + jitter*I, where jitter is the first value in
// base, 10*base, ... (capped at kMaxJitter) that makes the factorization succeed.
struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  template <class Derived>
  [[nodiscard]] auto solve(const Eigen::MatrixBase<Derived>& b) const {
    return llt.solve(b).eval();
  }
  [[nodiscard]] Eigen::MatrixXd lower() const { return llt.matrixL(); }
  [[nodiscard]] Eigen::Index size() const { return llt.matrixLLT().rows(); }

  [[nodiscard]] double log_det() const {
    const auto& m = llt.matrixLLT();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) acc += std::log(m(i, i));
    return 2.0 * acc;
  }
};

[[nodiscard]] inline JitteredCholesky robust_cholesky(const Eigen::MatrixXd& k, double base_jitter = kDefaultJitter) {
  if (k.rows() != k.cols()) throw ValidationError("robust_cholesky: matrix must be square");
  if (!k.allFinite()) throw SingularKernelError("robust_cholesky: matrix has non-finite entries");
  JitteredCholesky out;
  if (k.rows() == 0) return out;
  const double start = base_jitter > 0.0 ? base_jitter : kDefaultJitter;
  for (double jitter = start; jitter <= kMaxJitter * (1.0 + 1e-12); jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    out.llt.compute(kj);
    if (out.llt.info() == Eigen::Success && out.llt.matrixLLT().diagonal().allFinite() &&
        (out.llt.matrixLLT().diagonal().array() > 0.0).all()) {
      out.jitter = jitter;
      if (jitter > start) {
        std::ostringstream msg;
        msg << "kernel matrix of size " << k.rows() << " needed jitter " << jitter;
        warn(msg.str());
      }
      return out;
    }
  }
  std::ostringstream msg;
  msg << "kernel matrix of size " << k.rows() << " is singular even with jitter " << kMaxJitter;
  throw SingularKernelError(msg.str());
}

// Cholesky with a fixed jitter and no escalation (used where consistency with a
// previously chosen jitter matters more than robustness).
[[nodiscard]] inline JitteredCholesky fixed_cholesky(const Eigen::MatrixXd& k, double jitter) {
  JitteredCholesky out;
  Eigen::MatrixXd kj = k;
  kj.diagonal().array() += jitter;
  out.llt.compute(kj);
  out.jitter = jitter;
  if (out.llt.info() != Eigen::Success || !out.llt.matrixLLT().diagonal().allFinite()) {
    return robust_cholesky(k, jitter * 10.0);
  }
  return out;
}

inline void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

}  // namespace nhgps
