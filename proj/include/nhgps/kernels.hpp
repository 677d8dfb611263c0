#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nhgps/error.hpp"
#include "nhgps/linalg.hpp"
#include "nhgps/numeric.hpp"

namespace nhgps {

struct RbfParams {
  double amplitude = 1.0;
  double lengthscale = 1.0;

  void validate(const std::string& what = "rbf") const {
    require(std::isfinite(amplitude) && amplitude > 0.0, what + ": amplitude must be positive");
    require(std::isfinite(lengthscale) && lengthscale > 0.0, what + ": lengthscale must be positive");
  }
  friend bool operator==(const RbfParams&, const RbfParams&) = default;
};

struct DecayParam {
  double rate = 1.0;

  void validate(const std::string& what = "decay") const {
    require(std::isfinite(rate) && rate > 0.0, what + ": rate must be positive");
  }
  friend bool operator==(const DecayParam&, const DecayParam&) = default;
};

[[nodiscard]] inline double rbf(double t1, double t2, const RbfParams& p) {
  const double d = (t1 - t2) / p.lengthscale;
  return p.amplitude * std::exp(-d * d);
}

// Memory GP g and its decay for one source of history events.
struct MemoryTerm {
  RbfParams shape;
  DecayParam decay;
  friend bool operator==(const MemoryTerm&, const MemoryTerm&) = default;
};

// Sorted event times, one list per memory term of a kernel.
using History = std::vector<std::vector<double>>;

enum class KernelMethod { automatic, spectral, direct };

struct KernelMatrix {
  Eigen::MatrixXd values;
  std::vector<double> row_points;
  std::vector<double> col_points;
  double jitter = 0.0;
};

namespace detail {

// Trapezoid rule in frequency for exp(-x^2/s^2) = int p(w) e^{iwx} dw.
// Aliases sit 6.5 lengthscales beyond the largest lag difference and the
// truncated Gaussian tail is below 1e-18, so the rule is exact in double precision.
struct SpectralRule {
  double step = 0.0;
  int modes = 0;                // highest frequency index Q
  std::vector<double> weight;   // per feature column (2Q+1)
  std::vector<double> dweight;  // derivative of weight w.r.t. lengthscale
};

inline SpectralRule spectral_rule(double lengthscale, double span) {
  SpectralRule r;
  r.step = 2.0 * kPi / (span + 6.5 * lengthscale);
  r.modes = static_cast<int>(std::ceil(12.5 / (lengthscale * r.step)));
  const int cols = 2 * r.modes + 1;
  r.weight.resize(cols);
  r.dweight.resize(cols);
  const double norm = lengthscale / (2.0 * std::sqrt(kPi));
  for (int q = 0; q <= r.modes; ++q) {
    const double w = q * r.step;
    const double p = norm * std::exp(-0.25 * w * w * lengthscale * lengthscale);
    const double dp = p * (1.0 / lengthscale - 0.5 * w * w * lengthscale);
    const double mult = (q == 0 ? 1.0 : 2.0) * r.step;
    if (q == 0) {
      r.weight[0] = mult * p;
      r.dweight[0] = mult * dp;
    } else {
      r.weight[2 * q - 1] = r.weight[2 * q] = mult * p;
      r.dweight[2 * q - 1] = r.dweight[2 * q] = mult * dp;
    }
  }
  return r;
}

inline std::size_t count_before(const std::vector<double>& hist, double t) {
  return static_cast<std::size_t>(std::lower_bound(hist.begin(), hist.end(), t) - hist.begin());
}

// Powers e^{i q h x} for q = 0..Q, re-anchored every 32 steps to bound drift.
inline void rotation_powers(double h, double x, std::vector<std::complex<double>>& out) {
  const std::complex<double> rot(std::cos(h * x), std::sin(h * x));
  std::complex<double> z(1.0, 0.0);
  for (std::size_t q = 0; q < out.size(); ++q) {
    if (q > 0 && q % 32 == 0) z = std::polar(1.0, static_cast<double>(q) * h * x);
    out[q] = z;
    z *= rot;
  }
}

// Rows: sum over earlier history of decay-weighted cos/sin of the lag, i.e.
// S_q(t) = sum_{t_i < t} exp((-alpha + i q h)(t - t_i)). Points are swept in time
// order and S is carried forward, so the cost is O((points + history) Q).
// `lagged` holds the same sums weighted by the lag t - t_i.
inline void spectral_features(std::span<const double> pts, const std::vector<double>& hist, double decay,
                              const SpectralRule& rule, Eigen::MatrixXd& plain, Eigen::MatrixXd* lagged) {
  const auto q_count = static_cast<std::size_t>(rule.modes + 1);
  const Eigen::Index cols = 2 * rule.modes + 1;
  plain.setZero(static_cast<Eigen::Index>(pts.size()), cols);
  if (lagged) lagged->setZero(static_cast<Eigen::Index>(pts.size()), cols);
  if (hist.empty() || pts.empty()) return;

  std::vector<std::size_t> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pts[a] < pts[b]; });

  std::vector<std::complex<double>> sum(q_count), sum_u(q_count), rot(q_count);
  std::size_t next = 0;  // first history event not yet absorbed
  double t_prev = 0.0;
  bool live = false;
  for (std::size_t idx : order) {
    const double t = pts[idx];
    if (live && t > t_prev) {
      const double dt = t - t_prev;
      const double damp = std::exp(-decay * dt);
      rotation_powers(rule.step, dt, rot);
      for (std::size_t q = 0; q < q_count; ++q) {
        const std::complex<double> f = damp * rot[q];
        if (lagged) sum_u[q] = f * (sum_u[q] + dt * sum[q]);
        sum[q] *= f;
      }
    }
    t_prev = t;
    for (; next < hist.size() && hist[next] < t; ++next) {
      const double u = t - hist[next];
      const double w = std::exp(-decay * u);
      live = true;
      if (w < 1e-300) continue;
      rotation_powers(rule.step, u, rot);
      for (std::size_t q = 0; q < q_count; ++q) {
        sum[q] += w * rot[q];
        if (lagged) sum_u[q] += (u * w) * rot[q];
      }
    }
    if (!live) continue;
    const auto row = static_cast<Eigen::Index>(idx);
    plain(row, 0) = sum[0].real();
    for (std::size_t q = 1; q < q_count; ++q) {
      plain(row, static_cast<Eigen::Index>(2 * q - 1)) = sum[q].real();
      plain(row, static_cast<Eigen::Index>(2 * q)) = sum[q].imag();
    }
    if (lagged) {
      (*lagged)(row, 0) = sum_u[0].real();
      for (std::size_t q = 1; q < q_count; ++q) {
        (*lagged)(row, static_cast<Eigen::Index>(2 * q - 1)) = sum_u[q].real();
        (*lagged)(row, static_cast<Eigen::Index>(2 * q)) = sum_u[q].imag();
      }
    }
  }
}

struct MemoryBlock {
  Eigen::MatrixXd value;  // includes the amplitude
  Eigen::MatrixXd d_amplitude;
  Eigen::MatrixXd d_lengthscale;
  Eigen::MatrixXd d_decay;
};

struct LagSet {
  std::vector<double> lag;
  std::vector<double> weight;
};

inline std::vector<LagSet> lag_sets(std::span<const double> pts, const std::vector<double>& hist, double decay) {
  std::vector<LagSet> out(pts.size());
  for (std::size_t l = 0; l < pts.size(); ++l) {
    const std::size_t n = count_before(hist, pts[l]);
    out[l].lag.reserve(n);
    out[l].weight.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = pts[l] - hist[i];
      out[l].lag.push_back(u);
      out[l].weight.push_back(std::exp(-decay * u));
    }
  }
  return out;
}

inline MemoryBlock memory_block_direct(const MemoryTerm& term, std::span<const double> rows,
                                       const std::vector<double>& hist_r, std::span<const double> cols,
                                       const std::vector<double>& hist_c, bool grads) {
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  const double a = term.shape.amplitude;
  const double s = term.shape.lengthscale;
  const double inv_s2 = 1.0 / (s * s);
  const auto lr = lag_sets(rows, hist_r, term.decay.rate);
  const auto lc = lag_sets(cols, hist_c, term.decay.rate);
  MemoryBlock out;
  out.value.setZero(nr, nc);
  if (grads) {
    out.d_amplitude.setZero(nr, nc);
    out.d_lengthscale.setZero(nr, nc);
    out.d_decay.setZero(nr, nc);
  }
  for (Eigen::Index l = 0; l < nr; ++l) {
    const auto& x = lr[static_cast<std::size_t>(l)];
    for (Eigen::Index k = 0; k < nc; ++k) {
      const auto& y = lc[static_cast<std::size_t>(k)];
      double sum = 0.0, sum_sq = 0.0, sum_lag = 0.0;
      for (std::size_t i = 0; i < x.lag.size(); ++i) {
        for (std::size_t j = 0; j < y.lag.size(); ++j) {
          const double diff = x.lag[i] - y.lag[j];
          const double term_ij = x.weight[i] * y.weight[j] * std::exp(-diff * diff * inv_s2);
          sum += term_ij;
          if (grads) {
            sum_sq += term_ij * diff * diff;
            sum_lag += term_ij * (x.lag[i] + y.lag[j]);
          }
        }
      }
      out.value(l, k) = a * sum;
      if (grads) {
        out.d_amplitude(l, k) = sum;
        out.d_lengthscale(l, k) = a * 2.0 * sum_sq / (s * s * s);
        out.d_decay(l, k) = -a * sum_lag;
      }
    }
  }
  return out;
}

inline double max_lag(std::span<const double> pts, const std::vector<double>& hist) {
  if (hist.empty() || pts.empty()) return 0.0;
  const double hi = *std::max_element(pts.begin(), pts.end());
  return std::max(0.0, hi - hist.front());
}

inline MemoryBlock memory_block_spectral(const MemoryTerm& term, std::span<const double> rows,
                                         const std::vector<double>& hist_r, std::span<const double> cols,
                                         const std::vector<double>& hist_c, bool grads, bool same) {
  const double span = std::max(max_lag(rows, hist_r), max_lag(cols, hist_c));
  const SpectralRule rule = spectral_rule(term.shape.lengthscale, span);
  const double a = term.shape.amplitude;
  Eigen::MatrixXd fr, fc, ur, uc;
  spectral_features(rows, hist_r, term.decay.rate, rule, fr, grads ? &ur : nullptr);
  if (!same) spectral_features(cols, hist_c, term.decay.rate, rule, fc, grads ? &uc : nullptr);
  const Eigen::MatrixXd& fcol = same ? fr : fc;
  const Eigen::MatrixXd& ucol = same ? ur : uc;
  const Eigen::Map<const Eigen::VectorXd> w(rule.weight.data(), static_cast<Eigen::Index>(rule.weight.size()));
  const Eigen::Map<const Eigen::VectorXd> dw(rule.dweight.data(), static_cast<Eigen::Index>(rule.dweight.size()));

  MemoryBlock out;
  const Eigen::MatrixXd frw = fr * w.asDiagonal();
  Eigen::MatrixXd base = frw * fcol.transpose();
  if (same) symmetrize(base);
  out.value = a * base;
  if (grads) {
    out.d_amplitude = base;
    out.d_lengthscale = a * (fr * dw.asDiagonal() * fcol.transpose());
    Eigen::MatrixXd lagsum = (ur * w.asDiagonal()) * fcol.transpose() + frw * ucol.transpose();
    if (same) {
      symmetrize(out.d_lengthscale);
      symmetrize(lagsum);
    }
    out.d_decay = -a * lagsum;
  }
  return out;
}

inline double history_pairs(std::span<const double> pts, const std::vector<double>& hist) {
  double acc = 0.0;
  for (double t : pts) acc += static_cast<double>(count_before(hist, t));
  return acc;
}

inline bool prefer_spectral(const MemoryTerm& term, std::span<const double> rows, const std::vector<double>& hist_r,
                            std::span<const double> cols, const std::vector<double>& hist_c) {
  const double pr = history_pairs(rows, hist_r);
  const double pc = history_pairs(cols, hist_c);
  const double span = std::max(max_lag(rows, hist_r), max_lag(cols, hist_c));
  const double modes = std::ceil(12.5 * (span + 6.5 * term.shape.lengthscale) / (2.0 * kPi * term.shape.lengthscale));
  const double n_r = static_cast<double>(rows.size());
  const double n_c = static_cast<double>(cols.size());
  const double sweep = n_r + n_c + static_cast<double>(hist_r.size() + hist_c.size());
  const double spectral_cost = 8.0 * sweep * (modes + 1.0) + n_r * n_c * (2.0 * modes + 1.0);
  // Average pairs per entry times an exp-dominated constant.
  const double direct_cost = (n_r > 0 && n_c > 0) ? 10.0 * pr * pc : 0.0;
  return spectral_cost < direct_cost;
}

}  // namespace detail

// Covariance of phi(t) = s(t) + sum_m sum_{t_i in H_m, t_i < t} g_m(t - t_i) exp(-alpha_m (t - t_i))
// with s ~ GP(0, K^s) and g_m ~ GP(0, K^{g_m}) independent.
class HawkesKernel {
 public:
  HawkesKernel(RbfParams background, std::vector<MemoryTerm> memory, History history, double window)
      : background_(background),
        memory_(std::move(memory)),
        history_(std::make_shared<const History>(std::move(history))),
        window_(window) {
    validate();
  }

  static HawkesKernel univariate(RbfParams background, RbfParams memory, DecayParam decay,
                                 std::vector<double> history, double window) {
    return HawkesKernel(background, {MemoryTerm{memory, decay}}, History{std::move(history)}, window);
  }

  [[nodiscard]] const RbfParams& background() const { return background_; }
  [[nodiscard]] const std::vector<MemoryTerm>& memory() const { return memory_; }
  [[nodiscard]] const History& history() const { return *history_; }
  [[nodiscard]] std::shared_ptr<const History> shared_history() const { return history_; }
  [[nodiscard]] double window() const { return window_; }
  [[nodiscard]] KernelMethod method() const { return method_; }
  void set_method(KernelMethod m) { method_ = m; }

  [[nodiscard]] HawkesKernel with_history(History history, double window) const {
    HawkesKernel k = *this;
    k.history_ = std::make_shared<const History>(std::move(history));
    k.window_ = window;
    k.validate();
    return k;
  }

  [[nodiscard]] HawkesKernel with_window(double window) const {
    HawkesKernel k = *this;
    k.window_ = window;
    k.validate();
    return k;
  }

  // Raw positive values ordered as [a_s, sigma_s, (a_g, sigma_g, alpha) per memory term].
  [[nodiscard]] std::size_t parameter_count() const { return 2 + 3 * memory_.size(); }

  [[nodiscard]] std::vector<double> parameters() const {
    std::vector<double> p{background_.amplitude, background_.lengthscale};
    for (const auto& m : memory_) {
      p.push_back(m.shape.amplitude);
      p.push_back(m.shape.lengthscale);
      p.push_back(m.decay.rate);
    }
    return p;
  }

  [[nodiscard]] std::vector<std::string> parameter_names() const {
    std::vector<std::string> names{"a_s", "sigma_s"};
    for (std::size_t k = 0; k < memory_.size(); ++k) {
      const std::string suffix = memory_.size() == 1 ? "" : "[" + std::to_string(k) + "]";
      names.push_back("a_g" + suffix);
      names.push_back("sigma_g" + suffix);
      names.push_back("alpha" + suffix);
    }
    return names;
  }

  [[nodiscard]] HawkesKernel with_parameters(std::span<const double> p) const {
    require(p.size() == parameter_count(), "with_parameters: wrong parameter count");
    HawkesKernel k = *this;
    k.background_ = {p[0], p[1]};
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      k.memory_[m].shape = {p[2 + 3 * m], p[3 + 3 * m]};
      k.memory_[m].decay = {p[4 + 3 * m]};
    }
    k.validate();
    return k;
  }

  [[nodiscard]] Eigen::MatrixXd matrix(std::span<const double> rows, std::span<const double> cols) const {
    return cross(rows, history(), cols, history());
  }

  // Square matrix over one point set, exactly symmetric.
  [[nodiscard]] Eigen::MatrixXd gram(std::span<const double> pts) const {
    check_points(pts);
    Eigen::MatrixXd k = background_block(pts, pts);
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      k += memory(m, pts, history()[m], pts, history()[m], false, true).value;
    }
    symmetrize(k);
    return k;
  }

  // Rows carry their own history, columns theirs; used to predict phi along a
  // different event sequence than the one the anchors were conditioned on.
  [[nodiscard]] Eigen::MatrixXd cross(std::span<const double> rows, const History& row_history,
                                      std::span<const double> cols, const History& col_history) const {
    check_points(rows);
    check_points(cols);
    check_history(row_history);
    check_history(col_history);
    Eigen::MatrixXd k = background_block(rows, cols);
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      k += memory(m, rows, row_history[m], cols, col_history[m], false, false).value;
    }
    return k;
  }

  [[nodiscard]] Eigen::VectorXd diagonal(std::span<const double> pts) const { return diagonal(pts, history()); }

  [[nodiscard]] Eigen::VectorXd diagonal(std::span<const double> pts, const History& hist) const {
    check_points(pts);
    check_history(hist);
    Eigen::VectorXd d = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(pts.size()), background_.amplitude);
    for (std::size_t m = 0; m < memory_.size(); ++m) d += memory_diagonal(m, pts, hist[m]).value;
    return d;
  }

  // d/d(parameter) of matrix(rows, cols), one matrix per parameters() entry.
  [[nodiscard]] std::vector<Eigen::MatrixXd> gradients(std::span<const double> rows,
                                                       std::span<const double> cols) const {
    return gradients(rows, history(), cols, history());
  }

  [[nodiscard]] std::vector<Eigen::MatrixXd> gradients(std::span<const double> rows, const History& row_history,
                                                       std::span<const double> cols,
                                                       const History& col_history) const {
    check_points(rows);
    check_points(cols);
    check_history(row_history);
    check_history(col_history);
    std::vector<Eigen::MatrixXd> g;
    g.reserve(parameter_count());
    const auto nr = static_cast<Eigen::Index>(rows.size());
    const auto nc = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd unit(nr, nc), scale(nr, nc);
    const double s = background_.lengthscale;
    for (Eigen::Index l = 0; l < nr; ++l) {
      for (Eigen::Index k = 0; k < nc; ++k) {
        const double d = rows[static_cast<std::size_t>(l)] - cols[static_cast<std::size_t>(k)];
        const double e = std::exp(-d * d / (s * s));
        unit(l, k) = e;
        scale(l, k) = background_.amplitude * e * 2.0 * d * d / (s * s * s);
      }
    }
    g.push_back(std::move(unit));
    g.push_back(std::move(scale));
    const bool same = &row_history == &col_history && rows.data() == cols.data() && rows.size() == cols.size();
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      auto blk = memory(m, rows, row_history[m], cols, col_history[m], true, same);
      g.push_back(std::move(blk.d_amplitude));
      g.push_back(std::move(blk.d_lengthscale));
      g.push_back(std::move(blk.d_decay));
    }
    return g;
  }

  // d/d(parameter) of diagonal(pts).
  [[nodiscard]] std::vector<Eigen::VectorXd> diagonal_gradients(std::span<const double> pts) const {
    return diagonal_gradients(pts, history());
  }

  [[nodiscard]] std::vector<Eigen::VectorXd> diagonal_gradients(std::span<const double> pts,
                                                                const History& hist) const {
    check_points(pts);
    check_history(hist);
    const auto n = static_cast<Eigen::Index>(pts.size());
    std::vector<Eigen::VectorXd> g;
    g.push_back(Eigen::VectorXd::Ones(n));
    g.push_back(Eigen::VectorXd::Zero(n));
    for (std::size_t m = 0; m < memory_.size(); ++m) {
      auto blk = memory_diagonal(m, pts, hist[m], true);
      g.push_back(std::move(blk.d_amplitude));
      g.push_back(std::move(blk.d_lengthscale));
      g.push_back(std::move(blk.d_decay));
    }
    return g;
  }

 private:
  struct DiagonalBlock {
    Eigen::VectorXd value, d_amplitude, d_lengthscale, d_decay;
  };

  void validate() const {
    background_.validate("background kernel");
    for (const auto& m : memory_) {
      m.shape.validate("memory kernel");
      m.decay.validate("memory decay");
    }
    require(std::isfinite(window_) && window_ > 0.0, "kernel window must be positive");
    check_history(*history_);
  }

  void check_history(const History& h) const {
    require(h.size() == memory_.size(), "history must provide one event list per memory term");
    for (const auto& list : h) {
      require(std::is_sorted(list.begin(), list.end()), "history times must be sorted");
    }
  }

  void check_points(std::span<const double> pts) const {
    const double tol = 1e-12 * std::max(1.0, window_);
    for (double t : pts) {
      if (!(t >= -tol && t <= window_ + tol)) {
        throw ValidationError("kernel evaluation time " + std::to_string(t) + " outside [0, " +
                              std::to_string(window_) + "]");
      }
    }
  }

  [[nodiscard]] Eigen::MatrixXd background_block(std::span<const double> rows, std::span<const double> cols) const {
    Eigen::MatrixXd k(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t l = 0; l < rows.size(); ++l) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        k(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(c)) = rbf(rows[l], cols[c], background_);
      }
    }
    return k;
  }

  [[nodiscard]] detail::MemoryBlock memory(std::size_t m, std::span<const double> rows,
                                           const std::vector<double>& hist_r, std::span<const double> cols,
                                           const std::vector<double>& hist_c, bool grads, bool same) const {
    const auto& term = memory_[m];
    bool spectral = method_ == KernelMethod::spectral;
    if (method_ == KernelMethod::automatic) spectral = detail::prefer_spectral(term, rows, hist_r, cols, hist_c);
    if (spectral) return detail::memory_block_spectral(term, rows, hist_r, cols, hist_c, grads, same);
    return detail::memory_block_direct(term, rows, hist_r, cols, hist_c, grads);
  }

  [[nodiscard]] DiagonalBlock memory_diagonal(std::size_t m, std::span<const double> pts,
                                              const std::vector<double>& hist, bool grads = false) const {
    const auto& term = memory_[m];
    const auto n = static_cast<Eigen::Index>(pts.size());
    DiagonalBlock out;
    out.value.setZero(n);
    if (grads) {
      out.d_amplitude.setZero(n);
      out.d_lengthscale.setZero(n);
      out.d_decay.setZero(n);
    }
    if (hist.empty() || n == 0) return out;
    const double a = term.shape.amplitude;
    bool spectral = method_ == KernelMethod::spectral;
    if (method_ == KernelMethod::automatic) {
      const double pairs = detail::history_pairs(pts, hist);
      const double span = detail::max_lag(pts, hist);
      const double modes =
          std::ceil(12.5 * (span + 6.5 * term.shape.lengthscale) / (2.0 * kPi * term.shape.lengthscale));
      const double per_point = pairs / static_cast<double>(n);
      const double sweep = static_cast<double>(n + hist.size());
      spectral = 8.0 * sweep * (modes + 1.0) + static_cast<double>(n) * (2.0 * modes + 1.0) <
                 10.0 * per_point * pairs;
    }
    if (spectral) {
      const auto rule = detail::spectral_rule(term.shape.lengthscale, detail::max_lag(pts, hist));
      Eigen::MatrixXd f, u;
      detail::spectral_features(pts, hist, term.decay.rate, rule, f, grads ? &u : nullptr);
      const Eigen::Map<const Eigen::VectorXd> w(rule.weight.data(), static_cast<Eigen::Index>(rule.weight.size()));
      const Eigen::Map<const Eigen::VectorXd> dw(rule.dweight.data(),
                                                 static_cast<Eigen::Index>(rule.dweight.size()));
      const Eigen::VectorXd base = f.array().square().matrix() * w;
      out.value = a * base;
      if (grads) {
        out.d_amplitude = base;
        out.d_lengthscale = a * (f.array().square().matrix() * dw);
        out.d_decay = -2.0 * a * ((u.array() * f.array()).matrix() * w);
      }
      return out;
    }
    const auto sets = detail::lag_sets(pts, hist, term.decay.rate);
    const double s = term.shape.lengthscale;
    for (Eigen::Index l = 0; l < n; ++l) {
      const auto& x = sets[static_cast<std::size_t>(l)];
      double sum = 0.0, sum_sq = 0.0, sum_lag = 0.0;
      for (std::size_t i = 0; i < x.lag.size(); ++i) {
        for (std::size_t j = 0; j < x.lag.size(); ++j) {
          const double diff = x.lag[i] - x.lag[j];
          const double t = x.weight[i] * x.weight[j] * std::exp(-diff * diff / (s * s));
          sum += t;
          sum_sq += t * diff * diff;
          sum_lag += t * (x.lag[i] + x.lag[j]);
        }
      }
      out.value(l) = a * sum;
      if (grads) {
        out.d_amplitude(l) = sum;
        out.d_lengthscale(l) = a * 2.0 * sum_sq / (s * s * s);
        out.d_decay(l) = -a * sum_lag;
      }
    }
    return out;
  }

  RbfParams background_;
  std::vector<MemoryTerm> memory_;
  std::shared_ptr<const History> history_;
  double window_;
  KernelMethod method_ = KernelMethod::automatic;
};

// Univariate aggregated kernel between two point sets over a shared history.
[[nodiscard]] inline KernelMatrix aggregated_kernel(std::span<const double> rows, std::span<const double> cols,
                                                    const std::vector<double>& history, const RbfParams& s_params,
                                                    const RbfParams& g_params, const DecayParam& decay,
                                                    double window) {
  const auto k = HawkesKernel::univariate(s_params, g_params, decay, history, window);
  KernelMatrix out;
  out.values = k.matrix(rows, cols);
  out.row_points.assign(rows.begin(), rows.end());
  out.col_points.assign(cols.begin(), cols.end());
  return out;
}

// Gradients of the univariate aggregated kernel, ordered a_s, sigma_s, a_g, sigma_g, alpha.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> kernel_hypergrads(std::span<const double> times,
                                                                    const std::vector<double>& history,
                                                                    const RbfParams& s_params,
                                                                    const RbfParams& g_params,
                                                                    const DecayParam& decay, double window) {
  const auto k = HawkesKernel::univariate(s_params, g_params, decay, history, window);
  return k.gradients(times, times);
}

// Log density of phi under N(0, K + jitter*I).
[[nodiscard]] inline double log_gp_prior(const Eigen::VectorXd& phi, const Eigen::MatrixXd& k,
                                         double jitter = kDefaultJitter) {
  const auto chol = robust_cholesky(k, jitter);
  const Eigen::VectorXd a = chol.solve(phi);
  return -0.5 * phi.dot(a) - 0.5 * chol.log_det() - 0.5 * static_cast<double>(phi.size()) * std::log(2.0 * kPi);
}

// d log N(phi; 0, K) / d theta = -1/2 tr(K^-1 dK) + 1/2 phi' K^-1 dK K^-1 phi.
[[nodiscard]] inline std::vector<double> log_gp_prior_grad(const Eigen::VectorXd& phi, const Eigen::MatrixXd& k,
                                                           const std::vector<Eigen::MatrixXd>& grads,
                                                           double jitter = kDefaultJitter) {
  const auto chol = robust_cholesky(k, jitter);
  const Eigen::VectorXd a = chol.solve(phi);
  const Eigen::MatrixXd k_inv = chol.solve(Eigen::MatrixXd::Identity(k.rows(), k.cols()));
  std::vector<double> out;
  out.reserve(grads.size());
  for (const auto& dk : grads) {
    out.push_back(0.5 * a.dot(dk * a) - 0.5 * (k_inv.array() * dk.array()).sum());
  }
  return out;
}

}  // namespace nhgps
