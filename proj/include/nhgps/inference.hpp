#pragma once

#include <future>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nhgps/gibbs.hpp"
#include "nhgps/model.hpp"
#include "nhgps/predictive.hpp"
#include "nhgps/vi.hpp"

namespace nhgps {

enum class Method { gibbs, vi };

[[nodiscard]] inline std::string to_string(Method m) { return m == Method::gibbs ? "gibbs" : "vi"; }

[[nodiscard]] inline Method parse_method(const std::string& s) {
  if (s == "gibbs") return Method::gibbs;
  if (s == "vi") return Method::vi;
  throw ValidationError("unknown inference method '" + s + "' (expected gibbs or vi)");
}

// Fit of one target dimension. The prior kernel carries the training history.
struct DimensionFit {
  DimensionFit(int d, HistorySpec sp, HawkesKernel k, std::vector<double> obs)
      : dim(d), spec(std::move(sp)), prior(std::move(k)), observed(std::move(obs)) {}

  int dim = 0;
  HistorySpec spec;
  HawkesKernel prior;
  std::vector<double> observed;
  std::optional<VariationalProblem> problem;
  std::optional<VariationalState> vi;
  std::optional<ChainOutput> chain;
  std::shared_ptr<const Predictive> predictive;
};

struct ModelFit {
  Method method = Method::vi;
  double window = 1.0;
  MultivariateModel model;
  std::vector<DimensionFit> dims;

  [[nodiscard]] std::vector<const Predictive*> predictives() const {
    std::vector<const Predictive*> out;
    for (const auto& d : dims) out.push_back(d.predictive.get());
    return out;
  }
};

struct FitOptions {
  Method method = Method::vi;
  GibbsConfig gibbs;
  ViConfig vi;
  bool parallel = true;  // dimensions are independent given the observed histories
};

// Dimension r sees only its own events as observations; other types enter through the
// coupling histories. Dimension r uses seed + r.
[[nodiscard]] inline DimensionFit fit_dimension(const MultivariateModel& model, int r, const EventSequence& training,
                                                const FitOptions& opt) {
  const auto kernel = model.kernel_for(r, training);
  const auto& lambda_prior = model.lambda_prior[static_cast<std::size_t>(r)];
  DimensionFit out(r, HistorySpec::for_dimension(model, r), kernel, training.times_of_type(r));
  if (opt.method == Method::vi) {
    ViConfig cfg = opt.vi;
    cfg.seed += static_cast<std::uint64_t>(r);
    out.problem = make_problem(out.observed, training.window, lambda_prior, cfg);
    out.vi = fit(*out.problem, kernel, cfg);
    out.predictive = std::make_shared<VariationalPredictive>(out.vi->posterior(), out.vi->alpha, out.vi->beta, out.spec);
  } else {
    GibbsConfig cfg = opt.gibbs;
    cfg.seed += static_cast<std::uint64_t>(r);
    GibbsSampler sampler(out.observed, training.window, kernel, lambda_prior, cfg.horizon);
    out.chain = run_chain(sampler, cfg);
    if (!out.chain->snapshots.empty()) out.predictive = std::make_shared<ChainPredictive>(kernel, out.spec, *out.chain);
  }
  return out;
}

[[nodiscard]] inline ModelFit fit_model(const MultivariateModel& model, const EventSequence& training,
                                        const FitOptions& opt) {
  model.validate();
  require(training.type_count == model.dims || (model.dims == 1 && !training.labelled()),
          "event types do not match the model dimension");
  ModelFit fit{opt.method, training.window, model, {}};
  if (opt.parallel && model.dims > 1) {
    std::vector<std::future<DimensionFit>> jobs;
    for (int r = 0; r < model.dims; ++r)
      jobs.push_back(std::async(std::launch::async, [&, r] { return fit_dimension(model, r, training, opt); }));
    for (auto& j : jobs) fit.dims.push_back(j.get());
  } else {
    for (int r = 0; r < model.dims; ++r) fit.dims.push_back(fit_dimension(model, r, training, opt));
  }
  return fit;
}

// Typed held-out log-likelihood: dimension r scores the type-r events on (from, to].
[[nodiscard]] inline double held_out_log_likelihood(const ModelFit& fit, const EventSequence& ev, double from,
                                                    double to, std::size_t grid_count = 2001) {
  double acc = 0.0;
  for (const auto& d : fit.dims) {
    require(d.predictive != nullptr, "fit has no retained posterior samples to predict with");
    acc += held_out_log_likelihood(*d.predictive, ev, from, to, fit.model.dims > 1 ? d.dim : -1, grid_count);
  }
  return acc;
}

}  // namespace nhgps
