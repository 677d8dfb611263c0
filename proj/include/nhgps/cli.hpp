#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nhgps/gof.hpp"
#include "nhgps/inference.hpp"
#include "nhgps/io.hpp"
#include "nhgps/simulate.hpp"

namespace nhgps::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

inline constexpr const char* kOutputRootEnv = "NHGPS_OUTPUT_ROOT";

// Maps the library's error types onto the stable exit-code contract.
inline int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  }
}

// --out wins, then the config's paths.output, then $NHGPS_OUTPUT_ROOT/<command>, then `fallback`.
// gof and evaluate write next to the fit they read instead.
[[nodiscard]] inline fs::path resolve_output(const std::optional<fs::path>& explicit_dir, const std::string& config_dir,
                                             const std::string& command, const fs::path& fallback) {
  if (explicit_dir) return *explicit_dir;
  if (!config_dir.empty()) return config_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / command;
  return fallback;
}

[[nodiscard]] inline RunConfig read_config(const fs::path& path, const std::vector<std::string>& overrides) {
  return with_overrides(load_config(path), overrides);
}

[[nodiscard]] inline std::string dim_suffix(int dims, int r) { return dims > 1 ? "_" + std::to_string(r) : ""; }

// Console formatting; files keep full precision.
[[nodiscard]] inline std::string shown(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<fs::path> out;
  std::optional<double> split;  // also write train.csv holding events on [0, split]
  std::size_t grid_points = 2001;
};

inline fs::path cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto cfg = read_config(a.config, a.overrides);
  const auto model = cfg.model();
  const auto lambdas = cfg.simulate_lambdas();
  const double window = cfg.simulate->window;
  if (a.split) require(*a.split > 0.0 && *a.split < window, "--split must lie strictly inside the window");
  const fs::path dir = resolve_output(a.out, cfg.output_dir, "simulate", "nhgps_output/simulate");

  const auto gt = draw_ground_truth(model, lambdas, window, cfg.seed);
  Rng rng(cfg.seed + 1);
  const auto events = thinning_simulate(gt, rng);

  BundleWriter w(dir, "simulation");
  w.write("events.csv", format_events(events));
  if (a.split) w.write("train.csv", format_events(events.until(*a.split)));
  w.write("config.json", format_config(cfg));
  write_truth(w, "truth/", gt);

  const auto grid = trapezoid_grid(0.0, window, a.grid_points);
  std::vector<std::string> header{"time"};
  std::vector<std::vector<double>> cols{grid.points};
  for (int r = 0; r < gt.dims(); ++r) {
    std::vector<double> phi;
    for (double t : grid.points) phi.push_back(gt.phi(r, t, events));
    header.push_back("intensity" + dim_suffix(gt.dims(), r));
    header.push_back("phi" + dim_suffix(gt.dims(), r));
    cols.push_back(gt.intensity(r, grid.points, events));
    cols.push_back(std::move(phi));
  }
  w.write("truth/intensity.csv", format_table(header, cols));
  w.finish();

  out << "simulated " << events.size() << " events on [0, " << shown(window) << "] with seed " << cfg.seed;
  if (a.split) out << " (" << events.until(*a.split).size() << " before " << shown(*a.split) << ")";
  out << " -> " << dir.string() << '\n';
  return dir;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<fs::path> events;
  std::optional<fs::path> out;
};

inline fs::path cmd_fit(const FitArgs& a, std::ostream& out) {
  const auto cfg = read_config(a.config, a.overrides);
  const auto model = cfg.model();
  const auto opts = cfg.fit_options();
  const fs::path events_path = a.events ? *a.events : fs::path(cfg.events_path);
  require(!events_path.empty(), "no event file given (use --events or paths.events)");
  const auto ev = load_events(events_path, cfg.window, model.dims > 1 ? model.dims : 0);
  const fs::path dir = resolve_output(a.out, cfg.output_dir, "fit", "nhgps_output/fit");

  ModelFit fit;
  try {
    fit = fit_model(model, ev, opts);
  } catch (...) {
    BundleWriter w(dir, "fit");
    w.write("events.csv", format_events(ev));
    w.write("config.json", format_config(cfg));
    w.finish(false);
    throw;
  }
  save_fit(fit, cfg, ev, dir);

  for (const auto& d : fit.dims) {
    out << "dim " << d.dim << ": " << d.observed.size() << " events, ";
    if (d.vi) {
      out << "E[lambda] " << shown(d.vi->mean_lambda()) << ", ELBO " << shown(d.vi->elbo_trace.back())
          << " after " << d.vi->rounds << " rounds" << (d.vi->converged ? "" : " (not converged)");
    } else {
      out << d.chain->sample_count() << " samples, E[lambda] " << shown(mean_of(d.chain->lambda))
          << ", " << std::fixed << std::setprecision(2) << d.chain->seconds << std::defaultfloat << " s";
    }
    out << '\n';
  }
  out << to_string(fit.method) << " fit -> " << dir.string() << '\n';
  return dir;
}

// ---------------------------------------------------------------- gof

struct GofArgs {
  fs::path fit;
  std::optional<fs::path> events;
  std::optional<fs::path> out;
  double resolution = 50.0;
  bool json = false;
};

inline fs::path cmd_gof(const GofArgs& a, std::ostream& out) {
  const auto loaded = load_fit(a.fit);
  const int dims = loaded.fit.model.dims;
  const auto ev = a.events ? load_events(*a.events, std::nullopt, dims > 1 ? dims : 0) : loaded.training;
  const fs::path dir = a.out.value_or(a.fit / "gof");

  std::vector<PathIntensity> rates;
  for (const auto& d : loaded.fit.dims) {
    require(d.predictive != nullptr, "fit has no retained posterior samples to rescale with");
    rates.push_back(path_intensity(*d.predictive, ev));
  }
  const auto reports = multivariate_gof(ev, rates, a.resolution);

  BundleWriter w(dir, "gof");
  Json summary = Json::array();
  std::vector<GofReport> present;
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const std::string prefix = dims > 1 ? "dim" + std::to_string(r) + "/" : "";
    Json row = {{"dim", r}, {"events", ev.times_of_type(static_cast<int>(r)).size()}};
    if (reports[r]) {
      write_gof(w, prefix, *reports[r]);
      present.push_back(*reports[r]);
      row["ks_statistic"] = reports[r]->statistic;
      row["p_value"] = reports[r]->p_value;
    } else {
      row["skipped"] = true;
    }
    summary.push_back(row);
  }
  Json doc = {{"fit", a.fit.string()}, {"dimensions", summary}};
  if (dims > 1 && !present.empty()) {
    const auto pooled = pooled_gof(present);
    write_gof(w, "pooled/", pooled);
    doc["pooled"] = {{"ks_statistic", pooled.statistic}, {"p_value", pooled.p_value}, {"n", pooled.tau.size()}};
  }
  w.write_json("gof.json", doc);
  w.finish();

  if (a.json) {
    out << doc.dump() << '\n';
  } else {
    for (const auto& row : summary) {
      out << "dim " << row["dim"].get<int>() << ": ";
      if (row.contains("skipped")) {
        out << "skipped (" << row["events"].get<std::size_t>() << " events)\n";
      } else {
        out << "KS D = " << shown(row["ks_statistic"].get<double>())
            << ", p = " << shown(row["p_value"].get<double>()) << '\n';
      }
    }
    if (doc.contains("pooled")) out << "pooled: p = " << shown(doc["pooled"]["p_value"].get<double>()) << '\n';
    out << "qq data -> " << dir.string() << '\n';
  }
  return dir;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path fit;
  fs::path events;
  std::optional<double> from;  // default: end of the training window
  std::optional<double> to;    // default: end of the test file's window
  std::optional<fs::path> out;
  bool json = false;
};

struct Evaluation {
  double from = 0.0;
  double to = 0.0;
  std::size_t events = 0;
  double log_likelihood = 0.0;
  [[nodiscard]] double per_event() const { return log_likelihood / static_cast<double>(events); }
};

[[nodiscard]] inline std::size_t count_in(const EventSequence& ev, double from, double to) {
  return static_cast<std::size_t>(std::count_if(ev.times.begin(), ev.times.end(),
                                                [&](double t) { return t > from && t <= to; }));
}

[[nodiscard]] inline Evaluation evaluate(const ModelFit& fit, const EventSequence& ev, std::optional<double> from,
                                         std::optional<double> to) {
  Evaluation e;
  e.from = from.value_or(fit.window);
  e.to = to.value_or(ev.window);
  require(e.to > e.from, "test window (" + shown(e.from) + ", " + shown(e.to) + "] is empty");
  require(e.to <= ev.window, "test window extends past the event file's window");
  e.events = count_in(ev, e.from, e.to);
  require(e.events > 0, "no test events in (" + shown(e.from) + ", " + shown(e.to) + "]");
  e.log_likelihood = held_out_log_likelihood(fit, ev, e.from, e.to);
  return e;
}

inline Evaluation cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto loaded = load_fit(a.fit);
  const int dims = loaded.fit.model.dims;
  const auto ev = load_events(a.events, std::nullopt, dims > 1 ? dims : 0);
  const auto e = evaluate(loaded.fit, ev, a.from, a.to);
  const fs::path dir = a.out.value_or(a.fit / "evaluate");
  const Json doc = {{"fit", a.fit.string()},   {"events_file", a.events.string()},
                    {"from", e.from},          {"to", e.to},
                    {"events", e.events},      {"log_likelihood", e.log_likelihood},
                    {"per_event", e.per_event()}};
  BundleWriter w(dir, "evaluate");
  w.write_json("metrics.json", doc);
  w.finish();
  if (a.json) {
    out << doc.dump() << '\n';
  } else {
    out << "test log-likelihood on (" << shown(e.from) << ", " << shown(e.to) << "]: "
        << shown(e.log_likelihood) << " over " << e.events << " events (" << shown(e.per_event())
        << " per event)\n";
  }
  return e;
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
  std::vector<fs::path> fits;
  std::optional<fs::path> truth;
  std::optional<fs::path> events;  // defaults to the first fit's training events
  std::optional<fs::path> out;
  std::size_t grid_points = 1001;
};

struct CompareRow {
  std::string label;
  Method method = Method::vi;
  std::optional<double> nrmse;
  std::optional<Evaluation> test;
};

// RMSE against the truth, scaled by the truth's root-mean-square.
[[nodiscard]] inline double normalized_rmse(std::span<const double> est, std::span<const double> truth) {
  require(est.size() == truth.size() && !truth.empty(), "normalized RMSE needs matching non-empty curves");
  double se = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    se += (est[i] - truth[i]) * (est[i] - truth[i]);
    ss += truth[i] * truth[i];
  }
  require<NumericalError>(ss > 0.0, "truth intensity is identically zero");
  return std::sqrt(se / ss);
}

// Highest time at which a fit can be queried.
[[nodiscard]] inline double query_limit(const ModelFit& fit) {
  double limit = std::numeric_limits<double>::infinity();
  for (const auto& d : fit.dims)
    if (d.chain) limit = std::min(limit, d.chain->horizon);
  return limit;
}

inline std::vector<CompareRow> cmd_compare(const CompareArgs& a, std::ostream& out) {
  require(!a.fits.empty(), "compare needs at least one fit directory");
  std::vector<LoadedFit> fits;
  for (const auto& f : a.fits) fits.push_back(load_fit(f));
  const int dims = fits.front().fit.model.dims;
  for (const auto& f : fits) require(f.fit.model.dims == dims, "all fits must have the same number of dimensions");
  const auto ev = a.events ? load_events(*a.events, std::nullopt, dims > 1 ? dims : 0) : fits.front().training;
  const fs::path dir = resolve_output(a.out, "", "compare", "nhgps_output/compare");

  std::optional<GroundTruth> truth;
  if (a.truth) {
    // Accept either the simulate output directory or its truth/ folder.
    const fs::path nested = fs::path(*a.truth) / "truth";
    truth = load_truth(fs::exists(nested / "truth.json") ? nested : fs::path(*a.truth));
    require(truth->dims() == dims, "truth bundle has a different number of dimensions");
  }
  double end = ev.window;
  for (const auto& f : fits) end = std::min(end, query_limit(f.fit));
  if (end < ev.window) {
    notice("common grid clipped to [0, " + shown(end) + "], the shortest range covered by every fit");
  }
  const auto grid = trapezoid_grid(0.0, end, a.grid_points);

  std::map<std::string, int> seen;
  std::vector<CompareRow> rows;
  std::vector<std::string> header{"time"};
  std::vector<std::vector<double>> cols{grid.points};
  std::vector<std::vector<double>> truth_curves;
  if (truth) {
    for (int r = 0; r < dims; ++r) {
      truth_curves.push_back(truth->intensity(r, grid.points, ev));
      header.push_back("truth" + dim_suffix(dims, r));
      cols.push_back(truth_curves.back());
    }
  }
  for (const auto& f : fits) {
    CompareRow row;
    row.method = f.fit.method;
    const std::string base = to_string(f.fit.method);
    const int n = ++seen[base];
    row.label = n == 1 ? base : base + "_" + std::to_string(n);
    std::vector<double> all_est, all_truth;
    for (const auto& d : f.fit.dims) {
      require(d.predictive != nullptr, "fit has no retained posterior samples");
      auto curve = d.predictive->intensity(grid.points, ev);
      if (truth) {
        all_est.insert(all_est.end(), curve.begin(), curve.end());
        all_truth.insert(all_truth.end(), truth_curves[static_cast<std::size_t>(d.dim)].begin(),
                         truth_curves[static_cast<std::size_t>(d.dim)].end());
      }
      header.push_back(row.label + dim_suffix(dims, d.dim));
      cols.push_back(std::move(curve));
    }
    if (truth) row.nrmse = normalized_rmse(all_est, all_truth);
    if (ev.window > f.fit.window && ev.window <= query_limit(f.fit) && count_in(ev, f.fit.window, ev.window) > 0) {
      row.test = evaluate(f.fit, ev, std::nullopt, std::nullopt);
    }
    rows.push_back(std::move(row));
  }

  Json table = Json::array();
  std::ostringstream csv;
  csv << "label,method,nrmse,test_log_likelihood,test_events,test_log_likelihood_per_event\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("NA"); };
  for (const auto& r : rows) {
    Json j = {{"label", r.label}, {"method", to_string(r.method)}};
    j["nrmse"] = r.nrmse ? Json(*r.nrmse) : Json(nullptr);
    j["test_log_likelihood"] = r.test ? Json(r.test->log_likelihood) : Json(nullptr);
    j["test_events"] = r.test ? Json(r.test->events) : Json(nullptr);
    j["test_log_likelihood_per_event"] = r.test ? Json(r.test->per_event()) : Json(nullptr);
    table.push_back(j);
    csv << r.label << ',' << to_string(r.method) << ',' << cell(r.nrmse) << ','
        << cell(r.test ? std::optional(r.test->log_likelihood) : std::nullopt) << ','
        << (r.test ? std::to_string(r.test->events) : std::string("NA")) << ','
        << cell(r.test ? std::optional(r.test->per_event()) : std::nullopt) << '\n';
  }
  BundleWriter w(dir, "compare");
  w.write("intensity.csv", format_table(header, cols));
  w.write("summary.csv", csv.str());
  w.write_json("summary.json", table);
  w.finish();

  auto brief = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  out << std::left << std::setw(12) << "label" << std::setw(12) << "nrmse" << "test ll/event\n";
  for (const auto& r : rows) {
    out << std::setw(12) << r.label << std::setw(12) << brief(r.nrmse)
        << brief(r.test ? std::optional(r.test->per_event()) : std::nullopt) << '\n';
  }
  out << std::right << "comparison -> " << dir.string() << '\n';
  return rows;
}

}  // namespace nhgps::cli
