#include <CLI11.hpp>

#include <iostream>

#include "nhgps/cli.hpp"

using namespace nhgps;

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear Hawkes processes with Gaussian-process intensities: simulate, fit, check and compare."};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only report warnings on stderr");
  app.fallthrough();

  cli::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a ground truth and simulate events from it");
  simulate->add_option("-c,--config", sim.config, "Run config (JSON)")->required();
  simulate->add_option("--set", sim.overrides, "Override a config entry, section.key=value");
  simulate->add_option("-o,--out", sim.out, "Output directory");
  simulate->add_option("--split", sim.split, "Also write train.csv with the events before this time");
  simulate->add_option("--grid", sim.grid_points, "Points on the truth intensity grid")->capture_default_str();

  cli::FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the model by Gibbs sampling or variational inference");
  fit_cmd->add_option("-c,--config", fit.config, "Run config (JSON)")->required();
  fit_cmd->add_option("-e,--events", fit.events, "Event CSV (overrides paths.events)");
  fit_cmd->add_option("--set", fit.overrides, "Override a config entry, section.key=value");
  fit_cmd->add_option("-o,--out", fit.out, "Output directory");

  cli::GofArgs gof;
  auto* gof_cmd = app.add_subcommand("gof", "Time-rescaling KS test and QQ data for a fit");
  gof_cmd->add_option("-f,--fit", gof.fit, "Fit directory")->required();
  gof_cmd->add_option("-e,--events", gof.events, "Events to rescale (default: the training events)");
  gof_cmd->add_option("-o,--out", gof.out, "Output directory (default: <fit>/gof)");
  gof_cmd->add_option("--resolution", gof.resolution, "Quadrature steps per mean inter-event gap")->capture_default_str();
  gof_cmd->add_flag("--json", gof.json, "Print a JSON summary");

  cli::EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Held-out log-likelihood of test events");
  eval_cmd->add_option("-f,--fit", eval.fit, "Fit directory")->required();
  eval_cmd->add_option("-e,--events", eval.events, "Event CSV holding history and test events")->required();
  eval_cmd->add_option("--from", eval.from, "Start of the test window (default: end of training)");
  eval_cmd->add_option("--to", eval.to, "End of the test window (default: the file's window)");
  eval_cmd->add_option("-o,--out", eval.out, "Output directory (default: <fit>/evaluate)");
  eval_cmd->add_flag("--json", eval.json, "Print a JSON summary");

  cli::CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Align fitted intensities with each other and the truth");
  cmp_cmd->add_option("-f,--fit", cmp.fits, "Fit directories")->required();
  cmp_cmd->add_option("-t,--truth", cmp.truth, "Truth directory written by simulate (its truth/ folder)");
  cmp_cmd->add_option("-e,--events", cmp.events, "Events to condition on and score (default: first fit's)");
  cmp_cmd->add_option("-o,--out", cmp.out, "Output directory");
  cmp_cmd->add_option("--grid", cmp.grid_points, "Points on the comparison grid")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kValidation;
  }
  if (quiet) {
    set_diagnostic_sink([](Severity s, const std::string& msg) {
      if (s == Severity::warning) std::cerr << "warning: " << msg << '\n';
    });
  }

  return cli::run_guarded(
      [&] {
        if (*simulate) (void)cli::cmd_simulate(sim, std::cout);
        if (*fit_cmd) (void)cli::cmd_fit(fit, std::cout);
        if (*gof_cmd) (void)cli::cmd_gof(gof, std::cout);
        if (*eval_cmd) (void)cli::cmd_evaluate(eval, std::cout);
        if (*cmp_cmd) (void)cli::cmd_compare(cmp, std::cout);
      },
      std::cerr);
}
