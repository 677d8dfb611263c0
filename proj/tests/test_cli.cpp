#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <sstream>

#include "nhgps/cli.hpp"

using namespace nhgps;

namespace {

const char* kBase = R"({
  "model": {
    "background": {"amplitude": 1.0, "lengthscale": 0.5},
    "memory": {"amplitude": 1.0, "lengthscale": 0.07},
    "decay": 20.0,
    "lambda_prior": {"shape": 2.5, "rate": 0.007}
  },
  "seed": 4,
  "simulate": {"lambda": 320.0, "window": 1.5}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("nhgps_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
             std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path config(const std::string& name, const Json& extra = Json::object()) {
    Json j = Json::parse(kBase);
    j.merge_patch(extra);
    const fs::path p = root_ / (name + ".json");
    detail::write_file(p, j.dump(2));
    return p;
  }

  fs::path simulate(const fs::path& cfg, const std::string& name, std::optional<double> split = 1.0) {
    cli::SimulateArgs a;
    a.config = cfg;
    a.out = root_ / name;
    a.split = split;
    return cli::cmd_simulate(a, sink_);
  }

  fs::path fit(const fs::path& cfg, const fs::path& events, const std::string& name) {
    cli::FitArgs a;
    a.config = cfg;
    a.events = events;
    a.out = root_ / name;
    return cli::cmd_fit(a, sink_);
  }

  fs::path root_;
  std::ostringstream sink_;
};

}  // namespace

TEST_F(CliTest, SimulateIsDeterministicPerSeed) {
  const auto cfg = config("sim");
  const auto a = simulate(cfg, "a");
  const auto b = simulate(cfg, "b");
  EXPECT_EQ(detail::read_file(a / "manifest.json"), detail::read_file(b / "manifest.json"));
  for (const char* f : {"events.csv", "train.csv", "truth/truth.json", "truth/intensity.csv", "config.json"})
    EXPECT_TRUE(fs::exists(a / f)) << f;

  const auto c = simulate(config("other", {{"seed", 5}}), "c");
  EXPECT_NE(detail::read_file(a / "events.csv"), detail::read_file(c / "events.csv"));

  const auto gt = load_truth(a / "truth");
  const auto ev = load_events(a / "events.csv");
  const auto grid = load_table(a / "truth" / "intensity.csv");
  const auto t = grid.column("time");
  const auto stored = grid.column("intensity");
  const auto again = gt.intensity(0, t, ev);
  for (std::size_t i = 0; i < t.size(); i += 97) EXPECT_DOUBLE_EQ(again[i], stored[i]);
}

TEST_F(CliTest, SimulateRejectsDegenerateWindow) {
  const auto cfg = config("zero", {{"simulate", {{"window", 0.0}}}});
  EXPECT_THROW((void)simulate(cfg, "zero", std::nullopt), ValidationError);
  EXPECT_THROW((void)simulate(config("nosim"), "bad", 2.0), ValidationError);
}

TEST_F(CliTest, VariationalFitWritesBundle) {
  const auto sim = simulate(config("sim"), "sim");
  const auto dir = fit(config("vi", {{"vi", {{"max_rounds", 50}}}}), sim / "train.csv", "vi");
  EXPECT_TRUE(fs::exists(dir / "dim0" / "elbo_trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "intensity.csv"));
  EXPECT_TRUE(load_manifest(dir).complete);
  EXPECT_TRUE(verify_manifest(dir).empty());
  const auto grid = load_table(dir / "intensity.csv");
  for (const char* c : {"time", "intensity", "phi_mean", "phi_lo", "phi_hi"}) EXPECT_NO_THROW((void)grid.column(c));
}

TEST_F(CliTest, GibbsIterationsGiveThatManySamples) {
  const auto sim = simulate(config("sim"), "sim");
  const auto dir = fit(config("g", {{"gibbs", {{"iterations", 10}, {"burn_in", 0}}}}), sim / "train.csv", "g");
  EXPECT_EQ(load_table(dir / "dim0" / "samples" / "lambda.csv").rows.size(), 10u);
}

TEST_F(CliTest, FitIsByteReproducible) {
  const auto sim = simulate(config("sim"), "sim");
  const auto cfg = config("g", {{"gibbs", {{"iterations", 30}}}});
  const auto a = fit(cfg, sim / "train.csv", "a");
  const auto b = fit(cfg, sim / "train.csv", "b");
  EXPECT_EQ(detail::read_file(a / "manifest.json"), detail::read_file(b / "manifest.json"));
}

TEST_F(CliTest, FailedFitLeavesPartialManifest) {
  detail::write_file(root_ / "typed.csv", "# T=1\ntime,type\n0.1,0\n0.5,1\n");
  const auto cfg = config("vi", {{"vi", Json::object()}});
  EXPECT_THROW((void)fit(cfg, root_ / "typed.csv", "broken"), ValidationError);
  EXPECT_FALSE(load_manifest(root_ / "broken").complete);
  EXPECT_THROW((void)load_fit(root_ / "broken"), IoError);
}

TEST_F(CliTest, MultivariateFitWritesOneBundlePerDimension) {
  const auto cfg = config("mv", {{"model", {{"dims", 2}, {"coupling", "full"}}},
                                 {"simulate", {{"lambda", {150.0, 150.0}}}},
                                 {"vi", {{"max_rounds", 40}}}});
  const auto sim = simulate(cfg, "sim");
  const auto dir = fit(cfg, sim / "train.csv", "fit");
  EXPECT_TRUE(fs::exists(dir / "dim0" / "state.json"));
  EXPECT_TRUE(fs::exists(dir / "dim1" / "state.json"));

  cli::GofArgs g;
  g.fit = dir;
  (void)cli::cmd_gof(g, sink_);
  const auto doc = load_json(dir / "gof" / "gof.json");
  EXPECT_EQ(doc["dimensions"].size(), 2u);
}

TEST_F(CliTest, GofIsDeterministicAndWritesQq) {
  const auto sim = simulate(config("sim"), "sim");
  const auto dir = fit(config("vi", {{"vi", {{"max_rounds", 50}}}}), sim / "train.csv", "vi");
  cli::GofArgs g;
  g.fit = dir;
  g.json = true;
  std::ostringstream first, second;
  (void)cli::cmd_gof(g, first);
  (void)cli::cmd_gof(g, second);
  EXPECT_EQ(first.str(), second.str());
  const auto doc = Json::parse(first.str());
  const double p = doc["dimensions"][0]["p_value"].get<double>();
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_EQ(load_table(dir / "gof" / "qq.csv").header.size(), 4u);
}

TEST_F(CliTest, EvaluateMatchesLibraryAndRejectsEmptyTests) {
  const auto sim = simulate(config("sim"), "sim");
  const auto dir = fit(config("vi", {{"vi", {{"max_rounds", 50}}}}), sim / "train.csv", "vi");
  cli::EvaluateArgs e;
  e.fit = dir;
  e.events = sim / "events.csv";
  const auto a = cli::cmd_evaluate(e, sink_);
  const auto b = cli::cmd_evaluate(e, sink_);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
  EXPECT_DOUBLE_EQ(a.from, 1.0);
  EXPECT_DOUBLE_EQ(a.to, 1.5);
  const auto loaded = load_fit(dir);
  EXPECT_DOUBLE_EQ(a.log_likelihood, held_out_log_likelihood(loaded.fit, load_events(e.events), 1.0, 1.5));
  EXPECT_TRUE(std::isfinite(a.per_event()));
  EXPECT_TRUE(fs::exists(dir / "evaluate" / "metrics.json"));

  e.events = sim / "train.csv";
  EXPECT_THROW((void)cli::cmd_evaluate(e, sink_), ValidationError);
  e.events = sim / "events.csv";
  e.from = 1.5;
  EXPECT_THROW((void)cli::cmd_evaluate(e, sink_), ValidationError);
}

TEST(CliEvaluate, ConstantIntensityMatchesClosedForm) {
  const auto kernel = HawkesKernel::univariate({1.0, 0.5}, {1.0, 0.07}, {20.0}, {}, 1.0);
  const PhiBasis basis(kernel, 2.0);
  const double q[1] = {0.3};
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(basis.size());
  beta(0) = 0.4 / basis.design(q)(0, 0);
  ChainOutput chain;
  chain.kernel_trace.push_back(kernel.parameters());
  chain.horizon = 2.0;
  chain.snapshots.push_back({50.0, beta, 0});

  ModelFit fit;
  fit.method = Method::gibbs;
  fit.window = 1.0;
  fit.model = MultivariateModel::from(ModelHyper{});
  DimensionFit d(0, HistorySpec::all_events(), kernel, {});
  d.predictive = std::make_shared<ChainPredictive>(kernel, d.spec, chain);
  fit.dims.push_back(std::move(d));

  // Memory weights are zero, so the intensity is c = 50 sigmoid(0.4) whatever the history.
  const auto ev = EventSequence::make({0.2, 0.9, 1.1, 1.3, 1.35, 1.8}, 2.0);
  const auto e = cli::evaluate(fit, ev, std::nullopt, std::nullopt);
  const double c = 50.0 * sigmoid(0.4);
  EXPECT_EQ(e.events, 4u);
  EXPECT_NEAR(e.log_likelihood, 4.0 * std::log(c) - c * 1.0, 1e-6);
}

TEST_F(CliTest, CompareAlignsFitsAndTruth) {
  const auto sim = simulate(config("sim"), "sim");
  const auto vi = fit(config("vi", {{"vi", {{"max_rounds", 50}}}}), sim / "train.csv", "vi");
  const auto gb = fit(config("g", {{"gibbs", {{"iterations", 200}, {"horizon", 1.5}}}}), sim / "train.csv", "g");
  cli::CompareArgs c;
  c.fits = {vi, gb, vi};
  c.truth = sim / "truth";
  c.events = sim / "events.csv";
  c.out = root_ / "cmp";
  const auto rows = cli::cmd_compare(c, sink_);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].label, "vi_2");
  for (const auto& r : rows) {
    ASSERT_TRUE(r.nrmse.has_value());
    EXPECT_LT(*r.nrmse, 1.0);
    ASSERT_TRUE(r.test.has_value());
  }
  EXPECT_EQ(rows[0].nrmse, rows[2].nrmse);
  EXPECT_EQ(load_table(root_ / "cmp" / "intensity.csv").header,
            (std::vector<std::string>{"time", "truth", "vi", "gibbs", "vi_2"}));

  cli::CompareArgs single;
  single.fits = {vi};
  single.out = root_ / "single";
  const auto one = cli::cmd_compare(single, sink_);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_FALSE(one[0].nrmse.has_value());
  EXPECT_EQ(load_table(root_ / "single" / "intensity.csv").header.size(), 2u);
}

TEST(CliPlumbing, ErrorsMapToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(cli::run_guarded([] {}, err), cli::kOk);
  EXPECT_EQ(cli::run_guarded([] { throw ValidationError("v"); }, err), cli::kValidation);
  EXPECT_EQ(cli::run_guarded([] { throw NumericalError("n"); }, err), cli::kNumerical);
  EXPECT_EQ(cli::run_guarded([] { throw SingularKernelError("s"); }, err), cli::kNumerical);
  EXPECT_EQ(cli::run_guarded([] { throw IoError("i"); }, err), cli::kIo);
  EXPECT_NE(err.str().find("io error: i"), std::string::npos);
}

TEST(CliPlumbing, OutputRootPrecedence) {
  ::unsetenv(cli::kOutputRootEnv);
  EXPECT_EQ(cli::resolve_output(std::nullopt, "", "fit", "fallback"), fs::path("fallback"));
  ::setenv(cli::kOutputRootEnv, "/tmp/root", 1);
  EXPECT_EQ(cli::resolve_output(std::nullopt, "", "fit", "fallback"), fs::path("/tmp/root/fit"));
  EXPECT_EQ(cli::resolve_output(std::nullopt, "cfg", "fit", "fallback"), fs::path("cfg"));
  EXPECT_EQ(cli::resolve_output(fs::path("flag"), "cfg", "fit", "fallback"), fs::path("flag"));
  ::unsetenv(cli::kOutputRootEnv);
}

TEST(CliBinary, ExitCodes) {
  const std::string bin = NHGPS_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("fit -c /nonexistent/config.json -e x.csv"), 3);
  const fs::path cfg = fs::temp_directory_path() / ("nhgps_cli_bin_" + std::to_string(::getpid()) + ".json");
  detail::write_file(cfg, kBase);
  EXPECT_EQ(run("simulate -c " + cfg.string() + " --set simulate.windw=2"), 1);
  EXPECT_EQ(run("simulate -c " + cfg.string() + " --set simulate.window=0"), 1);
  EXPECT_EQ(run("fit -c " + cfg.string() + " -e /nonexistent/events.csv"), 1);
  fs::remove(cfg);
}
