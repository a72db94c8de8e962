#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dln/experiment.hpp"

using namespace dln;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  SUBCASE("violations are collected, not thrown") {
    ValidationReport report;
    parse_config_text(
        "kind = trajectory\nseeds = 0\np = 1.0\nk = 10\nd = 5\n"
        "schedule = geometric\neta0 = 1e-2\ndecay_q = 1.0\n",
        report);
    CHECK(!report.ok());
    bool saw_p = false, saw_k = false, saw_q = false;
    for (const auto& e : report.errors) {
      saw_p = saw_p || e.find("p:") != std::string::npos;
      saw_k = saw_k || e.find("k:") != std::string::npos;
      saw_q = saw_q || e.find("decay") != std::string::npos;
    }
    CHECK(saw_p);
    CHECK(saw_k);
    CHECK(saw_q);
  }
  SUBCASE("unknown keys are rejected") {
    ValidationReport report;
    parse_config_text("kind = trajectory\nbogus_key = 1\n", report);
    CHECK(!report.ok());
  }
  SUBCASE("comments, ranges and overrides") {
    ValidationReport report;
    const ExperimentConfig config = parse_config_text(
        "# comment\nkind = trajectory\nseeds = 0:2,7\nd = 20\nk = 2\nm = 50\n"
        "p = 0.1\ndepths = 1,2\nT = 10\nalpha = 1e-3\n"
        "T = 20  # later assignment wins\n",
        report);
    CHECK(report.ok());
    CHECK(config.seeds == std::vector<std::uint64_t>{0, 1, 2, 7});
    CHECK(config.iterations == 20);
    CHECK(config.depths == std::vector<int>{1, 2});
  }
  SUBCASE("radius warning is not an error") {
    ValidationReport report;
    parse_config_text(
        "kind = flatness_sweep\nseeds = 0\nd = 100\nk = 2\nm = 50\np = 0.1\n"
        "noise_param = 1\ngammas = 1e-3,1e-2,1e-1,1\n",
        report);
    CHECK(report.ok());
    CHECK(!report.warnings.empty());
  }
}

TEST_CASE("shipped presets all validate") {
  for (const auto& [name, text] : preset_configs()) {
    CAPTURE(name);
    ValidationReport report;
    parse_config_text(text, report);
    for (const auto& e : report.errors) {
      CAPTURE(e);
      CHECK(false);
    }
    CHECK(report.ok());
  }
  CHECK(preset_configs().size() == 7);
}

TEST_CASE("run_experiment rejects an invalid config") {
  ExperimentConfig config;
  config.kind = ExperimentKind::trajectory;
  config.p = 2.0;
  CHECK_THROWS_AS(run_experiment(config), std::invalid_argument);
}

TEST_SUITE("integration") {
  TEST_CASE("trajectory experiment writes csv, sidecars and summary") {
    const fs::path dir = fresh_dir("dln_exp_traj");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = trajectory\nseeds = 0,1\nd = 10\nk = 2\nm = 40\np = 0.1\n"
        "noise_param = 5\ndepths = 1,2\nalpha = 1e-3\neta = 1e-3\nT = 200\n"
        "log_stride = 50\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    CHECK(fs::exists(dir / "traj_N1_seed0.csv"));
    CHECK(fs::exists(dir / "traj_N2_seed1.csv"));
    CHECK(fs::exists(dir / "traj_N2_seed1.json"));
    CHECK(fs::exists(result.summary_path));
    CHECK(!result.any_diverged);

    const std::string csv = slurp(dir / "traj_N1_seed0.csv");
    CHECK(csv.rfind("iteration,", 0) == 0);

    SUBCASE("summaries are byte identical across reruns") {
      const std::string first = slurp(result.summary_path);
      const ExperimentResult again = run_experiment(config);
      CHECK(slurp(again.summary_path) == first);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("prop1 experiment aggregates deviation ratios") {
    const fs::path dir = fresh_dir("dln_exp_prop1");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = prop1_sweep\nseeds = 0:4\nd = 20\nk = 3\np = 0.2\n"
        "noise_param = 5\nm_list = 400,1600\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    const std::string summary = slurp(result.summary_path);
    CHECK(summary.find("ratio_400_to_1600") != std::string::npos);
    CHECK(summary.find("mean_deviation_m400") != std::string::npos);
    const std::string table = slurp(dir / "deviations.csv");
    CHECK(table.rfind("m,seed,deviation", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 11);  // header + 10 rows
    fs::remove_all(dir);
  }

  TEST_CASE("flatness experiment reports slopes per depth") {
    const fs::path dir = fresh_dir("dln_exp_flat");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = flatness_sweep\nseeds = 0\nd = 60\nk = 2\nm = 25\np = 0.2\n"
        "noise_param = 5\ndepths = 1,2\ngammas = 1e-4,4.6e-4,2.2e-3,1e-2\n"
        "probe_budget = 120\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    CHECK(fs::exists(dir / "flatness_N1_seed0.csv"));
    CHECK(fs::exists(dir / "flatness_N2_seed0.csv"));
    const std::string summary = slurp(result.summary_path);
    CHECK(summary.find("median_slope_N1") != std::string::npos);
    CHECK(summary.find("median_slope_N2") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("landscape_grid experiment writes the surface") {
    const fs::path dir = fresh_dir("dln_exp_grid");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = landscape_grid\nseeds = 0\nd = 60\nk = 2\nm = 25\np = 0.2\n"
        "noise_param = 5\ndepths = 1\ngammas = 1e-3\nprobe_budget = 80\n"
        "curvature_iters = 30\ngrid_alphas = -1e-3:1e-3:5\n"
        "grid_betas = -1e-3:1e-3:5\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    const std::string csv = slurp(dir / "grid_seed0.csv");
    CHECK(csv.rfind("alpha,beta,loss", 0) == 0);
    const std::string reports = slurp(dir / "probe_reports.csv");
    CHECK(reports.rfind("seed,gamma,min_delta_loss", 0) == 0);
    const std::string summary = slurp(result.summary_path);
    CHECK(summary.find("seeds_with_descent") != std::string::npos);
    CHECK(summary.find("lambda_min") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("matrix experiment records final errors") {
    const fs::path dir = fresh_dir("dln_exp_matrix");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = matrix\nseeds = 0\nd = 6\nr = 2\nm = 30\np = 0\n"
        "noise_param = 5\ndepths = 2\nalpha = 1e-2\neta = 1e-3\nT = 300\n"
        "log_stride = 100\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    CHECK(fs::exists(dir / "matrix_N2_seed0.csv"));
    const std::string summary = slurp(result.summary_path);
    CHECK(summary.find("final_gen_error") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("divergent runs are flagged through the result") {
    const fs::path dir = fresh_dir("dln_exp_diverge");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = trajectory\nseeds = 0\nd = 10\nk = 2\nm = 40\np = 0.1\n"
        "noise_param = 5\ndepths = 2\nalpha = 1e-3\neta = 1e8\nT = 3000\n"
        "log_stride = 10\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    CHECK(result.any_diverged);  // the CLI maps this to exit code 2
    fs::remove_all(dir);
  }

  TEST_CASE("dynamics_compare experiment reports the gap") {
    const fs::path dir = fresh_dir("dln_exp_dyn");
    ValidationReport report;
    ExperimentConfig config = parse_config_text(
        "kind = dynamics_compare\nseeds = 0\nd = 10\nk = 2\nm = 4000\np = 0\n"
        "noise_param = 5\ndepths = 2\nalpha = 1e-3\neta = 3e-3\nT = 3000\n"
        "log_stride = 100\ncompare_cutoff = 1e-2\nout_dir = " + dir.string() + "\n",
        report);
    REQUIRE(report.ok());
    const ExperimentResult result = run_experiment(config);
    CHECK(fs::exists(dir / "empirical_seed0.csv"));
    CHECK(fs::exists(dir / "population_seed0.csv"));
    const std::string summary = slurp(result.summary_path);
    CHECK(summary.find("max_relative_gap") != std::string::npos);
    fs::remove_all(dir);
  }
}
