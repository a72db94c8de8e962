#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dln/data.hpp"
#include "dln/landscape.hpp"
#include "dln/optimizer.hpp"

namespace dln {

enum class ExperimentKind {
  trajectory,
  landscape_grid,
  flatness_sweep,
  prop1_sweep,
  matrix,
  dynamics_compare,
};

std::string to_string(ExperimentKind kind);

/// Flat, typed view of one experiment. Parsed from a key = value config file
/// (# comments allowed); every run is fully determined by the config plus its
/// seed list.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::trajectory;
  std::string out_dir = "out";
  std::vector<std::uint64_t> seeds{0};

  // data
  int d = 50;
  int k = 5;
  int m = 500;
  double p = 0.1;
  NoiseSpec noise;
  double theta_min = 1.0;
  double theta_max = 2.0;

  // optimizer
  std::vector<int> depths{2};
  double alpha = 1e-6;
  StepSchedule schedule = StepSchedule::constant_step(1e-3);
  std::int64_t iterations = 100000;
  std::int64_t log_stride = 0;
  bool gaussian_init = false;

  // landscape
  std::vector<double> gammas{1e-3};
  ProbeMethod probe;
  double eps_smooth = 1e-7;
  int curvature_iters = 200;
  std::vector<double> grid_alphas;
  std::vector<double> grid_betas;

  // prop1_sweep
  std::vector<int> m_list;
  int n_mc = 1000000;

  // matrix
  int rank = 3;

  // dynamics_compare
  std::optional<double> eta_pop_scale;  // unset -> phi factor at ||theta*||
  double compare_cutoff = 0.0;          // 0 -> whole trajectory

  /// Raw key/value pairs as parsed, echoed into summaries.
  std::map<std::string, std::string> raw;
};

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

ExperimentConfig parse_config_text(const std::string& text,
                                   ValidationReport& report);
ExperimentConfig load_config(const std::filesystem::path& path,
                             ValidationReport& report);

/// Pure structural check; see the config schema in the README.
ValidationReport validate_config(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<std::filesystem::path> files;
  std::filesystem::path summary_path;
  bool any_diverged = false;
};

/// Runs the experiment with a bounded worker pool (DLN_WORKERS, default
/// hardware concurrency). Output files are written atomically; on failure all
/// partial outputs are removed. Throws std::invalid_argument when validation
/// fails.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Shipped preset configs, keyed by name.
const std::map<std::string, std::string>& preset_configs();

}  // namespace dln
