#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "dln/data.hpp"
#include "dln/loss.hpp"
#include "dln/model.hpp"

namespace dln {

/// Step-size policy: constant eta, geometric eta0 * q^t, or piecewise
/// constant with strictly increasing iteration thresholds.
struct StepSchedule {
  enum class Kind { constant, geometric, piecewise };

  Kind kind = Kind::constant;
  double eta = 1e-3;
  double decay = 1.0;                                     // geometric q
  std::vector<std::pair<std::int64_t, double>> pieces;    // (from_iter, eta)

  static StepSchedule constant_step(double eta);
  static StepSchedule geometric(double eta0, double q);
  static StepSchedule piecewise(std::vector<std::pair<std::int64_t, double>> pieces);

  double at(std::int64_t t) const;
  void validate() const;
};

struct TrajectoryPoint {
  std::int64_t iter = 0;
  double train_loss = 0.0;
  double gen_error = 0.0;
  double balance_gap = 0.0;   // 0 for one-layer models
  double signal_error = 0.0;  // ||S_t - theta*_supp||
  double residual_norm = 0.0; // ||E_t||
  double step_size = 0.0;
};

struct TrajectoryRecord {
  std::vector<TrajectoryPoint> points;
  LayerStack final_stack;
  std::int64_t total_iters = 0;
  std::int64_t log_stride = 1;
  bool diverged = false;

  double min_gen_error() const;
  double final_gen_error() const;
};

/// One simultaneous update of every layer from the pre-step stack:
/// stack - eta * subgradient(stack).
LayerStack subgm_step(const LayerStack& stack, const Dataset& ds, double eta,
                      const SubgradPolicy& policy = {});

struct RunConfig {
  int n_layers = 2;
  double alpha = 1e-6;
  StepSchedule schedule;
  std::int64_t iterations = 1000;
  std::int64_t log_stride = 0;  // 0 -> max(1, T / 5000)
  SubgradPolicy policy;
  bool gaussian_init = false;   // per-entry N(0, alpha^(2/N) / d) instead of
                                // the balanced alpha^(1/N) * 1
  std::uint64_t init_seed = 0;
  double divergence_factor = 1e6;  // abort when gen error > factor * ||theta*||
};

/// SubGM from balanced_init (or Gaussian init when configured), logging
/// metrics every log_stride iterations and at t = 0 and t = T. Non-finite
/// iterates or a runaway generalization error set the divergence flag and
/// truncate the trajectory.
TrajectoryRecord run_subgm(const Dataset& ds, const RunConfig& config);

struct EscapeWindow {
  std::optional<std::int64_t> t_enter;  // first logged t with error <= tol
  std::optional<std::int64_t> t_exit;   // first logged t > t_enter with error > 2 tol

  /// t_exit, or fallback when the trajectory never exits.
  std::int64_t exit_or(std::int64_t fallback) const {
    return t_exit ? *t_exit : fallback;
  }
};

EscapeWindow escape_time(const TrajectoryRecord& traj, double tol);

/// One row per logged iteration; a JSON sidecar with the run parameters is
/// written by the experiment runner.
void save_trajectory_csv(const TrajectoryRecord& traj,
                         const std::filesystem::path& path);

}  // namespace dln
