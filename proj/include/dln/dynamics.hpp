#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dln/model.hpp"
#include "dln/optimizer.hpp"
#include "dln/rng.hpp"

namespace dln {

/// Coordinate dynamics of SubGM on the population objective
/// ||prod_j w_j - theta*||: each layer moves along the normalized population
/// residual direction, optionally perturbed by a per-coordinate deviation
/// drawn fresh from Uniform(-delta, delta) each step.
struct PopulationState {
  LayerStack stack;
  Vec theta_star;
  double delta = 0.0;  // 0 -> exact population limit
  double eta = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t t = 0;
};

/// The per-coordinate deviations the next step will use: zero in exact mode,
/// otherwise Uniform(-delta, delta) drawn from (seed, t) so a step can be
/// replayed.
Vec population_deviations(const PopulationState& state);

/// Exact 2-layer update; returns false (state untouched) at a zero-residual
/// fixed point.
bool population_step_2layer(PopulationState& state);

/// Simultaneous N-layer update; coincides with the 2-layer path for N = 2.
bool population_step_nlayer(PopulationState& state);

/// Runs the population dynamics on the optimizer's trajectory schema
/// (train_loss column holds the population objective).
TrajectoryRecord run_population(PopulationState state, std::int64_t iterations,
                                std::int64_t log_stride);

enum class TrajectoryMetric { generalization_error, balancedness_gap };

/// Max over shared logged iterations of
/// |metric_pop - metric_emp| / (|metric_pop| + 1e-12). Both trajectories must
/// be logged on the same iteration grid. When `until_empirical_below` is set,
/// comparison stops after the first logged point where the empirical metric
/// drops below the threshold.
double compare_to_empirical(const TrajectoryRecord& population,
                            const TrajectoryRecord& empirical,
                            TrajectoryMetric metric,
                            std::optional<double> until_empirical_below = {});

}  // namespace dln
