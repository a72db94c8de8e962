#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dln/data.hpp"
#include "dln/loss.hpp"
#include "dln/model.hpp"
#include "dln/rng.hpp"

namespace dln {

/// Per-layer perturbation, same shape as the stack it applies to.
using Perturbation = std::vector<Vec>;

struct ProbeMethod {
  enum class Kind { random_sampling, projected_descent };

  Kind kind = Kind::projected_descent;
  int budget = 500;        // samples, or descent iterations per restart
  int restarts = 2;        // projected_descent only
  std::uint64_t seed = 0;
  double step_scale = 0.5; // initial per-coordinate step, in units of gamma
};

struct ProbeReport {
  double gamma = 0.0;
  double min_delta_loss = 0.0;  // <= 0; the zero perturbation is a candidate
  Perturbation argmin;
  ProbeMethod method;
  std::int64_t n_evals = 0;
};

/// Searches the per-layer ℓ∞ ball of radius gamma around stack_star for the
/// largest decrease of the ℓ1 loss. Candidates are scored by the exact
/// (unsmoothed) loss. random_sampling alternates ±gamma vertex draws with
/// Uniform(-gamma, gamma) draws; projected_descent runs sign-based descent
/// steps on a radius-adapted smoothing of the loss, clipped to the ball.
/// warm_start, when given, is clipped into the ball and added to the
/// candidate set.
ProbeReport probe_descent(const LayerStack& stack_star, const Dataset& ds,
                          double gamma, const ProbeMethod& method,
                          const Perturbation* warm_start = nullptr);

struct FlatnessFit {
  double slope = 0.0;      // d log|min_delta_loss| / d log gamma
  double intercept = 0.0;
  std::vector<ProbeReport> reports;
  std::vector<double> fitted_gammas;
  std::vector<double> skipped_gammas;  // |min_delta_loss| at the noise floor
};

/// Probes each radius (ascending, warm-starting projected descent from the
/// previous argmin) and least-squares fits log|min_delta_loss| against
/// log gamma. Radii with |min_delta_loss| <= 1e-12 are excluded and flagged.
/// Requires at least 4 radii spanning at least one decade.
FlatnessFit flatness_exponent(const LayerStack& stack_star, const Dataset& ds,
                              std::vector<double> gammas, ProbeMethod method);

struct CurvatureReport {
  double lambda_min = 0.0;
  Perturbation direction;  // unit Euclidean norm over concatenated layers
  double eps_smooth = 0.0;
  int iters = 0;
};

/// Minimum Hessian eigenvalue of the smoothed loss over the concatenated
/// parameter space. Hessian-vector products are central differences of
/// smoothed_gradient; the eigenpair comes from power iteration on (cI - H)
/// with the shift c bounded above the spectrum via random Rayleigh quotients
/// plus a plain power pass.
CurvatureReport negative_curvature_direction(const LayerStack& stack,
                                             const Dataset& ds,
                                             double eps_smooth, int iters);

/// grid[i][j] = l1_loss at stack_star + alphas[i] * dir_d + betas[j] * dir_h.
std::vector<std::vector<double>> landscape_grid(
    const LayerStack& stack_star, const Dataset& ds, const Perturbation& dir_d,
    const Perturbation& dir_h, const std::vector<double>& alphas,
    const std::vector<double>& betas);

void save_grid_csv(const std::vector<std::vector<double>>& grid,
                   const std::vector<double>& alphas,
                   const std::vector<double>& betas,
                   const std::filesystem::path& path);

namespace detail {

using HvpFn = std::function<Vec(const Vec&)>;

/// Smallest eigenvalue/eigenvector of the symmetric operator behind hvp,
/// exposed separately so known-Hessian operators can drive it in tests.
std::pair<double, Vec> min_eigen_shifted_power(const HvpFn& hvp, int dim,
                                               int iters, Philox& rng);

Vec flatten(const Perturbation& layers);
Perturbation unflatten(const Vec& flat, int n_layers, int d);

}  // namespace detail

}  // namespace dln
