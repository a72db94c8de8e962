#pragma once

#include <cstdint>
#include <vector>

#include "dln/data.hpp"
#include "dln/model.hpp"

namespace dln {

// All operations here are pure functions of their inputs, and sample sums
// are accumulated in a fixed order, so results never depend on thread count;
// callers parallelize across runs, not within one evaluation.

/// Value used for Sign(0) at exact kinks. 0 picks the minimal-norm
/// sub-gradient element.
struct SubgradPolicy {
  double sign_at_zero = 0.0;
};

/// Per-layer gradient blocks, shape-compatible with the stack they came from.
struct StackGradient {
  std::vector<Vec> blocks;
};

/// (1/m) sum_i |<prod_j w_j, x_i> - y_i|.
double l1_loss(const LayerStack& stack, const Dataset& ds);

/// Ascent sub-gradient of l1_loss: block i is
///   (1/m) sum_j Sign(<prod w, x_j> - y_j) x_j ⊙ prod_{k != i} w_k.
/// The optimizer steps w <- w - eta * g.
StackGradient subgradient(const LayerStack& stack, const Dataset& ds,
                          const SubgradPolicy& policy = {});

/// Population objective ||prod_j w_j - theta_star||.
double expected_loss(const LayerStack& stack, const Vec& theta_star);

/// (1/m) sum_i Sign(<x_i, z> + eps_i) x_i.
Vec q_vector(const Vec& z, const Dataset& ds, const SubgradPolicy& policy = {});

struct PhiEstimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 when the closed form applies
};

/// sqrt(2/pi) * ((1 - p) + p * E[exp(-zeta^2 / (2 r^2))]) at r = z_norm.
/// Gaussian noise uses the closed form E[...] = r / sqrt(r^2 + sigma^2);
/// other distributions are estimated by Monte Carlo with n_mc draws.
PhiEstimate phi_factor(double p, const NoiseSpec& spec, double z_norm,
                       int n_mc = 100000, std::uint64_t mc_seed = 0);

/// || q_vector(z, ds) - phi * z / ||z|| ||_inf with phi at r = ||z||.
double direction_preserving_deviation(const Vec& z, const Dataset& ds,
                                      const NoiseSpec& spec);

/// |r| replaced by sqrt(r^2 + eps) per residual.
double smoothed_loss(const LayerStack& stack, const Dataset& ds,
                     double eps_smooth);

/// Exact gradient of smoothed_loss.
StackGradient smoothed_gradient(const LayerStack& stack, const Dataset& ds,
                                double eps_smooth);

namespace detail {

/// One pass over the samples given the product vector: returns the loss and
/// accumulates q = (1/m) sum_i weight_i x_i, where weight_i is Sign(r_i)
/// (eps_smooth <= 0) or r_i / sqrt(r_i^2 + eps_smooth).
double loss_and_q(const Vec& prod, const Dataset& ds, double sign_at_zero,
                  double eps_smooth, Vec& q_out);

/// Leave-one-out Hadamard products prefix_(i-1) ⊙ suffix_(i+1) for each layer.
std::vector<Vec> leave_one_out_products(const LayerStack& stack);

/// Gradient blocks q ⊙ leave-one-out product per layer.
StackGradient assemble_gradient(const LayerStack& stack, const Vec& q);

}  // namespace detail

}  // namespace dln
