#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dln {

using Vec = std::vector<double>;

/// Depth-N diagonal linear network: N weight vectors of equal dimension d.
/// The model output for input x is <w_1 ⊙ ... ⊙ w_N, x>.
struct LayerStack {
  std::vector<Vec> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int dim() const { return layers.empty() ? 0 : static_cast<int>(layers[0].size()); }

  /// Throws if layers are empty or dimensions disagree.
  void validate() const;
};

/// All layers set to alpha^(1/N) * 1, so the product vector equals alpha * 1.
LayerStack balanced_init(int d, int n_layers, double alpha);

/// Every layer equal to theta_star^(1/N) coordinatewise (theta_star >= 0),
/// so the product vector reproduces theta_star.
LayerStack balanced_true_solution(const Vec& theta_star, int n_layers);

/// Coordinatewise product across layers. Identity for N = 1.
Vec hadamard_product(const LayerStack& stack);

double predict(const LayerStack& stack, std::span<const double> x);

/// max over layer pairs of the ℓ∞ distance between them; zero iff all layers
/// are identical. Undefined (throws) for N = 1.
double balancedness_gap(const LayerStack& stack);

struct SignalResidualSplit {
  Vec signal;    // product coordinates on the given support
  Vec residual;  // remaining coordinates, in index order
};

SignalResidualSplit signal_residual_split(const LayerStack& stack,
                                          const std::vector<int>& support);

/// Euclidean distance between the product vector and theta_star.
double generalization_error(const LayerStack& stack, const Vec& theta_star);

}  // namespace dln
