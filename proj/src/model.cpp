#include "dln/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dln {

void LayerStack::validate() const {
  if (layers.empty()) throw std::invalid_argument("LayerStack: depth must be >= 1");
  const std::size_t d = layers[0].size();
  if (d == 0) throw std::invalid_argument("LayerStack: dimension must be >= 1");
  for (const Vec& w : layers) {
    if (w.size() != d)
      throw std::invalid_argument("LayerStack: layer dimensions disagree");
  }
}

LayerStack balanced_init(int d, int n_layers, double alpha) {
  if (d < 1) throw std::invalid_argument("balanced_init: d must be >= 1");
  if (n_layers < 1) throw std::invalid_argument("balanced_init: N must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("balanced_init: alpha must be > 0");
  const double level = std::pow(alpha, 1.0 / n_layers);
  LayerStack stack;
  stack.layers.assign(n_layers, Vec(d, level));
  return stack;
}

LayerStack balanced_true_solution(const Vec& theta_star, int n_layers) {
  if (n_layers < 1)
    throw std::invalid_argument("balanced_true_solution: N must be >= 1");
  Vec root(theta_star.size());
  for (std::size_t l = 0; l < theta_star.size(); ++l) {
    if (theta_star[l] < 0.0)
      throw std::invalid_argument("balanced_true_solution: theta_star must be >= 0");
    root[l] = n_layers == 1 ? theta_star[l]
                            : std::pow(theta_star[l], 1.0 / n_layers);
  }
  LayerStack stack;
  stack.layers.assign(n_layers, root);
  return stack;
}

Vec hadamard_product(const LayerStack& stack) {
  stack.validate();
  Vec prod = stack.layers[0];
  for (int j = 1; j < stack.depth(); ++j) {
    const Vec& w = stack.layers[j];
    for (std::size_t l = 0; l < prod.size(); ++l) prod[l] *= w[l];
  }
  return prod;
}

double predict(const LayerStack& stack, std::span<const double> x) {
  const Vec prod = hadamard_product(stack);
  if (x.size() != prod.size())
    throw std::invalid_argument("predict: input dimension mismatch");
  double acc = 0.0;
  for (std::size_t l = 0; l < prod.size(); ++l) acc += prod[l] * x[l];
  return acc;
}

double balancedness_gap(const LayerStack& stack) {
  stack.validate();
  if (stack.depth() < 2)
    throw std::invalid_argument("balancedness_gap: requires N >= 2");
  double gap = 0.0;
  for (int i = 0; i < stack.depth(); ++i) {
    for (int j = i + 1; j < stack.depth(); ++j) {
      const Vec& a = stack.layers[i];
      const Vec& b = stack.layers[j];
      for (std::size_t l = 0; l < a.size(); ++l)
        gap = std::max(gap, std::abs(a[l] - b[l]));
    }
  }
  return gap;
}

SignalResidualSplit signal_residual_split(const LayerStack& stack,
                                          const std::vector<int>& support) {
  const Vec prod = hadamard_product(stack);
  const int d = static_cast<int>(prod.size());
  std::vector<bool> on(d, false);
  for (int idx : support) {
    if (idx < 0 || idx >= d)
      throw std::out_of_range("signal_residual_split: support index out of range");
    on[idx] = true;
  }
  SignalResidualSplit split;
  split.signal.reserve(support.size());
  split.residual.reserve(prod.size() - support.size());
  for (int l = 0; l < d; ++l) {
    (on[l] ? split.signal : split.residual).push_back(prod[l]);
  }
  return split;
}

double generalization_error(const LayerStack& stack, const Vec& theta_star) {
  const Vec prod = hadamard_product(stack);
  if (prod.size() != theta_star.size())
    throw std::invalid_argument("generalization_error: dimension mismatch");
  double acc = 0.0;
  for (std::size_t l = 0; l < prod.size(); ++l) {
    const double diff = prod[l] - theta_star[l];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace dln
