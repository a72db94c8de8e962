#pragma once

// Test-only reference implementations, kept deliberately naive and
// independent of the library's computation paths.

#include <cmath>
#include <functional>
#include <vector>

#include "dln/data.hpp"
#include "dln/model.hpp"

namespace oracles {

inline double scalar_loop_predict(const dln::LayerStack& stack,
                                  const std::vector<double>& x) {
  double total = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    double coord = 1.0;
    for (const auto& layer : stack.layers) coord *= layer[l];
    total += coord * x[l];
  }
  return total;
}

inline double scalar_loop_l1(const dln::LayerStack& stack,
                             const dln::Dataset& ds) {
  double total = 0.0;
  for (int i = 0; i < ds.m; ++i) {
    std::vector<double> row(ds.row(i).begin(), ds.row(i).end());
    total += std::abs(scalar_loop_predict(stack, row) - ds.responses[i]);
  }
  return total / ds.m;
}

inline double scalar_loop_gen_error(const dln::LayerStack& stack,
                                    const std::vector<double>& theta) {
  double acc = 0.0;
  for (std::size_t l = 0; l < theta.size(); ++l) {
    double coord = 1.0;
    for (const auto& layer : stack.layers) coord *= layer[l];
    acc += (coord - theta[l]) * (coord - theta[l]);
  }
  return std::sqrt(acc);
}

/// Central finite difference of f along direction v at step h.
inline double central_difference(const std::function<double(double)>& f_along,
                                 double h) {
  return (f_along(h) - f_along(-h)) / (2.0 * h);
}

}  // namespace oracles
