#include "dln/loss.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dln {

namespace detail {

double loss_and_q(const Vec& prod, const Dataset& ds, double sign_at_zero,
                  double eps_smooth, Vec& q_out) {
  if (static_cast<int>(prod.size()) != ds.d)
    throw std::invalid_argument("loss_and_q: dimension mismatch");
  const int m = ds.m;
  const int d = ds.d;
  q_out.assign(d, 0.0);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* x = ds.design.data() + static_cast<std::size_t>(i) * d;
    double pred = 0.0;
    for (int l = 0; l < d; ++l) pred += prod[l] * x[l];
    const double r = pred - ds.responses[i];
    double w;
    if (eps_smooth > 0.0) {
      const double root = std::sqrt(r * r + eps_smooth);
      loss += root;
      w = r / root;
    } else {
      loss += std::abs(r);
      w = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : sign_at_zero);
    }
    if (w != 0.0) {
      for (int l = 0; l < d; ++l) q_out[l] += w * x[l];
    }
  }
  const double inv_m = 1.0 / m;
  for (double& v : q_out) v *= inv_m;
  return loss * inv_m;
}

std::vector<Vec> leave_one_out_products(const LayerStack& stack) {
  const int n = stack.depth();
  const int d = stack.dim();
  // Exactly equal layers get one shared chain product broadcast to every
  // block. This keeps the per-layer updates bitwise identical, so equality
  // of layers is preserved exactly along a run.
  bool all_equal = true;
  for (int i = 1; i < n && all_equal; ++i)
    all_equal = stack.layers[i] == stack.layers[0];
  if (all_equal) {
    Vec chain(d, 1.0);
    for (int j = 0; j + 1 < n; ++j) {
      const Vec& w = stack.layers[0];
      for (int l = 0; l < d; ++l) chain[l] *= w[l];
    }
    return std::vector<Vec>(n, chain);
  }
  std::vector<Vec> out(n, Vec(d, 1.0));
  Vec prefix(d, 1.0);
  for (int i = 0; i < n; ++i) {
    out[i] = prefix;
    if (i + 1 < n) {
      const Vec& w = stack.layers[i];
      for (int l = 0; l < d; ++l) prefix[l] *= w[l];
    }
  }
  Vec suffix(d, 1.0);
  for (int i = n - 1; i >= 0; --i) {
    for (int l = 0; l < d; ++l) out[i][l] *= suffix[l];
    if (i > 0) {
      const Vec& w = stack.layers[i];
      for (int l = 0; l < d; ++l) suffix[l] *= w[l];
    }
  }
  return out;
}

StackGradient assemble_gradient(const LayerStack& stack, const Vec& q) {
  StackGradient grad;
  grad.blocks = leave_one_out_products(stack);
  for (Vec& block : grad.blocks) {
    for (std::size_t l = 0; l < block.size(); ++l) block[l] *= q[l];
  }
  return grad;
}

}  // namespace detail

double l1_loss(const LayerStack& stack, const Dataset& ds) {
  const Vec prod = hadamard_product(stack);
  if (static_cast<int>(prod.size()) != ds.d)
    throw std::invalid_argument("l1_loss: dimension mismatch");
  const int d = ds.d;
  double loss = 0.0;
  for (int i = 0; i < ds.m; ++i) {
    const double* x = ds.design.data() + static_cast<std::size_t>(i) * d;
    double pred = 0.0;
    for (int l = 0; l < d; ++l) pred += prod[l] * x[l];
    loss += std::abs(pred - ds.responses[i]);
  }
  return loss / ds.m;
}

StackGradient subgradient(const LayerStack& stack, const Dataset& ds,
                          const SubgradPolicy& policy) {
  const Vec prod = hadamard_product(stack);
  Vec q;
  detail::loss_and_q(prod, ds, policy.sign_at_zero, 0.0, q);
  return detail::assemble_gradient(stack, q);
}

double expected_loss(const LayerStack& stack, const Vec& theta_star) {
  return generalization_error(stack, theta_star);
}

Vec q_vector(const Vec& z, const Dataset& ds, const SubgradPolicy& policy) {
  if (static_cast<int>(z.size()) != ds.d)
    throw std::invalid_argument("q_vector: dimension mismatch");
  const int d = ds.d;
  Vec q(d, 0.0);
  for (int i = 0; i < ds.m; ++i) {
    const double* x = ds.design.data() + static_cast<std::size_t>(i) * d;
    double ip = 0.0;
    for (int l = 0; l < d; ++l) ip += z[l] * x[l];
    const double arg = ip + ds.noise[i];
    const double s =
        arg > 0.0 ? 1.0 : (arg < 0.0 ? -1.0 : policy.sign_at_zero);
    if (s != 0.0) {
      for (int l = 0; l < d; ++l) q[l] += s * x[l];
    }
  }
  for (double& v : q) v /= ds.m;
  return q;
}

PhiEstimate phi_factor(double p, const NoiseSpec& spec, double z_norm,
                       int n_mc, std::uint64_t mc_seed) {
  if (!(z_norm > 0.0)) throw std::invalid_argument("phi_factor: z_norm must be > 0");
  const double c = std::sqrt(2.0 / std::numbers::pi);
  PhiEstimate est;
  if (p == 0.0) {
    est.value = c;
    return est;
  }
  if (spec.dist == NoiseDist::gaussian) {
    // E[exp(-zeta^2/(2 r^2))] for zeta ~ N(0, sigma^2) is r / sqrt(r^2 + sigma^2).
    const double sigma = spec.param;
    const double expectation = z_norm / std::sqrt(z_norm * z_norm + sigma * sigma);
    est.value = c * ((1.0 - p) + p * expectation);
    return est;
  }
  if (n_mc < 2) throw std::invalid_argument("phi_factor: n_mc too small");
  Philox rng(mc_seed, streams::kMonteCarlo);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n_mc; ++i) {
    const double zeta = spec.sample(rng);
    const double v = std::exp(-zeta * zeta / (2.0 * z_norm * z_norm));
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n_mc;
  const double var = std::max(0.0, sum_sq / n_mc - mean * mean);
  est.value = c * ((1.0 - p) + p * mean);
  est.std_error = c * p * std::sqrt(var / n_mc);
  return est;
}

double direction_preserving_deviation(const Vec& z, const Dataset& ds,
                                      const NoiseSpec& spec) {
  double norm = 0.0;
  for (double v : z) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0))
    throw std::invalid_argument("direction_preserving_deviation: z must be nonzero");
  const Vec q = q_vector(z, ds);
  const PhiEstimate phi = phi_factor(spec.corruption_prob, spec, norm);
  double dev = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l)
    dev = std::max(dev, std::abs(q[l] - phi.value * z[l] / norm));
  return dev;
}

double smoothed_loss(const LayerStack& stack, const Dataset& ds,
                     double eps_smooth) {
  if (!(eps_smooth > 0.0))
    throw std::invalid_argument("smoothed_loss: eps_smooth must be > 0");
  const Vec prod = hadamard_product(stack);
  if (static_cast<int>(prod.size()) != ds.d)
    throw std::invalid_argument("smoothed_loss: dimension mismatch");
  const int d = ds.d;
  double loss = 0.0;
  for (int i = 0; i < ds.m; ++i) {
    const double* x = ds.design.data() + static_cast<std::size_t>(i) * d;
    double pred = 0.0;
    for (int l = 0; l < d; ++l) pred += prod[l] * x[l];
    const double r = pred - ds.responses[i];
    loss += std::sqrt(r * r + eps_smooth);
  }
  return loss / ds.m;
}

StackGradient smoothed_gradient(const LayerStack& stack, const Dataset& ds,
                                double eps_smooth) {
  if (!(eps_smooth > 0.0))
    throw std::invalid_argument("smoothed_gradient: eps_smooth must be > 0");
  const Vec prod = hadamard_product(stack);
  Vec q;
  detail::loss_and_q(prod, ds, 0.0, eps_smooth, q);
  return detail::assemble_gradient(stack, q);
}

}  // namespace dln
