#include "dln/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dln {

namespace {

LayerStack apply_perturbation(const LayerStack& base, const Perturbation& delta) {
  LayerStack out = base;
  for (int j = 0; j < base.depth(); ++j) {
    for (int l = 0; l < base.dim(); ++l) out.layers[j][l] += delta[j][l];
  }
  return out;
}

void clip_inplace(Perturbation& delta, double gamma) {
  for (Vec& layer : delta)
    for (double& v : layer) v = std::clamp(v, -gamma, gamma);
}

Perturbation zero_perturbation(int n_layers, int d) {
  return Perturbation(n_layers, Vec(d, 0.0));
}

/// Smoothing scale kept well below the off-support product magnitude
/// sqrt(d) * gamma^N so the smoothed gradient matches the ℓ1 geometry at the
/// scale the probe works on.
double probe_eps_smooth(int d, int n_layers, double gamma) {
  const double scale = 0.01 * std::sqrt(static_cast<double>(d)) *
                       std::pow(gamma, n_layers);
  return std::min(1e-7, scale * scale);
}

struct ProbeState {
  const LayerStack* star;
  const Dataset* ds;
  double base_loss;
  double best_delta = 0.0;
  Perturbation best;
  std::int64_t n_evals = 0;

  void consider(const Perturbation& delta) {
    const double value = l1_loss(apply_perturbation(*star, delta), *ds) - base_loss;
    ++n_evals;
    if (value < best_delta) {
      best_delta = value;
      best = delta;
    }
  }
};

void run_projected_descent(ProbeState& state, const Perturbation& start,
                           double gamma, const ProbeMethod& method,
                           const std::vector<bool>* free_coords) {
  const LayerStack& star = *state.star;
  const int n = star.depth();
  const int d = star.dim();
  const double eps = probe_eps_smooth(d, n, gamma);

  Perturbation delta = start;
  clip_inplace(delta, gamma);
  state.consider(delta);
  for (int it = 0; it < method.budget; ++it) {
    const LayerStack point = apply_perturbation(star, delta);
    const StackGradient grad = smoothed_gradient(point, *state.ds, eps);
    // Sign steps move every coordinate at the same diminishing rate; plain
    // normalized steps would freeze the off-support coordinates, whose
    // gradient entries carry the tiny gamma^(N-1) leave-one-out factor.
    const double step = method.step_scale * gamma / std::sqrt(it + 1.0);
    for (int j = 0; j < n; ++j) {
      for (int l = 0; l < d; ++l) {
        if (free_coords && !(*free_coords)[l]) continue;
        const double g = grad.blocks[j][l];
        if (g > 0.0) delta[j][l] -= step;
        else if (g < 0.0) delta[j][l] += step;
      }
    }
    clip_inplace(delta, gamma);
    state.consider(delta);
  }
}

/// Start with layers 2..N at +gamma on the zero coordinates of the product:
/// the leave-one-out factor of layer 1 is then gamma^(N-1) there instead of
/// zero, which unlocks descent into the off-support corner region.
Perturbation structured_start(const LayerStack& star, double gamma) {
  const int n = star.depth();
  const int d = star.dim();
  const Vec prod = hadamard_product(star);
  Perturbation delta = zero_perturbation(n, d);
  for (int j = 1; j < n; ++j) {
    for (int l = 0; l < d; ++l) {
      if (prod[l] == 0.0) delta[j][l] = gamma;
    }
  }
  return delta;
}

double least_squares_slope(const std::vector<double>& xs,
                           const std::vector<double>& ys, double& intercept) {
  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::runtime_error("flatness fit: degenerate radii");
  const double slope = (n * sxy - sx * sy) / denom;
  intercept = (sy - slope * sx) / n;
  return slope;
}

}  // namespace

namespace detail {

Vec flatten(const Perturbation& layers) {
  Vec flat;
  for (const Vec& w : layers) flat.insert(flat.end(), w.begin(), w.end());
  return flat;
}

Perturbation unflatten(const Vec& flat, int n_layers, int d) {
  Perturbation out(n_layers, Vec(d));
  for (int j = 0; j < n_layers; ++j)
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(j) * d,
              flat.begin() + static_cast<std::ptrdiff_t>(j + 1) * d,
              out[j].begin());
  return out;
}

std::pair<double, Vec> min_eigen_shifted_power(const HvpFn& hvp, int dim,
                                               int iters, Philox& rng) {
  auto random_unit = [&] {
    Vec v(dim);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  };
  auto rayleigh = [&](const Vec& v) {
    const Vec hv = hvp(v);
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) acc += v[i] * hv[i];
    return acc;
  };

  double ray_max = 0.0;
  for (int i = 0; i < 20; ++i)
    ray_max = std::max(ray_max, std::abs(rayleigh(random_unit())));

  // Plain power pass: random Rayleigh quotients can sit far below the top of
  // a spiky spectrum, and an undershot shift would flip the iteration to the
  // wrong end.
  Vec v = random_unit();
  double lambda_dom = 0.0;
  for (int it = 0; it < std::min(iters, 60); ++it) {
    Vec hv = hvp(v);
    double norm = 0.0;
    for (double x : hv) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) break;
    for (int i = 0; i < dim; ++i) v[i] = hv[i] / norm;
    lambda_dom = rayleigh(v);
  }
  if (!std::isfinite(lambda_dom))
    throw std::runtime_error("min_eigen: non-finite Hessian-vector product");

  const double c = std::max(3.0 * ray_max, 1.3 * std::abs(lambda_dom)) + 1.0;

  v = random_unit();
  for (int it = 0; it < iters; ++it) {
    const Vec hv = hvp(v);
    Vec next(dim);
    double norm = 0.0;
    for (int i = 0; i < dim; ++i) {
      next[i] = c * v[i] - hv[i];
      norm += next[i] * next[i];
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) break;
    for (int i = 0; i < dim; ++i) v[i] = next[i] / norm;
  }
  const double lambda_min = rayleigh(v);
  if (!std::isfinite(lambda_min))
    throw std::runtime_error("min_eigen: non-finite Hessian-vector product");
  return {lambda_min, v};
}

}  // namespace detail

ProbeReport probe_descent(const LayerStack& stack_star, const Dataset& ds,
                          double gamma, const ProbeMethod& method,
                          const Perturbation* warm_start) {
  if (!(gamma > 0.0)) throw std::invalid_argument("probe_descent: gamma must be > 0");
  stack_star.validate();
  const int n = stack_star.depth();
  const int d = stack_star.dim();

  ProbeState state;
  state.star = &stack_star;
  state.ds = &ds;
  state.base_loss = l1_loss(stack_star, ds);
  state.best = zero_perturbation(n, d);
  state.n_evals = 1;  // the zero perturbation

  Philox rng(method.seed, streams::kProbe);

  // Coordinates where the product vanishes: moving the others costs O(gamma)
  // in loss while the achievable gain there is O(gamma^N), so the main
  // descent phase keeps them pinned.
  const Vec prod = hadamard_product(stack_star);
  std::vector<bool> zero_coords(d);
  for (int l = 0; l < d; ++l) zero_coords[l] = prod[l] == 0.0;

  if (warm_start) {
    Perturbation warm = *warm_start;
    clip_inplace(warm, gamma);
    state.consider(warm);
    if (method.kind == ProbeMethod::Kind::projected_descent)
      run_projected_descent(state, warm, gamma, method, &zero_coords);
  }

  if (method.kind == ProbeMethod::Kind::random_sampling) {
    Perturbation delta = zero_perturbation(n, d);
    for (int s = 0; s < method.budget; ++s) {
      const bool vertex = (s % 2 == 0);
      for (Vec& layer : delta) {
        for (double& v : layer) {
          v = vertex ? (rng.next_u32() & 1u ? gamma : -gamma)
                     : rng.uniform(-gamma, gamma);
        }
      }
      state.consider(delta);
    }
  } else {
    run_projected_descent(state, structured_start(stack_star, gamma), gamma,
                          method, &zero_coords);
    // Unrestricted polish from the best point found, then random restarts for
    // generic coverage of the full ball.
    run_projected_descent(state, state.best, gamma, method, nullptr);
    for (int r = 1; r < method.restarts; ++r) {
      Perturbation delta = zero_perturbation(n, d);
      for (Vec& layer : delta)
        for (double& v : layer) v = 0.5 * rng.uniform(-gamma, gamma);
      run_projected_descent(state, delta, gamma, method, nullptr);
    }
  }

  ProbeReport report;
  report.gamma = gamma;
  report.min_delta_loss = state.best_delta;
  report.argmin = std::move(state.best);
  report.method = method;
  report.n_evals = state.n_evals;
  return report;
}

FlatnessFit flatness_exponent(const LayerStack& stack_star, const Dataset& ds,
                              std::vector<double> gammas, ProbeMethod method) {
  if (gammas.size() < 4)
    throw std::invalid_argument("flatness_exponent: need at least 4 radii");
  std::sort(gammas.begin(), gammas.end());
  if (gammas.back() < 10.0 * gammas.front())
    throw std::invalid_argument("flatness_exponent: radii must span a decade");

  FlatnessFit fit;
  std::vector<double> log_gamma, log_drop;
  const Perturbation* warm = nullptr;
  for (double gamma : gammas) {
    ProbeReport report = probe_descent(stack_star, ds, gamma, method, warm);
    fit.reports.push_back(std::move(report));
    warm = &fit.reports.back().argmin;
    const double drop = std::abs(fit.reports.back().min_delta_loss);
    if (drop > 1e-12) {
      log_gamma.push_back(std::log(gamma));
      log_drop.push_back(std::log(drop));
      fit.fitted_gammas.push_back(gamma);
    } else {
      fit.skipped_gammas.push_back(gamma);
    }
  }
  if (log_gamma.size() < 2)
    throw std::runtime_error(
        "flatness_exponent: too few radii above the noise floor");
  fit.slope = least_squares_slope(log_gamma, log_drop, fit.intercept);
  return fit;
}

CurvatureReport negative_curvature_direction(const LayerStack& stack,
                                             const Dataset& ds,
                                             double eps_smooth, int iters) {
  if (!(eps_smooth > 0.0))
    throw std::invalid_argument("negative_curvature_direction: eps_smooth > 0");
  stack.validate();
  const int n = stack.depth();
  const int d = stack.dim();
  const int dim = n * d;

  const Vec x0 = detail::flatten(stack.layers);
  double x_norm = 0.0;
  for (double v : x0) x_norm += v * v;
  const double fd_step = 1e-5 * (1.0 + std::sqrt(x_norm));

  auto gradient_at = [&](const Vec& x) {
    LayerStack point;
    point.layers = detail::unflatten(x, n, d);
    return detail::flatten(smoothed_gradient(point, ds, eps_smooth).blocks);
  };
  detail::HvpFn hvp = [&](const Vec& v) {
    Vec plus(dim), minus(dim);
    for (int i = 0; i < dim; ++i) {
      plus[i] = x0[i] + fd_step * v[i];
      minus[i] = x0[i] - fd_step * v[i];
    }
    const Vec gp = gradient_at(plus);
    const Vec gm = gradient_at(minus);
    Vec hv(dim);
    for (int i = 0; i < dim; ++i) hv[i] = (gp[i] - gm[i]) / (2.0 * fd_step);
    return hv;
  };

  Philox rng(0, streams::kProbe);
  auto [lambda, direction] = detail::min_eigen_shifted_power(hvp, dim, iters, rng);

  CurvatureReport report;
  report.lambda_min = lambda;
  report.direction = detail::unflatten(direction, n, d);
  report.eps_smooth = eps_smooth;
  report.iters = iters;
  return report;
}

std::vector<std::vector<double>> landscape_grid(
    const LayerStack& stack_star, const Dataset& ds, const Perturbation& dir_d,
    const Perturbation& dir_h, const std::vector<double>& alphas,
    const std::vector<double>& betas) {
  stack_star.validate();
  const int n = stack_star.depth();
  const int d = stack_star.dim();
  if (static_cast<int>(dir_d.size()) != n || static_cast<int>(dir_h.size()) != n)
    throw std::invalid_argument("landscape_grid: direction shape mismatch");

  std::vector<std::vector<double>> grid(alphas.size(),
                                        std::vector<double>(betas.size()));
  LayerStack point = stack_star;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < betas.size(); ++j) {
      for (int layer = 0; layer < n; ++layer) {
        for (int l = 0; l < d; ++l) {
          point.layers[layer][l] = stack_star.layers[layer][l] +
                                   alphas[i] * dir_d[layer][l] +
                                   betas[j] * dir_h[layer][l];
        }
      }
      grid[i][j] = l1_loss(point, ds);
    }
  }
  return grid;
}

void save_grid_csv(const std::vector<std::vector<double>>& grid,
                   const std::vector<double>& alphas,
                   const std::vector<double>& betas,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "alpha,beta,loss\n";
  char buf[128];
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < betas.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", alphas[i],
                    betas[j], grid[i][j]);
      out << buf;
    }
  }
}

}  // namespace dln
