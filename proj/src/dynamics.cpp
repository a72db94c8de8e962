#include "dln/dynamics.hpp"

#include <cmath>
#include <stdexcept>

#include "dln/loss.hpp"

namespace dln {

namespace {

double residual_norm(const LayerStack& stack, const Vec& theta_star, Vec& prod) {
  prod = hadamard_product(stack);
  double acc = 0.0;
  for (std::size_t l = 0; l < prod.size(); ++l) {
    const double diff = theta_star[l] - prod[l];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

bool step_impl(PopulationState& state) {
  state.stack.validate();
  const int n = state.stack.depth();
  const int d = state.stack.dim();
  if (static_cast<int>(state.theta_star.size()) != d)
    throw std::invalid_argument("population step: dimension mismatch");

  Vec prod;
  const double norm = residual_norm(state.stack, state.theta_star, prod);
  if (norm == 0.0) return false;  // fixed point of the population dynamics

  const Vec dev = population_deviations(state);
  const std::vector<Vec> loo = detail::leave_one_out_products(state.stack);
  for (int j = 0; j < n; ++j) {
    Vec& w = state.stack.layers[j];
    for (int l = 0; l < d; ++l) {
      const double direction = (state.theta_star[l] - prod[l]) / norm + dev[l];
      w[l] += state.eta * direction * loo[j][l];
    }
  }
  ++state.t;
  return true;
}

}  // namespace

Vec population_deviations(const PopulationState& state) {
  Vec dev(state.stack.dim(), 0.0);
  if (state.delta > 0.0) {
    Philox rng(state.seed +
                   static_cast<std::uint64_t>(state.t) * 0x9E3779B97F4A7C15ull,
               streams::kPopulation);
    for (double& v : dev) v = rng.uniform(-state.delta, state.delta);
  }
  return dev;
}

bool population_step_2layer(PopulationState& state) {
  if (state.stack.depth() != 2)
    throw std::invalid_argument("population_step_2layer: stack must have N = 2");
  return step_impl(state);
}

bool population_step_nlayer(PopulationState& state) { return step_impl(state); }

TrajectoryRecord run_population(PopulationState state, std::int64_t iterations,
                                std::int64_t log_stride) {
  if (iterations < 1)
    throw std::invalid_argument("run_population: iterations must be >= 1");
  TrajectoryRecord traj;
  traj.total_iters = iterations;
  traj.log_stride =
      log_stride > 0 ? log_stride : std::max<std::int64_t>(1, iterations / 5000);

  std::vector<int> support;
  for (std::size_t l = 0; l < state.theta_star.size(); ++l)
    if (state.theta_star[l] != 0.0) support.push_back(static_cast<int>(l));

  auto measure = [&](std::int64_t t) {
    TrajectoryPoint p;
    p.iter = t;
    p.step_size = state.eta;
    p.train_loss = expected_loss(state.stack, state.theta_star);
    p.gen_error = p.train_loss;
    p.balance_gap = state.stack.depth() >= 2 ? balancedness_gap(state.stack) : 0.0;
    const SignalResidualSplit split =
        signal_residual_split(state.stack, support);
    double sig = 0.0;
    std::size_t si = 0;
    for (int idx : support) {
      const double diff = split.signal[si++] - state.theta_star[idx];
      sig += diff * diff;
    }
    p.signal_error = std::sqrt(sig);
    double res = 0.0;
    for (double v : split.residual) res += v * v;
    p.residual_norm = std::sqrt(res);
    return p;
  };

  traj.points.push_back(measure(0));
  for (std::int64_t t = 0; t < iterations; ++t) {
    if (!step_impl(state)) break;  // converged exactly
    const std::int64_t done = t + 1;
    if (done % traj.log_stride == 0 || done == iterations)
      traj.points.push_back(measure(done));
  }
  traj.final_stack = state.stack;
  return traj;
}

double compare_to_empirical(const TrajectoryRecord& population,
                            const TrajectoryRecord& empirical,
                            TrajectoryMetric metric,
                            std::optional<double> until_empirical_below) {
  const std::size_t count =
      std::min(population.points.size(), empirical.points.size());
  if (count == 0) throw std::invalid_argument("compare_to_empirical: empty trajectory");
  auto pick = [&](const TrajectoryPoint& p) {
    return metric == TrajectoryMetric::generalization_error ? p.gen_error
                                                            : p.balance_gap;
  };
  double gap = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const TrajectoryPoint& pp = population.points[i];
    const TrajectoryPoint& ep = empirical.points[i];
    if (pp.iter != ep.iter)
      throw std::invalid_argument("compare_to_empirical: iteration grids differ");
    const double pop_value = pick(pp);
    const double emp_value = pick(ep);
    gap = std::max(gap, std::abs(pop_value - emp_value) /
                            (std::abs(pop_value) + 1e-12));
    if (until_empirical_below && emp_value < *until_empirical_below) break;
  }
  return gap;
}

}  // namespace dln
