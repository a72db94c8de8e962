#include "dln/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace dln {

namespace {

struct StepScratch {
  Vec prod;
  Vec q;
};

/// Fused SubGM step; all leave-one-out products come from the pre-step stack.
/// Returns the training loss at the pre-step point.
double apply_step(LayerStack& stack, const Dataset& ds, double eta,
                  const SubgradPolicy& policy, StepScratch& scratch) {
  scratch.prod = hadamard_product(stack);
  const double loss =
      detail::loss_and_q(scratch.prod, ds, policy.sign_at_zero, 0.0, scratch.q);
  const std::vector<Vec> loo = detail::leave_one_out_products(stack);
  const int d = stack.dim();
  for (int j = 0; j < stack.depth(); ++j) {
    Vec& w = stack.layers[j];
    const Vec& lo = loo[j];
    for (int l = 0; l < d; ++l) w[l] -= eta * scratch.q[l] * lo[l];
  }
  return loss;
}

double norm2(const Vec& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

bool all_finite(const LayerStack& stack) {
  for (const Vec& w : stack.layers)
    for (double v : w)
      if (!std::isfinite(v)) return false;
  return true;
}

TrajectoryPoint measure(const LayerStack& stack, const Dataset& ds,
                        const std::vector<int>& support, std::int64_t t,
                        double eta) {
  TrajectoryPoint p;
  p.iter = t;
  p.step_size = eta;
  p.train_loss = l1_loss(stack, ds);
  p.gen_error = generalization_error(stack, ds.theta_star);
  p.balance_gap = stack.depth() >= 2 ? balancedness_gap(stack) : 0.0;
  const SignalResidualSplit split = signal_residual_split(stack, support);
  double sig_err = 0.0;
  std::size_t si = 0;
  for (int idx : support) {
    const double diff = split.signal[si++] - ds.theta_star[idx];
    sig_err += diff * diff;
  }
  p.signal_error = std::sqrt(sig_err);
  p.residual_norm = norm2(split.residual);
  return p;
}

}  // namespace

StepSchedule StepSchedule::constant_step(double eta) {
  StepSchedule s;
  s.kind = Kind::constant;
  s.eta = eta;
  s.validate();
  return s;
}

StepSchedule StepSchedule::geometric(double eta0, double q) {
  StepSchedule s;
  s.kind = Kind::geometric;
  s.eta = eta0;
  s.decay = q;
  s.validate();
  return s;
}

StepSchedule StepSchedule::piecewise(
    std::vector<std::pair<std::int64_t, double>> pieces) {
  StepSchedule s;
  s.kind = Kind::piecewise;
  s.pieces = std::move(pieces);
  s.validate();
  return s;
}

double StepSchedule::at(std::int64_t t) const {
  switch (kind) {
    case Kind::constant:
      return eta;
    case Kind::geometric:
      return eta * std::pow(decay, static_cast<double>(t));
    case Kind::piecewise: {
      double current = pieces.front().second;
      for (const auto& [from, value] : pieces) {
        if (t >= from) current = value;
        else break;
      }
      return current;
    }
  }
  return eta;
}

void StepSchedule::validate() const {
  switch (kind) {
    case Kind::constant:
      if (!(eta > 0.0)) throw std::invalid_argument("StepSchedule: eta must be > 0");
      break;
    case Kind::geometric:
      if (!(eta > 0.0)) throw std::invalid_argument("StepSchedule: eta0 must be > 0");
      if (!(decay > 0.0 && decay < 1.0))
        throw std::invalid_argument("StepSchedule: geometric decay must be in (0, 1)");
      break;
    case Kind::piecewise: {
      if (pieces.empty())
        throw std::invalid_argument("StepSchedule: piecewise needs at least one piece");
      std::int64_t prev = std::numeric_limits<std::int64_t>::min();
      for (const auto& [from, value] : pieces) {
        if (from <= prev)
          throw std::invalid_argument("StepSchedule: thresholds must strictly increase");
        if (!(value > 0.0))
          throw std::invalid_argument("StepSchedule: eta must be > 0");
        prev = from;
      }
      break;
    }
  }
}

double TrajectoryRecord::min_gen_error() const {
  double best = std::numeric_limits<double>::infinity();
  for (const TrajectoryPoint& p : points) best = std::min(best, p.gen_error);
  return best;
}

double TrajectoryRecord::final_gen_error() const {
  if (points.empty()) throw std::runtime_error("empty trajectory");
  return points.back().gen_error;
}

LayerStack subgm_step(const LayerStack& stack, const Dataset& ds, double eta,
                      const SubgradPolicy& policy) {
  if (!(eta > 0.0)) throw std::invalid_argument("subgm_step: eta must be > 0");
  LayerStack next = stack;
  StepScratch scratch;
  apply_step(next, ds, eta, policy, scratch);
  return next;
}

TrajectoryRecord run_subgm(const Dataset& ds, const RunConfig& config) {
  if (config.iterations < 1)
    throw std::invalid_argument("run_subgm: iterations must be >= 1");
  config.schedule.validate();

  LayerStack stack;
  if (config.gaussian_init) {
    Philox rng(config.init_seed, streams::kInit);
    const double scale =
        std::pow(config.alpha, 1.0 / config.n_layers) / std::sqrt(ds.d);
    stack.layers.assign(config.n_layers, Vec(ds.d, 0.0));
    for (Vec& w : stack.layers)
      for (double& v : w) v = rng.normal(0.0, scale);
  } else {
    stack = balanced_init(ds.d, config.n_layers, config.alpha);
  }

  TrajectoryRecord traj;
  traj.total_iters = config.iterations;
  traj.log_stride = config.log_stride > 0
                        ? config.log_stride
                        : std::max<std::int64_t>(1, config.iterations / 5000);

  const std::vector<int> support = ds.support();
  const double theta_norm = norm2(ds.theta_star);
  const double gen_limit = config.divergence_factor * theta_norm;

  traj.points.push_back(measure(stack, ds, support, 0, config.schedule.at(0)));

  StepScratch scratch;
  for (std::int64_t t = 0; t < config.iterations; ++t) {
    const double eta = config.schedule.at(t);
    apply_step(stack, ds, eta, config.policy, scratch);
    const std::int64_t done = t + 1;
    if (done % traj.log_stride == 0 || done == config.iterations) {
      if (!all_finite(stack)) {
        traj.diverged = true;
        break;
      }
      TrajectoryPoint p = measure(stack, ds, support, done,
                                  config.schedule.at(done));
      const bool runaway = !std::isfinite(p.train_loss) || p.gen_error > gen_limit;
      traj.points.push_back(p);
      if (runaway) {
        traj.diverged = true;
        break;
      }
    }
  }
  traj.final_stack = stack;
  return traj;
}

EscapeWindow escape_time(const TrajectoryRecord& traj, double tol) {
  if (traj.points.empty()) throw std::invalid_argument("escape_time: empty trajectory");
  EscapeWindow window;
  for (const TrajectoryPoint& p : traj.points) {
    if (!window.t_enter) {
      if (p.gen_error <= tol) window.t_enter = p.iter;
    } else if (!window.t_exit && p.iter > *window.t_enter &&
               p.gen_error > 2.0 * tol) {
      window.t_exit = p.iter;
      break;
    }
  }
  return window;
}

void save_trajectory_csv(const TrajectoryRecord& traj,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "iteration,train_loss,generalization_error,balancedness_gap,"
         "signal_error,residual_norm,step_size\n";
  char buf[256];
  for (const TrajectoryPoint& p : traj.points) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(p.iter), p.train_loss, p.gen_error,
                  p.balance_gap, p.signal_error, p.residual_norm, p.step_size);
    out << buf;
  }
}

}  // namespace dln
