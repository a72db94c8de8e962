#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dln/data.hpp"
#include "dln/dynamics.hpp"
#include "dln/landscape.hpp"
#include "dln/loss.hpp"
#include "dln/matrix_recovery.hpp"
#include "dln/model.hpp"
#include "dln/optimizer.hpp"

namespace py = pybind11;
using namespace dln;

namespace {

py::dict trajectory_to_dict(const TrajectoryRecord& traj) {
  std::vector<std::int64_t> iters;
  std::vector<double> train_loss, gen_error, balance_gap, signal_error,
      residual_norm, step_size;
  for (const TrajectoryPoint& p : traj.points) {
    iters.push_back(p.iter);
    train_loss.push_back(p.train_loss);
    gen_error.push_back(p.gen_error);
    balance_gap.push_back(p.balance_gap);
    signal_error.push_back(p.signal_error);
    residual_norm.push_back(p.residual_norm);
    step_size.push_back(p.step_size);
  }
  py::dict d;
  d["iteration"] = iters;
  d["train_loss"] = train_loss;
  d["generalization_error"] = gen_error;
  d["balancedness_gap"] = balance_gap;
  d["signal_error"] = signal_error;
  d["residual_norm"] = residual_norm;
  d["step_size"] = step_size;
  d["diverged"] = traj.diverged;
  return d;
}

StepSchedule schedule_from_args(const std::string& kind, double eta,
                                double eta0, double decay_q) {
  if (kind == "constant") return StepSchedule::constant_step(eta);
  if (kind == "geometric") return StepSchedule::geometric(eta0, decay_q);
  throw std::invalid_argument("schedule must be constant or geometric");
}

}  // namespace

PYBIND11_MODULE(_dln, m) {
  m.doc() = "Robust sparse regression with deep diagonal linear networks";

  py::class_<LayerStack>(m, "LayerStack")
      .def(py::init([](std::vector<Vec> layers) {
             LayerStack s{std::move(layers)};
             s.validate();
             return s;
           }),
           py::arg("layers"))
      .def_readonly("layers", &LayerStack::layers)
      .def_property_readonly("depth", &LayerStack::depth)
      .def_property_readonly("dim", &LayerStack::dim);

  m.def("balanced_init", &balanced_init, py::arg("d"), py::arg("n_layers"),
        py::arg("alpha"));
  m.def("balanced_true_solution", &balanced_true_solution,
        py::arg("theta_star"), py::arg("n_layers"));
  m.def("hadamard_product", &hadamard_product);
  m.def(
      "predict",
      [](const LayerStack& s, const Vec& x) {
        return predict(s, std::span<const double>(x));
      },
      py::arg("stack"), py::arg("x"));
  m.def("balancedness_gap", &balancedness_gap);
  m.def("generalization_error", &generalization_error, py::arg("stack"),
        py::arg("theta_star"));

  py::class_<NoiseSpec>(m, "NoiseSpec")
      .def(py::init([](double p, const std::string& dist, double param) {
             NoiseSpec spec{p, noise_dist_from_string(dist), param};
             spec.validate();
             return spec;
           }),
           py::arg("p"), py::arg("dist") = "gaussian", py::arg("param") = 1.0)
      .def_readonly("p", &NoiseSpec::corruption_prob)
      .def_readonly("param", &NoiseSpec::param)
      .def_property_readonly("dist",
                             [](const NoiseSpec& s) { return to_string(s.dist); })
      .def_property_readonly("t0", &NoiseSpec::t0)
      .def_property_readonly("p0", &NoiseSpec::p0);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("m", &Dataset::m)
      .def_readonly("d", &Dataset::d)
      .def_readonly("design", &Dataset::design)
      .def_readonly("responses", &Dataset::responses)
      .def_readonly("theta_star", &Dataset::theta_star)
      .def_readonly("noise", &Dataset::noise)
      .def_readonly("noise_support", &Dataset::noise_support)
      .def_readonly("seed", &Dataset::seed)
      .def("support", &Dataset::support);

  m.def("generate_dataset", &generate_dataset, py::arg("d"), py::arg("k"),
        py::arg("m"), py::arg("theta_min"), py::arg("theta_max"),
        py::arg("noise"), py::arg("seed"));

  m.def("l1_loss", &l1_loss, py::arg("stack"), py::arg("dataset"));
  m.def(
      "subgradient",
      [](const LayerStack& s, const Dataset& ds, double sign_at_zero) {
        return subgradient(s, ds, SubgradPolicy{sign_at_zero}).blocks;
      },
      py::arg("stack"), py::arg("dataset"), py::arg("sign_at_zero") = 0.0);
  m.def("expected_loss", &expected_loss, py::arg("stack"), py::arg("theta_star"));
  m.def(
      "q_vector",
      [](const Vec& z, const Dataset& ds, double sign_at_zero) {
        return q_vector(z, ds, SubgradPolicy{sign_at_zero});
      },
      py::arg("z"), py::arg("dataset"), py::arg("sign_at_zero") = 0.0);
  m.def(
      "phi_factor",
      [](double p, const NoiseSpec& spec, double z_norm, int n_mc,
         std::uint64_t mc_seed) {
        const PhiEstimate est = phi_factor(p, spec, z_norm, n_mc, mc_seed);
        return py::make_tuple(est.value, est.std_error);
      },
      py::arg("p"), py::arg("noise"), py::arg("z_norm"),
      py::arg("n_mc") = 100000, py::arg("mc_seed") = 0);
  m.def("direction_preserving_deviation", &direction_preserving_deviation,
        py::arg("z"), py::arg("dataset"), py::arg("noise"));
  m.def("smoothed_loss", &smoothed_loss, py::arg("stack"), py::arg("dataset"),
        py::arg("eps_smooth"));
  m.def(
      "smoothed_gradient",
      [](const LayerStack& s, const Dataset& ds, double eps) {
        return smoothed_gradient(s, ds, eps).blocks;
      },
      py::arg("stack"), py::arg("dataset"), py::arg("eps_smooth"));

  m.def(
      "subgm_step",
      [](const LayerStack& s, const Dataset& ds, double eta,
         double sign_at_zero) {
        return subgm_step(s, ds, eta, SubgradPolicy{sign_at_zero});
      },
      py::arg("stack"), py::arg("dataset"), py::arg("eta"),
      py::arg("sign_at_zero") = 0.0);
  m.def(
      "run_subgm",
      [](const Dataset& ds, int n_layers, double alpha,
         const std::string& schedule, double eta, double eta0, double decay_q,
         std::int64_t iterations, std::int64_t log_stride, bool gaussian_init,
         std::uint64_t init_seed) {
        RunConfig config;
        config.n_layers = n_layers;
        config.alpha = alpha;
        config.schedule = schedule_from_args(schedule, eta, eta0, decay_q);
        config.iterations = iterations;
        config.log_stride = log_stride;
        config.gaussian_init = gaussian_init;
        config.init_seed = init_seed;
        return trajectory_to_dict(run_subgm(ds, config));
      },
      py::arg("dataset"), py::arg("n_layers"), py::arg("alpha"),
      py::arg("schedule") = "constant", py::arg("eta") = 1e-3,
      py::arg("eta0") = 1e-2, py::arg("decay_q") = 0.9999,
      py::arg("iterations") = 10000, py::arg("log_stride") = 0,
      py::arg("gaussian_init") = false, py::arg("init_seed") = 0);

  m.def(
      "probe_descent",
      [](const LayerStack& star, const Dataset& ds, double gamma,
         const std::string& method, int budget, int restarts,
         std::uint64_t seed) {
        ProbeMethod pm;
        pm.kind = method == "random_sampling"
                      ? ProbeMethod::Kind::random_sampling
                      : ProbeMethod::Kind::projected_descent;
        pm.budget = budget;
        pm.restarts = restarts;
        pm.seed = seed;
        const ProbeReport report = probe_descent(star, ds, gamma, pm);
        py::dict d;
        d["gamma"] = report.gamma;
        d["min_delta_loss"] = report.min_delta_loss;
        d["argmin"] = report.argmin;
        d["n_evals"] = report.n_evals;
        return d;
      },
      py::arg("stack_star"), py::arg("dataset"), py::arg("gamma"),
      py::arg("method") = "projected_descent", py::arg("budget") = 500,
      py::arg("restarts") = 2, py::arg("seed") = 0);
  m.def(
      "flatness_exponent",
      [](const LayerStack& star, const Dataset& ds, std::vector<double> gammas,
         const std::string& method, int budget, int restarts,
         std::uint64_t seed) {
        ProbeMethod pm;
        pm.kind = method == "random_sampling"
                      ? ProbeMethod::Kind::random_sampling
                      : ProbeMethod::Kind::projected_descent;
        pm.budget = budget;
        pm.restarts = restarts;
        pm.seed = seed;
        const FlatnessFit fit = flatness_exponent(star, ds, std::move(gammas), pm);
        py::dict d;
        d["slope"] = fit.slope;
        d["fitted_gammas"] = fit.fitted_gammas;
        d["skipped_gammas"] = fit.skipped_gammas;
        return d;
      },
      py::arg("stack_star"), py::arg("dataset"), py::arg("gammas"),
      py::arg("method") = "projected_descent", py::arg("budget") = 400,
      py::arg("restarts") = 2, py::arg("seed") = 0);

  py::class_<MatrixDataset>(m, "MatrixDataset")
      .def_readonly("d", &MatrixDataset::d)
      .def_readonly("rank", &MatrixDataset::rank)
      .def_readonly("m", &MatrixDataset::m)
      .def_readonly("x_star", &MatrixDataset::x_star)
      .def_readonly("responses", &MatrixDataset::responses);

  m.def("generate_matrix_problem", &generate_matrix_problem, py::arg("d"),
        py::arg("r"), py::arg("m"), py::arg("noise"), py::arg("seed"));
  m.def(
      "run_subgm_matrix",
      [](const MatrixDataset& mds, int n_layers, double alpha, double eta,
         std::int64_t iterations, std::int64_t log_stride,
         std::uint64_t init_seed) {
        MatrixRunConfig config;
        config.n_layers = n_layers;
        config.alpha = alpha;
        config.schedule = StepSchedule::constant_step(eta);
        config.iterations = iterations;
        config.log_stride = log_stride;
        config.init_seed = init_seed;
        return trajectory_to_dict(run_subgm_matrix(mds, config));
      },
      py::arg("dataset"), py::arg("n_layers"), py::arg("alpha") = 1e-3,
      py::arg("eta") = 1e-3, py::arg("iterations") = 10000,
      py::arg("log_stride") = 0, py::arg("init_seed") = 0);

  m.def(
      "run_population",
      [](const Vec& theta_star, int n_layers, double alpha, double eta,
         double delta, std::int64_t iterations, std::int64_t log_stride,
         std::uint64_t seed) {
        PopulationState state;
        state.stack = balanced_init(static_cast<int>(theta_star.size()),
                                    n_layers, alpha);
        state.theta_star = theta_star;
        state.delta = delta;
        state.eta = eta;
        state.seed = seed;
        return trajectory_to_dict(run_population(state, iterations, log_stride));
      },
      py::arg("theta_star"), py::arg("n_layers"), py::arg("alpha"),
      py::arg("eta"), py::arg("delta") = 0.0, py::arg("iterations") = 10000,
      py::arg("log_stride") = 0, py::arg("seed") = 0);
}
