#include "dln/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "dln/dynamics.hpp"
#include "dln/matrix_recovery.hpp"

namespace dln {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Worker pool

class WorkerPool {
 public:
  explicit WorkerPool(int n_workers) {
    for (int i = 0; i < n_workers; ++i) {
      threads_.emplace_back([this] { worker(); });
    }
  }

  ~WorkerPool() {
    {
      std::unique_lock lock(mu_);
      done_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::function<void()> task) {
    {
      std::unique_lock lock(mu_);
      queue_.push(std::move(task));
      ++pending_;
    }
    cv_.notify_one();
  }

  /// Blocks until every submitted task finished; rethrows the first failure.
  void wait_all() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return pending_ == 0; });
    if (error_) {
      auto err = error_;
      error_ = nullptr;
      std::rethrow_exception(err);
    }
  }

 private:
  void worker() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return done_ || !queue_.empty(); });
        if (queue_.empty()) {
          if (done_) return;
          continue;
        }
        task = std::move(queue_.front());
        queue_.pop();
      }
      try {
        task();
      } catch (...) {
        std::unique_lock lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      {
        std::unique_lock lock(mu_);
        if (--pending_ == 0) idle_cv_.notify_all();
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::queue<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  int pending_ = 0;
  bool done_ = false;
  std::exception_ptr error_;
};

int worker_count(std::size_t n_tasks) {
  int n = 0;
  if (const char* env = std::getenv("DLN_WORKERS")) {
    n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  return std::min<int>(n, std::max<std::size_t>(1, n_tasks));
}

// ---------------------------------------------------------------------------
// Parsing helpers

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "kind",          "out_dir",       "seeds",        "d",
      "k",             "m",             "p",            "noise_dist",
      "noise_param",   "theta_min",     "theta_max",    "depths",
      "alpha",         "schedule",      "eta",          "eta0",
      "decay_q",       "pieces",        "T",            "log_stride",
      "init",          "gammas",        "probe_method", "probe_budget",
      "probe_restarts","probe_step_scale", "eps_smooth", "curvature_iters",
      "grid_alphas",   "grid_betas",    "m_list",       "n_mc",
      "r",             "eta_pop_scale", "compare_cutoff"};
  return keys;
}

/// "lo:hi:count" -> linspace including both ends.
std::vector<double> parse_linspace(const std::string& s) {
  const auto parts = split(s, ':');
  if (parts.size() != 3) throw std::invalid_argument("expected lo:hi:count");
  const double lo = std::stod(parts[0]);
  const double hi = std::stod(parts[1]);
  const int count = std::stoi(parts[2]);
  if (count < 2) throw std::invalid_argument("count must be >= 2");
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Output helpers

/// Writes through a temp file in the same directory, then renames.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target)
      : target_(std::move(target)), temp_(target_) {
    temp_ += ".tmp";
  }
  const fs::path& temp() const { return temp_; }
  void commit() {
    fs::rename(temp_, target_);
    committed_ = true;
  }
  ~AtomicFile() {
    if (!committed_) {
      std::error_code ec;
      fs::remove(temp_, ec);
    }
  }

 private:
  fs::path target_;
  fs::path temp_;
  bool committed_ = false;
};

void write_text_atomic(const fs::path& path, const std::string& content) {
  AtomicFile file(path);
  {
    std::ofstream out(file.temp());
    if (!out) throw std::runtime_error("cannot open " + file.temp().string());
    out << content;
  }
  file.commit();
}

ordered_json config_echo(const ExperimentConfig& config) {
  ordered_json echo;
  for (const auto& [key, value] : config.raw) echo[key] = value;
  return echo;
}

Dataset make_dataset(const ExperimentConfig& config, std::uint64_t seed,
                     int m_override = 0) {
  return generate_dataset(config.d, config.k,
                          m_override > 0 ? m_override : config.m,
                          config.theta_min, config.theta_max, config.noise,
                          seed);
}

ordered_json run_sidecar(const ExperimentConfig& config, std::uint64_t seed,
                         int n_layers) {
  ordered_json j;
  j["schema"] = "dln.run.v1";
  j["seed"] = seed;
  j["depth"] = n_layers;
  j["config"] = config_echo(config);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing / validation

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::trajectory: return "trajectory";
    case ExperimentKind::landscape_grid: return "landscape_grid";
    case ExperimentKind::flatness_sweep: return "flatness_sweep";
    case ExperimentKind::prop1_sweep: return "prop1_sweep";
    case ExperimentKind::matrix: return "matrix";
    case ExperimentKind::dynamics_compare: return "dynamics_compare";
  }
  return "?";
}

ExperimentConfig parse_config_text(const std::string& text,
                                   ValidationReport& report) {
  ExperimentConfig config;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      report.errors.push_back("line " + std::to_string(line_no) +
                              ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(known_keys().begin(), known_keys().end(), key) ==
        known_keys().end()) {
      report.errors.push_back("unknown key: " + key);
      continue;
    }
    kv[key] = value;  // later assignments win, so CLI overrides append
  }
  config.raw = kv;

  auto take = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };
  auto fail = [&](const std::string& key, const std::string& what) {
    report.errors.push_back(key + ": " + what);
  };
  auto get_double = [&](const std::string& key, double& out) {
    if (const auto v = take(key)) {
      try {
        out = std::stod(*v);
      } catch (...) {
        fail(key, "not a number: " + *v);
      }
    }
  };
  auto get_int = [&](const std::string& key, auto& out) {
    if (const auto v = take(key)) {
      try {
        out = static_cast<std::decay_t<decltype(out)>>(std::stoll(*v));
      } catch (...) {
        fail(key, "not an integer: " + *v);
      }
    }
  };

  if (const auto v = take("kind")) {
    const std::string& s = *v;
    if (s == "trajectory") config.kind = ExperimentKind::trajectory;
    else if (s == "landscape_grid") config.kind = ExperimentKind::landscape_grid;
    else if (s == "flatness_sweep") config.kind = ExperimentKind::flatness_sweep;
    else if (s == "prop1_sweep") config.kind = ExperimentKind::prop1_sweep;
    else if (s == "matrix") config.kind = ExperimentKind::matrix;
    else if (s == "dynamics_compare") config.kind = ExperimentKind::dynamics_compare;
    else fail("kind", "unknown experiment kind: " + s);
  } else {
    report.errors.push_back("kind: required");
  }
  if (const auto v = take("out_dir")) config.out_dir = *v;
  if (const auto v = take("seeds")) {
    config.seeds.clear();
    try {
      for (const auto& tok : split(*v, ',')) {
        if (tok.find(':') != std::string::npos) {  // "lo:hi" inclusive range
          const auto ends = split(tok, ':');
          if (ends.size() != 2) throw std::invalid_argument("range");
          for (std::uint64_t s = std::stoull(ends[0]); s <= std::stoull(ends[1]); ++s)
            config.seeds.push_back(s);
        } else {
          config.seeds.push_back(std::stoull(tok));
        }
      }
    } catch (...) {
      fail("seeds", "expected comma list or lo:hi ranges");
    }
  }

  get_int("d", config.d);
  get_int("k", config.k);
  get_int("m", config.m);
  get_double("p", config.p);
  config.noise.corruption_prob = config.p;
  if (const auto v = take("noise_dist")) {
    try {
      config.noise.dist = noise_dist_from_string(*v);
    } catch (const std::exception& e) {
      fail("noise_dist", e.what());
    }
  }
  get_double("noise_param", config.noise.param);
  get_double("theta_min", config.theta_min);
  get_double("theta_max", config.theta_max);

  if (const auto v = take("depths")) {
    config.depths.clear();
    try {
      for (const auto& tok : split(*v, ',')) config.depths.push_back(std::stoi(tok));
    } catch (...) {
      fail("depths", "expected comma list of integers");
    }
  }
  get_double("alpha", config.alpha);

  std::string schedule_kind = "constant";
  if (const auto v = take("schedule")) schedule_kind = *v;
  double eta = 1e-3, eta0 = 1e-2, decay_q = 0.9999;
  get_double("eta", eta);
  get_double("eta0", eta0);
  get_double("decay_q", decay_q);
  try {
    if (schedule_kind == "constant") {
      config.schedule = StepSchedule::constant_step(eta);
    } else if (schedule_kind == "geometric") {
      config.schedule = StepSchedule::geometric(eta0, decay_q);
    } else if (schedule_kind == "piecewise") {
      std::vector<std::pair<std::int64_t, double>> pieces;
      if (const auto v = take("pieces")) {
        for (const auto& tok : split(*v, ',')) {
          const auto pair = split(tok, ':');
          if (pair.size() != 2) throw std::invalid_argument("pieces: expected from:eta");
          pieces.emplace_back(std::stoll(pair[0]), std::stod(pair[1]));
        }
      }
      config.schedule = StepSchedule::piecewise(std::move(pieces));
    } else {
      fail("schedule", "unknown schedule kind: " + schedule_kind);
    }
  } catch (const std::exception& e) {
    fail("schedule", e.what());
  }
  get_int("T", config.iterations);
  get_int("log_stride", config.log_stride);
  if (const auto v = take("init")) {
    if (*v == "balanced") config.gaussian_init = false;
    else if (*v == "gaussian") config.gaussian_init = true;
    else fail("init", "expected balanced or gaussian");
  }

  if (const auto v = take("gammas")) {
    config.gammas.clear();
    try {
      for (const auto& tok : split(*v, ',')) config.gammas.push_back(std::stod(tok));
    } catch (...) {
      fail("gammas", "expected comma list of radii");
    }
  }
  if (const auto v = take("probe_method")) {
    if (*v == "random_sampling") config.probe.kind = ProbeMethod::Kind::random_sampling;
    else if (*v == "projected_descent") config.probe.kind = ProbeMethod::Kind::projected_descent;
    else fail("probe_method", "expected random_sampling or projected_descent");
  }
  get_int("probe_budget", config.probe.budget);
  get_int("probe_restarts", config.probe.restarts);
  get_double("probe_step_scale", config.probe.step_scale);
  get_double("eps_smooth", config.eps_smooth);
  get_int("curvature_iters", config.curvature_iters);
  try {
    if (const auto v = take("grid_alphas")) config.grid_alphas = parse_linspace(*v);
    if (const auto v = take("grid_betas")) config.grid_betas = parse_linspace(*v);
  } catch (const std::exception& e) {
    fail("grid_alphas/grid_betas", e.what());
  }

  if (const auto v = take("m_list")) {
    config.m_list.clear();
    try {
      for (const auto& tok : split(*v, ',')) config.m_list.push_back(std::stoi(tok));
    } catch (...) {
      fail("m_list", "expected comma list of integers");
    }
  }
  get_int("n_mc", config.n_mc);
  get_int("r", config.rank);
  if (const auto v = take("eta_pop_scale")) {
    if (*v != "auto") {
      try {
        config.eta_pop_scale = std::stod(*v);
      } catch (...) {
        fail("eta_pop_scale", "expected auto or a number");
      }
    }
  }
  get_double("compare_cutoff", config.compare_cutoff);

  const ValidationReport structural = validate_config(config);
  report.errors.insert(report.errors.end(), structural.errors.begin(),
                       structural.errors.end());
  report.warnings.insert(report.warnings.end(), structural.warnings.begin(),
                         structural.warnings.end());
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             ValidationReport& report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), report);
}

ValidationReport validate_config(const ExperimentConfig& config) {
  ValidationReport report;
  auto err = [&](const std::string& msg) { report.errors.push_back(msg); };

  if (config.out_dir.empty()) err("out_dir: must not be empty");
  if (config.seeds.empty()) err("seeds: must list at least one seed");
  if (config.d < 1) err("d: must be >= 1");
  if (config.m < 1) err("m: must be >= 1");
  if (config.k < 1) err("k: must be >= 1");
  if (config.k > config.d) err("k: must not exceed d");
  if (config.p < 0.0 || config.p >= 1.0) err("p: must be in [0, 1)");
  if (!(config.noise.param > 0.0)) err("noise_param: must be > 0");
  if (!(config.theta_min > 0.0)) err("theta_min: must be > 0");
  if (config.theta_max < config.theta_min) err("theta_max: must be >= theta_min");
  if (!(config.alpha > 0.0)) err("alpha: must be > 0");
  if (config.iterations < 1) err("T: must be >= 1");
  try {
    config.schedule.validate();
  } catch (const std::exception& e) {
    err(std::string("schedule: ") + e.what());
  }
  if (config.depths.empty()) err("depths: must list at least one depth");
  for (int n : config.depths) {
    if (n < 1) err("depths: every depth must be >= 1");
    if (config.kind == ExperimentKind::matrix && n < 2)
      err("depths: matrix experiments need N >= 2");
  }

  switch (config.kind) {
    case ExperimentKind::flatness_sweep: {
      if (config.gammas.size() < 4)
        err("gammas: flatness_sweep needs at least 4 radii");
      const auto [lo, hi] =
          std::minmax_element(config.gammas.begin(), config.gammas.end());
      if (!config.gammas.empty() && *hi < 10.0 * *lo)
        err("gammas: radii must span at least one decade");
      break;
    }
    case ExperimentKind::landscape_grid:
      if (config.gammas.empty()) err("gammas: landscape_grid needs a probe radius");
      break;
    case ExperimentKind::prop1_sweep:
      if (config.m_list.size() < 2)
        err("m_list: prop1_sweep needs at least two sample sizes");
      for (int m : config.m_list)
        if (m < 1) err("m_list: entries must be >= 1");
      break;
    case ExperimentKind::matrix:
      if (config.rank < 1 || config.rank > config.d)
        err("r: must satisfy 1 <= r <= d");
      break;
    default:
      break;
  }
  for (double gamma : config.gammas) {
    if (!(gamma > 0.0)) {
      err("gammas: radii must be > 0");
      break;
    }
  }
  if (config.probe.budget < 1) err("probe_budget: must be >= 1");
  if (config.probe.restarts < 1) err("probe_restarts: must be >= 1");
  if (!(config.eps_smooth > 0.0)) err("eps_smooth: must be > 0");
  if (config.n_mc < 2) err("n_mc: must be >= 2");
  if (config.compare_cutoff < 0.0) err("compare_cutoff: must be >= 0");

  // Radius sanity: beyond t0 / sqrt(d) the corrupted-sample kinks start to
  // fold into the ball and the gamma-power scaling degrades.
  const double radius_bound =
      std::min(config.noise.t0() / std::sqrt(static_cast<double>(config.d)), 1.0);
  for (double gamma : config.gammas) {
    if (gamma > radius_bound) {
      report.warnings.push_back(
          "gammas: radius " + std::to_string(gamma) +
          " exceeds t0/sqrt(d) = " + std::to_string(radius_bound) +
          "; probe scaling may degrade");
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Runners

namespace {

struct TaskOutput {
  std::vector<fs::path> files;
  ordered_json metrics;
  bool diverged = false;
};

void save_trajectory_atomic(const TrajectoryRecord& traj, const fs::path& csv,
                            const ordered_json& sidecar, const fs::path& json_path,
                            TaskOutput& out) {
  AtomicFile file(csv);
  save_trajectory_csv(traj, file.temp());
  file.commit();
  out.files.push_back(csv);
  write_text_atomic(json_path, sidecar.dump(2) + "\n");
  out.files.push_back(json_path);
}

ordered_json trajectory_metrics(const TrajectoryRecord& traj) {
  ordered_json j;
  j["min_gen_error"] = traj.min_gen_error();
  j["final_gen_error"] = traj.final_gen_error();
  j["final_train_loss"] = traj.points.back().train_loss;
  j["diverged"] = traj.diverged;
  const double tol = 2.0 * traj.min_gen_error();
  const EscapeWindow window = escape_time(traj, tol);
  j["escape_tol"] = tol;
  if (window.t_enter) {
    j["t_enter"] = *window.t_enter;
    j["t_exit"] = window.exit_or(traj.points.back().iter);
    j["escape_window"] = window.exit_or(traj.points.back().iter) - *window.t_enter;
  }
  return j;
}

using TaskFn = std::function<void(TaskOutput&)>;

std::vector<TaskOutput> run_tasks(std::vector<TaskFn> tasks) {
  std::vector<TaskOutput> outputs(tasks.size());
  WorkerPool pool(worker_count(tasks.size()));
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    pool.submit([&tasks, &outputs, i] { tasks[i](outputs[i]); });
  }
  pool.wait_all();
  return outputs;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const ValidationReport report = validate_config(config);
  if (!report.ok()) {
    std::string msg = "invalid config:";
    for (const auto& e : report.errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }

  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);

  ExperimentResult result;
  ordered_json summary;
  summary["schema"] = "dln.summary.v1";
  summary["kind"] = to_string(config.kind);
  summary["config"] = config_echo(config);

  std::vector<TaskFn> tasks;
  std::vector<TaskOutput> outputs;

  try {
    switch (config.kind) {
      case ExperimentKind::trajectory: {
        for (int n : config.depths) {
          for (std::uint64_t seed : config.seeds) {
            tasks.push_back([&, n, seed](TaskOutput& out) {
              const Dataset ds = make_dataset(config, seed);
              RunConfig run;
              run.n_layers = n;
              run.alpha = config.alpha;
              run.schedule = config.schedule;
              run.iterations = config.iterations;
              run.log_stride = config.log_stride;
              run.gaussian_init = config.gaussian_init;
              run.init_seed = seed;
              const TrajectoryRecord traj = run_subgm(ds, run);
              const std::string stem =
                  "traj_N" + std::to_string(n) + "_seed" + std::to_string(seed);
              save_trajectory_atomic(traj, out_dir / (stem + ".csv"),
                                     run_sidecar(config, seed, n),
                                     out_dir / (stem + ".json"), out);
              out.metrics = trajectory_metrics(traj);
              out.metrics["depth"] = n;
              out.metrics["seed"] = seed;
              out.diverged = traj.diverged;
            });
          }
        }
        break;
      }

      case ExperimentKind::landscape_grid: {
        const int n = config.depths.front();
        const double gamma = config.gammas.front();
        for (std::uint64_t seed : config.seeds) {
          tasks.push_back([&, n, seed, gamma](TaskOutput& out) {
            const Dataset ds = make_dataset(config, seed);
            const LayerStack star = balanced_true_solution(ds.theta_star, n);
            ProbeMethod method = config.probe;
            method.seed = seed;
            const ProbeReport probe = probe_descent(star, ds, gamma, method);

            Perturbation dir_d = probe.argmin;
            double norm = 0.0;
            for (const Vec& w : dir_d)
              for (double v : w) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 0.0) {
              for (Vec& w : dir_d)
                for (double& v : w) v /= norm;
            } else {
              // No descent found: fall back to the steepest descent direction.
              const StackGradient g = subgradient(star, ds);
              double gnorm = 0.0;
              for (const Vec& w : g.blocks)
                for (double v : w) gnorm += v * v;
              gnorm = std::sqrt(gnorm);
              dir_d = g.blocks;
              for (Vec& w : dir_d)
                for (double& v : w) v = gnorm > 0.0 ? -v / gnorm : 0.0;
            }
            const CurvatureReport curvature = negative_curvature_direction(
                star, ds, config.eps_smooth, config.curvature_iters);

            std::vector<double> alphas = config.grid_alphas;
            std::vector<double> betas = config.grid_betas;
            if (alphas.empty()) {
              alphas.resize(21);
              for (int i = 0; i < 21; ++i)
                alphas[i] = -gamma + 2.0 * gamma * i / 20.0;
            }
            if (betas.empty()) betas = alphas;
            const auto grid =
                landscape_grid(star, ds, dir_d, curvature.direction, alphas, betas);

            const std::string stem = "grid_seed" + std::to_string(seed);
            AtomicFile file(out_dir / (stem + ".csv"));
            save_grid_csv(grid, alphas, betas, file.temp());
            file.commit();
            out.files.push_back(out_dir / (stem + ".csv"));

            double grid_min = grid[0][0];
            for (const auto& row : grid)
              for (double v : row) grid_min = std::min(grid_min, v);
            out.metrics["seed"] = seed;
            out.metrics["min_delta_loss"] = probe.min_delta_loss;
            out.metrics["probe_evals"] = probe.n_evals;
            out.metrics["lambda_min"] = curvature.lambda_min;
            out.metrics["center_loss"] = l1_loss(star, ds);
            out.metrics["grid_min"] = grid_min;
          });
        }
        break;
      }

      case ExperimentKind::flatness_sweep: {
        for (int n : config.depths) {
          for (std::uint64_t seed : config.seeds) {
            tasks.push_back([&, n, seed](TaskOutput& out) {
              const Dataset ds = make_dataset(config, seed);
              const LayerStack star = balanced_true_solution(ds.theta_star, n);
              ProbeMethod method = config.probe;
              method.seed = seed;
              const FlatnessFit fit =
                  flatness_exponent(star, ds, config.gammas, method);

              const std::string stem = "flatness_N" + std::to_string(n) +
                                       "_seed" + std::to_string(seed);
              std::ostringstream csv;
              csv << "gamma,min_delta_loss,n_evals\n";
              for (const ProbeReport& r : fit.reports) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld\n", r.gamma,
                              r.min_delta_loss,
                              static_cast<long long>(r.n_evals));
                csv << buf;
              }
              write_text_atomic(out_dir / (stem + ".csv"), csv.str());
              out.files.push_back(out_dir / (stem + ".csv"));
              out.metrics["depth"] = n;
              out.metrics["seed"] = seed;
              out.metrics["slope"] = fit.slope;
              out.metrics["fitted_gammas"] = fit.fitted_gammas;
              out.metrics["skipped_gammas"] = fit.skipped_gammas;
            });
          }
        }
        break;
      }

      case ExperimentKind::prop1_sweep: {
        for (int m : config.m_list) {
          for (std::uint64_t seed : config.seeds) {
            tasks.push_back([&, m, seed](TaskOutput& out) {
              const Dataset ds = make_dataset(config, seed, m);
              const double dev = direction_preserving_deviation(
                  ds.theta_star, ds, config.noise);
              out.metrics["m"] = m;
              out.metrics["seed"] = seed;
              out.metrics["deviation"] = dev;
            });
          }
        }
        break;
      }

      case ExperimentKind::matrix: {
        for (int n : config.depths) {
          for (std::uint64_t seed : config.seeds) {
            tasks.push_back([&, n, seed](TaskOutput& out) {
              const MatrixDataset mds = generate_matrix_problem(
                  config.d, config.rank, config.m, config.noise, seed);
              MatrixRunConfig run;
              run.n_layers = n;
              run.alpha = config.alpha;
              run.schedule = config.schedule;
              run.iterations = config.iterations;
              run.log_stride = config.log_stride;
              run.init_seed = seed;
              const TrajectoryRecord traj = run_subgm_matrix(mds, run);
              const std::string stem = "matrix_N" + std::to_string(n) +
                                       "_seed" + std::to_string(seed);
              save_trajectory_atomic(traj, out_dir / (stem + ".csv"),
                                     run_sidecar(config, seed, n),
                                     out_dir / (stem + ".json"), out);
              out.metrics["depth"] = n;
              out.metrics["seed"] = seed;
              out.metrics["final_gen_error"] = traj.final_gen_error();
              out.metrics["min_gen_error"] = traj.min_gen_error();
              out.metrics["x_star_norm"] = linalg::frobenius_norm(mds.x_star);
              out.metrics["diverged"] = traj.diverged;
              out.diverged = traj.diverged;
            });
          }
        }
        break;
      }

      case ExperimentKind::dynamics_compare: {
        const int n = config.depths.front();
        for (std::uint64_t seed : config.seeds) {
          tasks.push_back([&, n, seed](TaskOutput& out) {
            const Dataset ds = make_dataset(config, seed);
            const std::int64_t stride =
                config.log_stride > 0
                    ? config.log_stride
                    : std::max<std::int64_t>(1, config.iterations / 5000);
            RunConfig run;
            run.n_layers = n;
            run.alpha = config.alpha;
            run.schedule = config.schedule;
            run.iterations = config.iterations;
            run.log_stride = stride;
            const TrajectoryRecord empirical = run_subgm(ds, run);

            double theta_norm = 0.0;
            for (double v : ds.theta_star) theta_norm += v * v;
            theta_norm = std::sqrt(theta_norm);
            const double scale =
                config.eta_pop_scale
                    ? *config.eta_pop_scale
                    : phi_factor(config.p, config.noise, theta_norm).value;

            PopulationState state;
            state.stack = balanced_init(ds.d, n, config.alpha);
            state.theta_star = ds.theta_star;
            state.eta = scale * config.schedule.at(0);
            state.seed = seed;
            const TrajectoryRecord population =
                run_population(state, config.iterations, stride);

            const double gap = compare_to_empirical(
                population, empirical, TrajectoryMetric::generalization_error,
                config.compare_cutoff > 0.0
                    ? std::optional<double>(config.compare_cutoff)
                    : std::nullopt);

            const std::string emp_stem = "empirical_seed" + std::to_string(seed);
            const std::string pop_stem = "population_seed" + std::to_string(seed);
            save_trajectory_atomic(empirical, out_dir / (emp_stem + ".csv"),
                                   run_sidecar(config, seed, n),
                                   out_dir / (emp_stem + ".json"), out);
            AtomicFile pop_file(out_dir / (pop_stem + ".csv"));
            save_trajectory_csv(population, pop_file.temp());
            pop_file.commit();
            out.files.push_back(out_dir / (pop_stem + ".csv"));

            out.metrics["seed"] = seed;
            out.metrics["eta_pop_scale"] = scale;
            out.metrics["max_relative_gap"] = gap;
            out.diverged = empirical.diverged;
          });
        }
        break;
      }
    }

    outputs = run_tasks(std::move(tasks));
  } catch (...) {
    for (const auto& out : outputs)
      for (const auto& file : out.files) {
        std::error_code ec;
        fs::remove(file, ec);
      }
    throw;
  }

  ordered_json runs = ordered_json::array();
  for (auto& out : outputs) {
    runs.push_back(std::move(out.metrics));
    result.any_diverged = result.any_diverged || out.diverged;
    result.files.insert(result.files.end(), out.files.begin(), out.files.end());
  }

  if (config.kind == ExperimentKind::prop1_sweep) {
    // the sweep's rows live in the per-task metrics; emit them as one table
    std::ostringstream csv;
    csv << "m,seed,deviation\n";
    for (const auto& run : runs) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%d,%llu,%.17g\n", run["m"].get<int>(),
                    static_cast<unsigned long long>(run["seed"].get<std::uint64_t>()),
                    run["deviation"].get<double>());
      csv << buf;
    }
    const fs::path table = out_dir / "deviations.csv";
    write_text_atomic(table, csv.str());
    result.files.push_back(table);
  } else if (config.kind == ExperimentKind::landscape_grid) {
    std::ostringstream csv;
    csv << "seed,gamma,min_delta_loss,n_evals,lambda_min,center_loss,grid_min\n";
    for (const auto& run : runs) {
      char buf[192];
      std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%lld,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(run["seed"].get<std::uint64_t>()),
                    config.gammas.front(),
                    run["min_delta_loss"].get<double>(),
                    static_cast<long long>(run["probe_evals"].get<std::int64_t>()),
                    run["lambda_min"].get<double>(),
                    run["center_loss"].get<double>(),
                    run["grid_min"].get<double>());
      csv << buf;
    }
    const fs::path table = out_dir / "probe_reports.csv";
    write_text_atomic(table, csv.str());
    result.files.push_back(table);
  }
  summary["runs"] = std::move(runs);
  summary["headline"] = [&] {
    ordered_json headline;
    if (config.kind == ExperimentKind::flatness_sweep) {
      for (int n : config.depths) {
        std::vector<double> slopes;
        for (const auto& run : summary["runs"])
          if (run["depth"] == n) slopes.push_back(run["slope"].get<double>());
        std::sort(slopes.begin(), slopes.end());
        if (!slopes.empty())
          headline["median_slope_N" + std::to_string(n)] =
              slopes[slopes.size() / 2];
      }
    } else if (config.kind == ExperimentKind::prop1_sweep) {
      std::vector<double> means;
      for (int m : config.m_list) {
        double acc = 0.0;
        int count = 0;
        for (const auto& run : summary["runs"])
          if (run["m"] == m) {
            acc += run["deviation"].get<double>();
            ++count;
          }
        const double mean = count > 0 ? acc / count : 0.0;
        headline["mean_deviation_m" + std::to_string(m)] = mean;
        means.push_back(mean);
      }
      for (std::size_t i = 0; i + 1 < means.size(); ++i) {
        headline["ratio_" + std::to_string(config.m_list[i]) + "_to_" +
                 std::to_string(config.m_list[i + 1])] =
            means[i] / std::max(means[i + 1], 1e-300);
      }
    } else if (config.kind == ExperimentKind::trajectory ||
               config.kind == ExperimentKind::matrix) {
      for (int n : config.depths) {
        double min_err = std::numeric_limits<double>::infinity();
        double final_acc = 0.0;
        int count = 0;
        for (const auto& run : summary["runs"])
          if (run["depth"] == n) {
            min_err = std::min(min_err, run["min_gen_error"].get<double>());
            final_acc += run["final_gen_error"].get<double>();
            ++count;
          }
        if (count > 0) {
          headline["min_gen_error_N" + std::to_string(n)] = min_err;
          headline["mean_final_gen_error_N" + std::to_string(n)] =
              final_acc / count;
        }
      }
    } else if (config.kind == ExperimentKind::dynamics_compare) {
      double worst = 0.0;
      for (const auto& run : summary["runs"])
        worst = std::max(worst, run["max_relative_gap"].get<double>());
      headline["max_relative_gap"] = worst;
    } else if (config.kind == ExperimentKind::landscape_grid) {
      int negative = 0;
      for (const auto& run : summary["runs"])
        if (run["min_delta_loss"].get<double>() < 0.0) ++negative;
      headline["seeds_with_descent"] = negative;
      headline["seeds_total"] = static_cast<int>(config.seeds.size());
    }
    return headline;
  }();

  result.summary_path = out_dir / "summary.json";
  write_text_atomic(result.summary_path, summary.dump(2) + "\n");
  result.files.push_back(result.summary_path);
  return result;
}

const std::map<std::string, std::string>& preset_configs() {
  static const std::map<std::string, std::string> presets = {
#include "presets_data.inc"
  };
  return presets;
}

}  // namespace dln
