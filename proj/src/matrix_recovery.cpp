#include "dln/matrix_recovery.hpp"

#include <cmath>
#include <stdexcept>

namespace dln {

namespace {

using linalg::Mat;

/// Residual pass: returns the loss and fills Q = (1/m) sum Sign(r_i) A_i.
double matrix_loss_and_q(const Mat& prod, const MatrixDataset& mds,
                         double sign_at_zero, Mat& q_out) {
  const int dd = mds.d * mds.d;
  q_out.assign(dd, 0.0);
  double loss = 0.0;
  for (int i = 0; i < mds.m; ++i) {
    const double* a = mds.measurement(i);
    double pred = 0.0;
    for (int e = 0; e < dd; ++e) pred += a[e] * prod[e];
    const double r = pred - mds.responses[i];
    loss += std::abs(r);
    const double s = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : sign_at_zero);
    if (s != 0.0) {
      for (int e = 0; e < dd; ++e) q_out[e] += s * a[e];
    }
  }
  const double inv_m = 1.0 / mds.m;
  for (double& v : q_out) v *= inv_m;
  return loss * inv_m;
}

std::vector<Mat> factor_gradients(const MatrixStack& stack, const Mat& q) {
  const int n = stack.depth();
  const int d = stack.d;
  std::vector<Mat> prefix(n), suffix(n);
  Mat acc = linalg::identity(d);
  for (int i = 0; i < n; ++i) {
    prefix[i] = acc;
    if (i + 1 < n) acc = linalg::matmul(acc, stack.factors[i], d);
  }
  acc = linalg::identity(d);
  for (int i = n - 1; i >= 0; --i) {
    suffix[i] = acc;
    if (i > 0) acc = linalg::matmul(stack.factors[i], acc, d);
  }
  std::vector<Mat> grads(n);
  for (int i = 0; i < n; ++i) {
    const Mat left = linalg::transpose(prefix[i], d);
    const Mat right = linalg::transpose(suffix[i], d);
    grads[i] = linalg::matmul(linalg::matmul(left, q, d), right, d);
  }
  return grads;
}

}  // namespace

linalg::Mat MatrixStack::product() const {
  validate();
  Mat p = factors[0];
  for (int i = 1; i < depth(); ++i) p = linalg::matmul(p, factors[i], d);
  return p;
}

void MatrixStack::validate() const {
  if (factors.size() < 2)
    throw std::invalid_argument("MatrixStack: depth must be >= 2");
  for (const Mat& f : factors) {
    if (static_cast<int>(f.size()) != d * d)
      throw std::invalid_argument("MatrixStack: factor shape mismatch");
  }
}

MatrixDataset generate_matrix_problem(int d, int r, int m,
                                      const NoiseSpec& spec,
                                      std::uint64_t seed) {
  if (r < 1 || r > d)
    throw std::invalid_argument("generate_matrix_problem: need 1 <= r <= d");
  if (m < 1) throw std::invalid_argument("generate_matrix_problem: m >= 1");
  spec.validate();

  MatrixDataset mds;
  mds.d = d;
  mds.rank = r;
  mds.m = m;
  mds.seed = seed;
  mds.noise_spec = spec;

  Philox truth_rng(seed, streams::kGroundTruth);
  std::vector<double> g1(static_cast<std::size_t>(d) * r);
  std::vector<double> g2(static_cast<std::size_t>(d) * r);
  for (double& v : g1) v = truth_rng.normal();
  for (double& v : g2) v = truth_rng.normal();
  mds.x_star.assign(static_cast<std::size_t>(d) * d, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(r));
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < r; ++k) {
      const double gik = g1[static_cast<std::size_t>(i) * r + k];
      for (int j = 0; j < d; ++j) {
        mds.x_star[static_cast<std::size_t>(i) * d + j] +=
            scale * gik * g2[static_cast<std::size_t>(j) * r + k];
      }
    }
  }

  Philox design_rng(seed, streams::kDesign);
  mds.measurements.resize(static_cast<std::size_t>(m) * d * d);
  for (double& v : mds.measurements) v = design_rng.normal();

  Philox support_rng(seed, streams::kNoiseSupport);
  Philox value_rng(seed, streams::kNoiseValues);
  auto [noise, support] = generate_noise(m, spec, support_rng, value_rng);
  mds.noise = std::move(noise);
  mds.noise_support = std::move(support);

  mds.responses.resize(m);
  const int dd = d * d;
  for (int i = 0; i < m; ++i) {
    const double* a = mds.measurement(i);
    double acc = 0.0;
    for (int e = 0; e < dd; ++e) acc += a[e] * mds.x_star[e];
    mds.responses[i] = acc + mds.noise[i];
  }
  return mds;
}

double matrix_l1_loss(const MatrixStack& stack, const MatrixDataset& mds) {
  if (stack.d != mds.d)
    throw std::invalid_argument("matrix_l1_loss: shape mismatch");
  const Mat prod = stack.product();
  const int dd = mds.d * mds.d;
  double loss = 0.0;
  for (int i = 0; i < mds.m; ++i) {
    const double* a = mds.measurement(i);
    double pred = 0.0;
    for (int e = 0; e < dd; ++e) pred += a[e] * prod[e];
    loss += std::abs(pred - mds.responses[i]);
  }
  return loss / mds.m;
}

std::vector<linalg::Mat> matrix_subgradient(const MatrixStack& stack,
                                            const MatrixDataset& mds,
                                            const SubgradPolicy& policy) {
  if (stack.d != mds.d)
    throw std::invalid_argument("matrix_subgradient: shape mismatch");
  const Mat prod = stack.product();
  Mat q;
  matrix_loss_and_q(prod, mds, policy.sign_at_zero, q);
  return factor_gradients(stack, q);
}

TrajectoryRecord run_subgm_matrix(const MatrixDataset& mds,
                                  const MatrixRunConfig& config) {
  if (config.iterations < 1)
    throw std::invalid_argument("run_subgm_matrix: iterations must be >= 1");
  if (config.n_layers < 2)
    throw std::invalid_argument("run_subgm_matrix: N must be >= 2");
  config.schedule.validate();

  const int d = mds.d;
  const int dd = d * d;
  MatrixStack stack;
  stack.d = d;
  Philox init_rng(config.init_seed, streams::kInit);
  // Per-factor scale alpha^(1/N) so the initial product sits at the alpha
  // scale, mirroring the balanced diagonal init. A per-factor scale of alpha
  // itself puts the depth-4 product at ~1e-11, and the growth phase then
  // cannot lift off within any reasonable horizon.
  const double init_sd = std::pow(config.alpha, 1.0 / config.n_layers) /
                         std::sqrt(static_cast<double>(d));
  stack.factors.assign(config.n_layers, Mat(dd, 0.0));
  for (Mat& f : stack.factors)
    for (double& v : f) v = init_rng.normal(0.0, init_sd);

  TrajectoryRecord traj;
  traj.total_iters = config.iterations;
  traj.log_stride = config.log_stride > 0
                        ? config.log_stride
                        : std::max<std::int64_t>(1, config.iterations / 2000);

  const double x_norm = linalg::frobenius_norm(mds.x_star);
  auto measure = [&](std::int64_t t, double eta) {
    TrajectoryPoint p;
    p.iter = t;
    p.step_size = eta;
    const Mat prod = stack.product();
    p.train_loss = matrix_l1_loss(stack, mds);
    Mat diff(dd);
    for (int e = 0; e < dd; ++e) diff[e] = prod[e] - mds.x_star[e];
    p.gen_error = linalg::frobenius_norm(diff);
    double gap = 0.0;
    for (int i = 0; i < stack.depth(); ++i)
      for (int j = i + 1; j < stack.depth(); ++j)
        for (int e = 0; e < dd; ++e)
          gap = std::max(gap,
                         std::abs(stack.factors[i][e] - stack.factors[j][e]));
    p.balance_gap = gap;
    // Signal / residual analog: error of the best rank-r part of the product
    // vs the excess-rank energy.
    const linalg::Svd dec = linalg::svd(prod, d);
    const Mat low = linalg::truncate_rank(dec, d, mds.rank);
    Mat sig_diff(dd), excess(dd);
    for (int e = 0; e < dd; ++e) {
      sig_diff[e] = low[e] - mds.x_star[e];
      excess[e] = prod[e] - low[e];
    }
    p.signal_error = linalg::frobenius_norm(sig_diff);
    p.residual_norm = linalg::frobenius_norm(excess);
    return p;
  };

  traj.points.push_back(measure(0, config.schedule.at(0)));

  Mat q;
  for (std::int64_t t = 0; t < config.iterations; ++t) {
    const double eta = config.schedule.at(t);
    const Mat prod = stack.product();
    matrix_loss_and_q(prod, mds, config.policy.sign_at_zero, q);
    const std::vector<Mat> grads = factor_gradients(stack, q);
    for (int i = 0; i < stack.depth(); ++i) {
      Mat& f = stack.factors[i];
      const Mat& g = grads[i];
      for (int e = 0; e < dd; ++e) f[e] -= eta * g[e];
    }
    const std::int64_t done = t + 1;
    if (done % traj.log_stride == 0 || done == config.iterations) {
      TrajectoryPoint p = measure(done, config.schedule.at(done));
      const bool runaway =
          !std::isfinite(p.train_loss) || !std::isfinite(p.gen_error) ||
          p.gen_error > 1e6 * x_norm;
      traj.points.push_back(p);
      if (runaway) {
        traj.diverged = true;
        break;
      }
    }
  }
  traj.final_stack = LayerStack{};  // vector schema unused for matrices
  return traj;
}

}  // namespace dln
