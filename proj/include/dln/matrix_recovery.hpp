#pragma once

#include <cstdint>
#include <vector>

#include "dln/data.hpp"
#include "dln/linalg.hpp"
#include "dln/loss.hpp"
#include "dln/optimizer.hpp"

namespace dln {

/// Deep factorized model W_1 W_2 ... W_N of square d x d factors.
struct MatrixStack {
  int d = 0;
  std::vector<linalg::Mat> factors;

  int depth() const { return static_cast<int>(factors.size()); }
  linalg::Mat product() const;
  void validate() const;
};

struct MatrixDataset {
  int d = 0;
  int rank = 0;
  int m = 0;
  std::vector<double> measurements;  // m matrices of d*d, concatenated
  Vec responses;                     // y_i = <A_i, X*> + eps_i
  linalg::Mat x_star;
  Vec noise;
  std::vector<int> noise_support;
  std::uint64_t seed = 0;
  NoiseSpec noise_spec;

  const double* measurement(int i) const {
    return measurements.data() + static_cast<std::size_t>(i) * d * d;
  }
};

/// X* = G1 G2^T / sqrt(r) with G1, G2 d x r standard Gaussian (rank r
/// exactly, ||X*||_F ~ d); measurement entries i.i.d. N(0, 1); corruption
/// per the noise spec.
MatrixDataset generate_matrix_problem(int d, int r, int m,
                                      const NoiseSpec& spec,
                                      std::uint64_t seed);

/// (1/m) sum_i |y_i - <A_i, W_1 ... W_N>|.
double matrix_l1_loss(const MatrixStack& stack, const MatrixDataset& mds);

/// Ascent sub-gradient: block i is
///   (prod_{k<i} W_k)^T Q (prod_{k>i} W_k)^T,
/// Q = (1/m) sum_j Sign(<A_j, P> - y_j) A_j, computed with prefix/suffix
/// product caches.
std::vector<linalg::Mat> matrix_subgradient(const MatrixStack& stack,
                                            const MatrixDataset& mds,
                                            const SubgradPolicy& policy = {});

struct MatrixRunConfig {
  int n_layers = 2;
  double alpha = 1e-3;  // product-level init scale; factor entries are
                        // N(0, alpha^(2/N) / d)
  StepSchedule schedule;
  std::int64_t iterations = 1000;
  std::int64_t log_stride = 0;
  std::uint64_t init_seed = 0;
  SubgradPolicy policy;
};

/// SubGM on the factorized model from Gaussian initialization. Trajectory
/// columns reuse the vector schema: gen_error is ||prod W - X*||_F,
/// signal/residual split the error by the best rank-r part, balance_gap is
/// the max elementwise gap across factor pairs.
TrajectoryRecord run_subgm_matrix(const MatrixDataset& mds,
                                  const MatrixRunConfig& config);

}  // namespace dln
