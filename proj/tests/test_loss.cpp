#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "dln/loss.hpp"
#include "dln/rng.hpp"
#include "oracles.hpp"

using namespace dln;

namespace {

Dataset small_dataset(int d, int k, int m, double p, std::uint64_t seed,
                      double sigma = 5.0) {
  return generate_dataset(d, k, m, 1.0, 2.0,
                          NoiseSpec{p, NoiseDist::gaussian, sigma}, seed);
}

LayerStack random_positive_stack(int n, int d, std::uint64_t seed) {
  Philox rng(seed, 0);
  LayerStack stack;
  stack.layers.assign(n, Vec(d));
  for (auto& layer : stack.layers)
    for (double& v : layer) v = rng.uniform(0.5, 1.5);
  return stack;
}

double min_abs_residual(const LayerStack& stack, const Dataset& ds) {
  const Vec prod = hadamard_product(stack);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ds.m; ++i) {
    double pred = 0.0;
    const auto x = ds.row(i);
    for (int l = 0; l < ds.d; ++l) pred += prod[l] * x[l];
    best = std::min(best, std::abs(pred - ds.responses[i]));
  }
  return best;
}

/// Directional derivative of a stack functional via central differences.
double fd_directional(const std::function<double(const LayerStack&)>& f,
                      const LayerStack& at, const std::vector<Vec>& dir,
                      double h) {
  auto shifted = [&](double t) {
    LayerStack s = at;
    for (int j = 0; j < s.depth(); ++j)
      for (int l = 0; l < s.dim(); ++l) s.layers[j][l] += t * dir[j][l];
    return f(s);
  };
  return (shifted(h) - shifted(-h)) / (2.0 * h);
}

std::vector<Vec> random_direction(int n, int d, Philox& rng) {
  std::vector<Vec> dir(n, Vec(d));
  double norm = 0.0;
  for (auto& layer : dir)
    for (double& v : layer) {
      v = rng.normal();
      norm += v * v;
    }
  norm = std::sqrt(norm);
  for (auto& layer : dir)
    for (double& v : layer) v /= norm;
  return dir;
}

double inner(const StackGradient& g, const std::vector<Vec>& dir) {
  double acc = 0.0;
  for (std::size_t j = 0; j < g.blocks.size(); ++j)
    for (std::size_t l = 0; l < g.blocks[j].size(); ++l)
      acc += g.blocks[j][l] * dir[j][l];
  return acc;
}

}  // namespace

TEST_CASE("l1_loss") {
  SUBCASE("true solution with p = 0 has zero loss") {
    const Dataset ds = small_dataset(10, 3, 50, 0.0, 1);
    const LayerStack star = balanced_true_solution(ds.theta_star, 2);
    CHECK(l1_loss(star, ds) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("true solution loss equals the mean absolute corruption") {
    const Dataset ds = small_dataset(10, 3, 50, 0.3, 2);
    const LayerStack star = balanced_true_solution(ds.theta_star, 2);
    double expected = 0.0;
    for (double e : ds.noise) expected += std::abs(e);
    expected /= ds.m;
    CHECK(l1_loss(star, ds) == doctest::Approx(expected).epsilon(1e-10));
  }
  SUBCASE("matches the scalar-loop oracle") {
    const Dataset ds = small_dataset(8, 2, 40, 0.2, 3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const LayerStack stack = random_positive_stack(3, 8, seed);
      CHECK(l1_loss(stack, ds) ==
            doctest::Approx(oracles::scalar_loop_l1(stack, ds)).epsilon(1e-12));
    }
  }
  SUBCASE("dimension mismatch") {
    const Dataset ds = small_dataset(8, 2, 40, 0.2, 3);
    CHECK_THROWS_AS(l1_loss(random_positive_stack(2, 9, 0), ds),
                    std::invalid_argument);
  }
}

TEST_CASE("subgradient") {
  SUBCASE("zero residuals with sign 0 policy give the zero gradient") {
    const Dataset ds = small_dataset(10, 3, 50, 0.0, 4);
    // product bitwise equal to theta (the balanced root-stack only matches to
    // rounding, which leaves +-1 signs on the residuals)
    const LayerStack star{{ds.theta_star, Vec(10, 1.0)}};
    const StackGradient g = subgradient(star, ds);
    for (const Vec& block : g.blocks)
      for (double v : block) CHECK(v == 0.0);
  }
  SUBCASE("one-layer reduction matches the direct formula") {
    const Dataset ds = small_dataset(6, 2, 30, 0.2, 5);
    const LayerStack stack = random_positive_stack(1, 6, 6);
    const StackGradient g = subgradient(stack, ds);
    Vec direct(6, 0.0);
    for (int i = 0; i < ds.m; ++i) {
      const auto x = ds.row(i);
      double pred = 0.0;
      for (int l = 0; l < 6; ++l) pred += stack.layers[0][l] * x[l];
      const double r = pred - ds.responses[i];
      const double s = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      for (int l = 0; l < 6; ++l) direct[l] += s * x[l];
    }
    for (int l = 0; l < 6; ++l)
      CHECK(g.blocks[0][l] == doctest::Approx(direct[l] / ds.m).epsilon(1e-12));
  }
  SUBCASE("equal layers get equal gradient blocks") {
    const Dataset ds = small_dataset(6, 2, 30, 0.2, 7);
    LayerStack stack = random_positive_stack(1, 6, 8);
    stack.layers.push_back(stack.layers[0]);
    stack.layers.push_back(stack.layers[0]);
    const StackGradient g = subgradient(stack, ds);
    CHECK(g.blocks[0] == g.blocks[1]);
    CHECK(g.blocks[1] == g.blocks[2]);
  }
  SUBCASE("directional finite differences at kink-free points") {
    const Dataset ds = small_dataset(8, 3, 30, 0.2, 9);
    Philox rng(10, 0);
    const double h = 1e-6;
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20 && seed < 200; ++seed) {
      const LayerStack stack = random_positive_stack(2, 8, 1000 + seed);
      if (min_abs_residual(stack, ds) < 1e-4) continue;
      const auto dir = random_direction(2, 8, rng);
      const double fd = fd_directional(
          [&](const LayerStack& s) { return l1_loss(s, ds); }, stack, dir, h);
      const double ip = inner(subgradient(stack, ds), dir);
      CHECK(fd == doctest::Approx(ip).epsilon(1e-5));
      ++checked;
    }
    CHECK(checked == 20);
  }
}

TEST_CASE("expected_loss equals generalization error") {
  const Dataset ds = small_dataset(7, 2, 20, 0.1, 11);
  CHECK(expected_loss(balanced_true_solution(ds.theta_star, 3),
                      ds.theta_star) == doctest::Approx(0.0));
  Vec shifted = ds.theta_star;
  shifted[0] += 1.0;
  CHECK(expected_loss({{shifted}}, ds.theta_star) == doctest::Approx(1.0));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const LayerStack stack = random_positive_stack(2, 7, seed);
    CHECK(expected_loss(stack, ds.theta_star) ==
          doctest::Approx(generalization_error(stack, ds.theta_star))
              .epsilon(1e-15));
  }
}

TEST_CASE("q_vector") {
  SUBCASE("aligned rows give the first basis vector") {
    Dataset ds;
    ds.d = 3;
    ds.m = 4;
    ds.design = {1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0};
    ds.responses.assign(4, 0.0);
    ds.noise.assign(4, 0.0);
    ds.theta_star = {0, 0, 0};
    const Vec q = q_vector({1.0, 0.0, 0.0}, ds);
    CHECK(q == Vec{1.0, 0.0, 0.0});
  }
  SUBCASE("zero argument with sign 0 policy gives zero") {
    const Dataset ds = small_dataset(6, 2, 30, 0.0, 12);
    const Vec q = q_vector(Vec(6, 0.0), ds);
    for (double v : q) CHECK(v == 0.0);
  }
  SUBCASE("oddness without noise") {
    const Dataset ds = small_dataset(6, 2, 30, 0.0, 13);
    Philox rng(14, 0);
    Vec z(6);
    for (double& v : z) v = rng.normal();
    Vec neg = z;
    for (double& v : neg) v = -v;
    const Vec q1 = q_vector(z, ds);
    const Vec q2 = q_vector(neg, ds);
    for (int l = 0; l < 6; ++l) CHECK(q1[l] == -q2[l]);
  }
  SUBCASE("sup-norm bounded by the mean absolute column") {
    const Dataset ds = small_dataset(6, 2, 30, 0.2, 15);
    Philox rng(16, 0);
    for (int trial = 0; trial < 10; ++trial) {
      Vec z(6);
      for (double& v : z) v = rng.normal();
      const Vec q = q_vector(z, ds);
      for (int l = 0; l < 6; ++l) {
        double bound = 0.0;
        for (int i = 0; i < ds.m; ++i) bound += std::abs(ds.row(i)[l]);
        CHECK(std::abs(q[l]) <= bound / ds.m + 1e-15);
      }
    }
  }
}

TEST_CASE("phi_factor") {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  SUBCASE("p = 0 is sqrt(2/pi) exactly") {
    const PhiEstimate est =
        phi_factor(0.0, NoiseSpec{0.0, NoiseDist::gaussian, 10.0}, 1.0);
    CHECK(std::abs(est.value - c) < 1e-12);
    CHECK(est.std_error == 0.0);
  }
  SUBCASE("gaussian closed form against monte carlo") {
    const NoiseSpec spec{0.5, NoiseDist::gaussian, 10.0};
    const PhiEstimate closed = phi_factor(0.5, spec, 1.0);
    CHECK(closed.std_error == 0.0);
    // Direct MC of E[exp(-eps^2 / (2 r^2))]
    Philox rng(17, 0);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double eps = rng.normal(0.0, 10.0);
      const double v = std::exp(-eps * eps / 2.0);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum_sq / n - mean * mean) / n);
    const double mc_phi = c * (0.5 + 0.5 * mean);
    CHECK(std::abs(closed.value - mc_phi) < 3.0 * c * 0.5 * se + 1e-9);
  }
  SUBCASE("large sigma limit collapses the expectation term") {
    const NoiseSpec spec{1.0 - 1e-12, NoiseDist::gaussian, 1e12};
    const PhiEstimate est = phi_factor(1.0 - 1e-12, spec, 1.0);
    CHECK(est.value < 1e-6);
  }
  SUBCASE("monte carlo path stays within the analytic bracket") {
    const NoiseSpec spec{0.4, NoiseDist::uniform, 2.0};
    const PhiEstimate est = phi_factor(0.4, spec, 1.0, 50000, 7);
    CHECK(est.value >= c * 0.6 - 1e-9);
    CHECK(est.value <= c + 1e-9);
    CHECK(est.std_error > 0.0);
  }
  SUBCASE("z_norm must be positive") {
    CHECK_THROWS_AS(phi_factor(0.1, NoiseSpec{0.1, NoiseDist::gaussian, 1.0}, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("direction_preserving_deviation") {
  SUBCASE("nonnegative and finite") {
    const Dataset ds = small_dataset(10, 2, 100, 0.2, 18);
    Philox rng(19, 0);
    Vec z(10);
    for (double& v : z) v = rng.normal();
    CHECK(direction_preserving_deviation(z, ds, ds.noise_spec) >= 0.0);
  }
  SUBCASE("small at clean large-sample baseline") {
    const Dataset ds = generate_dataset(
        20, 5, 10000, 1.0, 2.0, NoiseSpec{0.0, NoiseDist::gaussian, 1.0}, 20);
    CHECK(direction_preserving_deviation(ds.theta_star, ds, ds.noise_spec) <=
          0.05);
  }
  SUBCASE("zero direction rejected") {
    const Dataset ds = small_dataset(5, 2, 20, 0.1, 21);
    CHECK_THROWS_AS(direction_preserving_deviation(Vec(5, 0.0), ds, ds.noise_spec),
                    std::invalid_argument);
  }
}

TEST_CASE("smoothed loss and gradient") {
  const Dataset ds = small_dataset(8, 3, 30, 0.2, 22);
  SUBCASE("zero residuals give loss sqrt(eps) and zero gradient") {
    const Dataset clean = small_dataset(8, 3, 30, 0.0, 23);
    const LayerStack star = balanced_true_solution(clean.theta_star, 2);
    CHECK(smoothed_loss(star, clean, 1e-7) ==
          doctest::Approx(std::sqrt(1e-7)).epsilon(1e-9));
    const StackGradient g = smoothed_gradient(star, clean, 1e-7);
    for (const Vec& block : g.blocks)
      for (double v : block) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("upper bounds the l1 loss and decreases monotonically in eps") {
    const LayerStack stack = random_positive_stack(2, 8, 24);
    const double base = l1_loss(stack, ds);
    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {1e-3, 1e-5, 1e-7, 1e-9}) {
      const double s = smoothed_loss(stack, ds, eps);
      CHECK(s >= base);
      CHECK(s <= prev);
      prev = s;
    }
    CHECK(prev == doctest::Approx(base).epsilon(1e-6));
  }
  SUBCASE("gradient matches finite differences") {
    Philox rng(25, 0);
    const double eps = 1e-7;
    const double h = 1e-7;
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 10 && seed < 100; ++seed) {
      const LayerStack stack = random_positive_stack(2, 8, 2000 + seed);
      if (min_abs_residual(stack, ds) < 0.01) continue;
      const auto dir = random_direction(2, 8, rng);
      const double fd = fd_directional(
          [&](const LayerStack& s) { return smoothed_loss(s, ds, eps); },
          stack, dir, h);
      const double ip = inner(smoothed_gradient(stack, ds, eps), dir);
      CHECK(fd == doctest::Approx(ip).epsilon(1e-6));
      ++checked;
    }
    CHECK(checked == 10);
  }
  SUBCASE("eps must be positive") {
    const LayerStack stack = random_positive_stack(2, 8, 26);
    CHECK_THROWS_AS(smoothed_loss(stack, ds, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(smoothed_gradient(stack, ds, -1.0), std::invalid_argument);
  }
}
