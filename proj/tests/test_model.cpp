#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dln/model.hpp"
#include "dln/rng.hpp"
#include "oracles.hpp"

using namespace dln;

namespace {

LayerStack random_stack(int n, int d, std::uint64_t seed) {
  Philox rng(seed, 0);
  LayerStack stack;
  stack.layers.assign(n, Vec(d));
  for (auto& layer : stack.layers)
    for (double& v : layer) v = rng.uniform(-2.0, 2.0);
  return stack;
}

}  // namespace

TEST_CASE("hadamard_product basics") {
  CHECK(hadamard_product({{{2.0, 3.0}}}) == Vec{2.0, 3.0});
  CHECK(hadamard_product({{{1.0, 2.0}, {3.0, 4.0}}}) == Vec{3.0, 8.0});

  const double root = std::cbrt(8.0);
  const LayerStack cube{{{root}, {root}, {root}}};
  CHECK(hadamard_product(cube)[0] == doctest::Approx(8.0).epsilon(1e-12));

  CHECK_THROWS_AS(hadamard_product(LayerStack{}), std::invalid_argument);
  CHECK_THROWS_AS(hadamard_product({{{1.0}, {1.0, 2.0}}}), std::invalid_argument);
}

TEST_CASE("hadamard_product is invariant under layer permutation") {
  LayerStack stack = random_stack(4, 9, 21);
  const Vec base = hadamard_product(stack);
  std::reverse(stack.layers.begin(), stack.layers.end());
  const Vec flipped = hadamard_product(stack);
  for (std::size_t l = 0; l < base.size(); ++l)
    CHECK(flipped[l] == doctest::Approx(base[l]).epsilon(1e-12));
}

TEST_CASE("predict") {
  CHECK(predict({{{1.0, 1.0}, {1.0, 1.0}}}, std::vector<double>{1.0, -1.0}) == 0.0);
  CHECK(predict({{{2.0, 0.0}}}, std::vector<double>{3.0, 5.0}) == 6.0);

  const LayerStack stack = random_stack(3, 12, 5);
  Philox rng(99, 0);
  Vec x(12);
  for (double& v : x) v = rng.normal();
  CHECK(predict(stack, x) ==
        doctest::Approx(oracles::scalar_loop_predict(stack, x)).epsilon(1e-12));

  CHECK_THROWS_AS(predict(stack, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("balanced_init") {
  const LayerStack a = balanced_init(3, 2, 0.01);
  for (const Vec& w : a.layers)
    for (double v : w) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));

  const LayerStack b = balanced_init(2, 3, 0.001);
  for (const Vec& w : b.layers)
    for (double v : w) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));

  const LayerStack c = balanced_init(5, 4, 3.7e-5);
  for (double v : hadamard_product(c))
    CHECK(v == doctest::Approx(3.7e-5).epsilon(1e-12));

  CHECK_THROWS_AS(balanced_init(3, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(balanced_init(3, 2, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(balanced_init(0, 2, 1.0), std::invalid_argument);
}

TEST_CASE("balanced_true_solution reproduces theta") {
  const Vec theta{4.0, 0.0, 9.0};
  for (int n : {1, 2, 3, 5}) {
    const LayerStack stack = balanced_true_solution(theta, n);
    const Vec prod = hadamard_product(stack);
    for (std::size_t l = 0; l < theta.size(); ++l)
      CHECK(prod[l] == doctest::Approx(theta[l]).epsilon(1e-12));
    if (n >= 2) CHECK(balancedness_gap(stack) == 0.0);
  }
}

TEST_CASE("balancedness_gap") {
  CHECK(balancedness_gap({{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}}) == 0.0);
  CHECK(balancedness_gap({{{1.0, 1.0}, {1.0, 2.0}}}) == 1.0);
  CHECK(balancedness_gap(balanced_init(4, 3, 0.5)) == 0.0);
  CHECK_THROWS_AS(balancedness_gap({{{1.0, 2.0}}}), std::invalid_argument);
}

TEST_CASE("signal_residual_split") {
  const LayerStack stack{{{1.0, 2.0, 3.0, 4.0}}};
  SUBCASE("plain split") {
    const auto split = signal_residual_split(stack, {0, 1});
    CHECK(split.signal == Vec{1.0, 2.0});
    CHECK(split.residual == Vec{3.0, 4.0});
  }
  SUBCASE("empty support") {
    const auto split = signal_residual_split(stack, {});
    CHECK(split.signal.empty());
    CHECK(split.residual == Vec{1.0, 2.0, 3.0, 4.0});
  }
  SUBCASE("out of range") {
    CHECK_THROWS_AS(signal_residual_split(stack, {4}), std::out_of_range);
    CHECK_THROWS_AS(signal_residual_split(stack, {-1}), std::out_of_range);
  }
  SUBCASE("pythagorean identity on random stacks") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const LayerStack s = random_stack(2, 10, seed);
      const auto split = signal_residual_split(s, {0, 3, 7});
      double sig = 0.0, res = 0.0, whole = 0.0;
      for (double v : split.signal) sig += v * v;
      for (double v : split.residual) res += v * v;
      for (double v : hadamard_product(s)) whole += v * v;
      CHECK(sig + res == doctest::Approx(whole).epsilon(1e-12));
      CHECK(split.signal.size() + split.residual.size() == 10);
    }
  }
}

TEST_CASE("generalization_error") {
  const Vec theta{4.0, 0.0, 2.25};
  CHECK(generalization_error(balanced_true_solution(theta, 2), theta) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(generalization_error({{{1.0, 0.0}}}, Vec{0.0, 0.0}) == 1.0);

  const LayerStack stack = random_stack(3, 8, 77);
  Vec target(8);
  Philox rng(78, 0);
  for (double& v : target) v = rng.uniform(0.0, 2.0);
  CHECK(generalization_error(stack, target) ==
        doctest::Approx(oracles::scalar_loop_gen_error(stack, target))
            .epsilon(1e-12));

  CHECK_THROWS_AS(generalization_error(stack, Vec{1.0}), std::invalid_argument);
}

TEST_CASE("rescaling layer pairs by c and 1/c is stable") {
  const LayerStack stack = random_stack(3, 7, 13);
  const Vec base = hadamard_product(stack);
  const double base_err = generalization_error(stack, Vec(7, 0.5));

  LayerStack scaled = stack;
  const double c = 1.7;
  for (double& v : scaled.layers[0]) v *= c;
  for (double& v : scaled.layers[2]) v /= c;
  const Vec prod = hadamard_product(scaled);
  for (std::size_t l = 0; l < base.size(); ++l)
    CHECK(prod[l] == doctest::Approx(base[l]).epsilon(1e-12));
  CHECK(generalization_error(scaled, Vec(7, 0.5)) ==
        doctest::Approx(base_err).epsilon(1e-12));
}
