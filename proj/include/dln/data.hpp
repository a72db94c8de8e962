#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dln/model.hpp"
#include "dln/rng.hpp"

namespace dln {

enum class NoiseDist { gaussian, uniform, constant };

/// Zero-mean gross-corruption model: a fraction p of responses receive a
/// draw from `dist`, the rest are exact.
///   gaussian: N(0, param^2)
///   uniform:  Uniform(-param, param)
///   constant: ±param with equal probability
struct NoiseSpec {
  double corruption_prob = 0.0;
  NoiseDist dist = NoiseDist::gaussian;
  double param = 1.0;

  /// Documented anti-concentration constants: P(|zeta| >= t0()) >= p0().
  double t0() const;
  double p0() const;

  double sample(Philox& rng) const;
  void validate() const;
};

std::string to_string(NoiseDist dist);
NoiseDist noise_dist_from_string(const std::string& name);

struct Dataset {
  int m = 0;
  int d = 0;
  std::vector<double> design;  // m x d, row-major
  Vec responses;               // y_i = <theta_star, x_i> + noise_i
  Vec theta_star;
  Vec noise;
  std::vector<int> noise_support;  // sorted, |S| = floor(p*m)
  std::uint64_t seed = 0;
  NoiseSpec noise_spec;

  std::span<const double> row(int i) const {
    return {design.data() + static_cast<std::size_t>(i) * d,
            static_cast<std::size_t>(d)};
  }
  std::vector<int> support() const;  // nonzero coordinates of theta_star
};

/// k nonzeros placed uniformly at random, values uniform in [theta_min, theta_max].
Vec generate_ground_truth(int d, int k, double theta_min, double theta_max,
                          Philox& rng);

/// max/min over nonzero entries.
double condition_number(const Vec& theta_star);

/// m x d i.i.d. standard normal entries, row-major.
std::vector<double> generate_design(int m, int d, Philox& rng);

/// Support of size floor(p*m) drawn uniformly without replacement;
/// off-support entries are exactly zero.
std::pair<Vec, std::vector<int>> generate_noise(int m, const NoiseSpec& spec,
                                                Philox& support_rng,
                                                Philox& value_rng);

Dataset generate_dataset(int d, int k, int m, double theta_min,
                         double theta_max, const NoiseSpec& spec,
                         std::uint64_t seed);

/// CSV with header rows for theta_star / noise / support followed by one
/// "x..., y" row per sample; JSON sidecar carries the seed and NoiseSpec
/// (the seed round-trip is bit-exact).
void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path);
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& json_path);

}  // namespace dln
