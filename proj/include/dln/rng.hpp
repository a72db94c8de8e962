#pragma once

#include <array>
#include <cstdint>

namespace dln {

/// Counter-based Philox4x32-10 generator. A (seed, stream) pair selects an
/// independent random stream; draws are reproducible across platforms and
/// independent of how many other streams were consumed.
class Philox {
 public:
  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (implementation-defined std
  /// distributions are avoided so streams stay bit-stable).
  double normal();
  double normal(double mean, double stddev);

  /// Unbiased integer in [0, n), n >= 1.
  std::int64_t uniform_int(std::int64_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

/// Stream ids used when deriving per-purpose generators from one seed.
/// Keeping them fixed means e.g. the design matrix does not change when the
/// noise model does.
namespace streams {
inline constexpr std::uint64_t kGroundTruth = 1;
inline constexpr std::uint64_t kDesign = 2;
inline constexpr std::uint64_t kNoiseSupport = 3;
inline constexpr std::uint64_t kNoiseValues = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kProbe = 6;
inline constexpr std::uint64_t kPopulation = 7;
inline constexpr std::uint64_t kMonteCarlo = 8;
}  // namespace streams

}  // namespace dln
