#pragma once

#include <cstdint>
#include <limits>

namespace dsem {

/// Which part of an iteration a random stream belongs to. Streams for
/// distinct kinds never overlap even when the remaining key fields agree.
enum class SiteKind : std::uint64_t {
  initialization = 1,
  ffbs = 2,
  augmentation = 3,
  nuts = 4,
  simulation = 5,
  test = 6,
};

/// Key of a counter-based stream. Every random draw in a fit is a function of
/// the key alone, so results do not depend on scheduling or thread count.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t chain = 0;
  std::uint64_t iteration = 0;
  SiteKind kind = SiteKind::test;
  std::uint64_t participant = 0;
  std::uint64_t timepoint = 0;
  std::uint64_t indicator = 0;
};

/// xoshiro256** seeded from a SplitMix64 hash of a StreamKey. Satisfies
/// UniformRandomBitGenerator so it can drive <random> distributions too.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed = 0);
  explicit RandomStream(const StreamKey& key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Exponential with the given rate.
  double exponential(double rate = 1.0);
  /// Gamma with the given shape and unit rate.
  double gamma(double shape);
  double inverse_gaussian(double mu, double lambda);

 private:
  void seed_from(std::uint64_t s);

  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t hash_key(const StreamKey& key);

}  // namespace dsem
