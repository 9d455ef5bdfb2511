#pragma once

#include <cstdint>
#include <string_view>

namespace cgm {

/// xoshiro256++ (Blackman & Vigna), state seeded through splitmix64.
///
/// Every random draw in the engine comes from one of these generators, so a
/// model or a Monte-Carlo estimate is reproduced by any implementation of the
/// same two algorithms. Independent streams for different purposes are
/// derived with `Rng::stream(seed, purpose, index)` rather than by sharing a
/// generator, which keeps results independent of evaluation order.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  /// Stream keyed by (seed, purpose label, index).
  static Rng stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open0();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Box-Muller transform (one value per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

/// FNV-1a hash of a label, used to key purpose streams.
std::uint64_t hash_label(std::string_view label);

}  // namespace cgm
