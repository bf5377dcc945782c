#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vitforge {

/// Seeded random stream. The raw engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; every conversion to floats or indices
/// is done here rather than through <random> distributions, whose algorithms
/// vary between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  /// Normal with the given stddev, redrawn until it lies within two stddevs.
  double truncated_normal(double stddev);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for a named subsystem ("init", "shuffle", "augment", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

/// Child seed for an indexed stream, e.g. one per sample or per fold.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

}  // namespace vitforge
