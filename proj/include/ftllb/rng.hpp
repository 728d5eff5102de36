#pragma once

#include <cstdint>
#include <random>

namespace ftllb {

/// Mixes a master seed with stream labels into an independent 64-bit seed
/// (SplitMix64 finalizer over each word).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Seeded random stream. Conversions to reals and bounded integers are done
/// here rather than through <random> distributions so that streams are
/// identical across standard library implementations.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  bool coin() { return (next() >> 63) != 0; }

  /// Uniform in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  Rng split(std::uint64_t label) { return Rng(derive_seed(next(), label)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ftllb
