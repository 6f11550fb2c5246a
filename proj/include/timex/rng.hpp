#pragma once

#include <cstdint>
#include <random>

namespace txai {

// Deterministic RNG for data generation. Uses mt19937_64 (bit-exact across
// platforms per the C++ standard) with repo-local uniform/normal transforms
// so generated archives never depend on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0,1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive, rejection-sampled (unbiased).
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller; caches the second variate.
  double normal();
  double normal(double mu, double sigma);

  // Independent child stream; children with distinct ids never collide
  // with each other or the parent.
  Rng fork(uint64_t stream_id) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// SplitMix64 finalizer; used for seed derivation.
uint64_t mix64(uint64_t x);

}  // namespace txai
