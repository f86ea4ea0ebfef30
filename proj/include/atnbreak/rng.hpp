#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace atnbreak {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

// mt19937_64 with hand-written transforms, so draws are identical across
// standard libraries (std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  // Normal(0, stddev) resampled until |x| <= 2 stddev.
  double truncated_normal(double stddev);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace atnbreak
