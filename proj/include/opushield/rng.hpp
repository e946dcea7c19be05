#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace opushield {

/// Seeded generator with distribution code that is fixed here rather than
/// left to the standard library, so a seed reproduces the same draws with any
/// toolchain. Engine is the (fully specified) 64-bit Mersenne Twister.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Standard normal draw (Marsaglia polar method).
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Sub-seed for a named stream, e.g. derive_seed(run_seed, "feedback").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// Sub-seed for an indexed stream (per-sample attack seeds, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace opushield
