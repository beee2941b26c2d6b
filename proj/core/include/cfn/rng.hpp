#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace cfn {

// Seeded generator whose streams are identical across standard libraries:
// only the raw output of mt19937_64 (fully specified by the standard) is
// consumed, never the implementation-defined distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be nonzero.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  bool coin() { return (engine_() >> 63) != 0; }

  // Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; derives independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seed keyed by a name (FNV-1a of the bytes, then mixed).
std::uint64_t mix_seed(std::uint64_t seed, std::string_view name);

}  // namespace cfn
