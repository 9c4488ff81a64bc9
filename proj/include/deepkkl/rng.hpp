#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dkkl {

// Seedable generator with implementation-independent output. The standard
// distributions are implementation-defined, so uniform and Gaussian sampling
// are done by hand on top of mt19937_64 (whose output sequence is fixed).
// Gaussians use the Box-Muller transform, repo-wide.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

// Derives a child seed from a root seed and a purpose label ("init",
// "shuffle", "noise", ...) plus an optional index, so every consumer of
// randomness gets its own stream.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

}  // namespace dkkl
