#pragma once

#include <cmath>
#include <cstdint>

namespace gradfaith {

// SplitMix64: 64-bit state advanced by the golden-ratio increment, output
// mixed by two xor-multiply rounds. Every stochastic choice in the library
// (weight init, lesion placement, shuffles, noise) draws from this generator
// so runs are reproducible from a single integer seed.
//
// fork(stream) derives an independent child generator from (state, stream)
// without advancing the parent, which is how per-sample and per-epoch
// streams stay insensitive to each other's consumption.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Inclusive integer range; hi - lo is assumed small (layer sizes, radii).
  int uniform_int(int lo, int hi) {
    int span = hi - lo + 1;
    int v = lo + static_cast<int>(next_double() * span);
    return v > hi ? hi : v;
  }

  // Standard normal via Box-Muller; consumes exactly two draws per value.
  double gaussian() {
    double u1 = next_double();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  Rng fork(std::uint64_t stream) const {
    return Rng(mix(state_ + 0x9E3779B97F4A7C15ull * (stream + 1)));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace gradfaith
