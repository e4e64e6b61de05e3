#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace modbal {

/// Deterministic counter-based generator (splitmix64 finalizer over an
/// incrementing 64-bit state). The constants below are the reference
/// splitmix64 ones; identical seeds produce identical streams on every
/// platform, which all experiment drivers rely on.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.28318530717958647692 * u2);
  }

  /// Integer in [0, n). Modulo reduction; the bias is ~n/2^64 and irrelevant
  /// at the sample counts used here, while staying branch-free and portable.
  uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Derive an independent child stream. Consumes one draw from this stream;
  /// the xor constant decorrelates parent and child sequences.
  Rng split() { return Rng(next_u64() ^ 0xD2B74407B1CE6E93ull); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[size_t(next_below(i))]);
    }
  }

 private:
  uint64_t state_;
};

/// Stable way to derive per-purpose seeds from one experiment seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  Rng r(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
  return r.next_u64();
}

}  // namespace modbal
