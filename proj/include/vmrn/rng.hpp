#pragma once

#include <cstdint>
#include <random>

namespace vmrn {

/// Deterministic random source. All distributions are derived from raw
/// mt19937_64 draws by hand so that sequences are identical across standard
/// library implementations, and the number of engine calls is tracked so a
/// resumed run can fast-forward to the exact stream position.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t draws() const { return draws_; }

  uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is negligible for the small n
  /// used here and keeps the draw count at exactly one per call.
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; always consumes two draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Re-creates the stream of `seed` advanced by `draws` engine calls.
  static Rng resumed(uint64_t seed, uint64_t draws) {
    Rng r(seed);
    r.engine_.discard(draws);
    r.draws_ = draws;
    return r;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_ = 0;
  uint64_t draws_ = 0;
};

/// Mixes (seed, index) into an independent stream seed (splitmix64 step).
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace vmrn
