#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace avsf {

// Counter-based pseudo-random stream. Every draw is a pure function of
// (key, counter), so independent streams never interfere and a stream can be
// forked by name without consuming state from its parent. All stochastic code
// in the library takes an Rng by reference; there is no global RNG.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  // Child stream derived from this stream's key and a label. Deterministic:
  // fork("a") is the same stream no matter how many draws happened before.
  Rng fork(std::string_view name) const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    Rng child;
    child.key_ = mix(key_ ^ mix(h));
    return child;
  }

  Rng fork(std::string_view name, uint64_t index) const {
    Rng child = fork(name);
    child.key_ = mix(child.key_ ^ mix(index + 0x9e3779b97f4a7c15ULL));
    return child;
  }

  uint64_t next_u64() { return mix(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static uint64_t mix(uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace avsf
