#pragma once

#include <cstdint>
#include <random>

#include "gansde/common.hpp"

namespace gansde {

namespace detail {
// SplitMix64 finalizer; mixes (seed, counter) into an independent 64-bit seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Deterministic random stream. Normal variates come from an explicit
// Box-Muller on 53-bit uniforms so that identical seeds give identical draws
// regardless of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() {
    // 53-bit mantissa in [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform over {0, ..., n-1}
  long uniform_index(long n) {
    require(n >= 1, "uniform_index: n must be >= 1");
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<long>(x % un);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vector normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Counter-based stream derivation: replica k of a run seeded with `seed`
// owns derive_stream(seed, k). Streams are disjoint for practical purposes
// and independent of the thread that happens to execute the replica.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index) {
  return Rng(detail::splitmix64(seed ^ detail::splitmix64(index)));
}

// Two-level derivation for nested structure (e.g. run -> grid point -> replica).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
  return detail::splitmix64(seed ^ detail::splitmix64(salt * 0x9e3779b97f4a7c15ULL + index));
}

}  // namespace gansde
