#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "simpgan/common.hpp"

namespace simpgan {

/// Deterministic splittable PRNG built on the splitmix64 step function.
///
/// Every random decision in the project flows from one 64-bit seed through
/// named streams: `root.split("init").split("conv1", 0)` always yields the
/// same sequence regardless of what other streams were consumed, which keeps
/// runs reproducible even when work is reordered or parallelized.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * uniform();
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream; does not advance this generator.
  Rng split(std::string_view label) const {
    std::uint64_t h = fnv1a64(label);
    return Rng(mix(state_ ^ h));
  }

  Rng split(std::string_view label, std::uint64_t index) const {
    std::uint64_t h = fnv1a64(label);
    h = fnv1a64(&index, sizeof(index), h);
    return Rng(mix(state_ ^ h));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace simpgan
