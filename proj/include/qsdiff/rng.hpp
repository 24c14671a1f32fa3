#pragma once

// Reproducible randomness. Every draw is a pure function of
// (seed, stream, counter) through the SplitMix64 finalizer, so a port in any
// language reproduces the same streams:
//
//   u64(seed, stream, i) = mix(mix(seed ^ mix(stream)) + i * 0x9E3779B97F4A7C15)
//   uniform = (u64 >> 11) * 2^-53
//
// Quasi-random points use the additive R_d (Kronecker) sequence with
// generalized golden-ratio increments, rotated by a seed-derived offset.

#include "qsdiff/core.hpp"

#include <cstdint>

namespace qsdiff {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64_mix(seed ^ splitmix64_mix(stream))) {}

  std::uint64_t bits(std::uint64_t i) const { return splitmix64_mix(key_ + i * 0x9E3779B97F4A7C15ull); }
  double uniform(std::uint64_t i) const { return static_cast<double>(bits(i) >> 11) * 0x1.0p-53; }

  // Sequential convenience over the same counter stream.
  double next() { return uniform(counter_++); }
  double next_normal() {
    // Box-Muller on two consecutive uniforms.
    const double u1 = std::max(next(), 1e-300);
    const double u2 = next();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// R_d low-discrepancy sequence in [0,1)^dim, Cranley-Patterson rotated.
class QuasiRandom {
 public:
  QuasiRandom(int dim, std::uint64_t seed) : dim_(dim), alpha_(dim), offset_(dim) {
    // phi_d is the unique positive root of x^(d+1) = x + 1.
    double phi = 2.0;
    for (int it = 0; it < 64; ++it) phi = std::pow(1.0 + phi, 1.0 / (dim + 1));
    CounterRng rng(seed, 0x5152ull);
    for (int i = 0; i < dim; ++i) {
      alpha_(i) = std::fmod(std::pow(1.0 / phi, i + 1), 1.0);
      offset_(i) = rng.uniform(static_cast<std::uint64_t>(i));
    }
  }

  Vec point(std::uint64_t n) const {
    Vec p(dim_);
    for (int i = 0; i < dim_; ++i) {
      const double v = offset_(i) + static_cast<double>(n + 1) * alpha_(i);
      p(i) = v - std::floor(v);
    }
    return p;
  }

 private:
  int dim_;
  Vec alpha_;
  Vec offset_;
};

}  // namespace qsdiff
