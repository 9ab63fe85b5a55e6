#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace clusterdet {

// splitmix64 step; used to whiten and combine seed material.  Reference:
// https://prng.di.unimi.it/splitmix64.c
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d49bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed, a stream index, and a
// small fixed tag separating unrelated uses (trials, realizations, noise...).
// Trial t always maps to the same seed no matter how trials are chunked over
// threads, which keeps Monte-Carlo results independent of the thread count.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index,
                                 std::uint64_t tag = 0) {
  std::uint64_t h = splitmix64(base ^ 0x6a09e667f3bcc908ULL);
  h = splitmix64(h ^ splitmix64(index));
  h = splitmix64(h ^ splitmix64(tag ^ 0xbb67ae8584caa73bULL));
  return h;
}

// Thin wrapper around a 64-bit Mersenne twister with the draw primitives the
// simulator needs.  One instance per logical stream; never shared.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in (0, 1]; the open lower end protects log() below.
  double uniform() {
    // mt19937_64 yields in [0, 2^64-1]; shift to (0,1] by adding one.
    return (static_cast<double>(gen_()) + 1.0) * 0x1.0p-64;
  }

  // Standard circularly-symmetric complex normal: E z = 0, E|z|^2 = 1.
  // Box-Muller in polar form: radius^2 ~ Exp(1), phase uniform.
  std::complex<double> standard_cn() {
    const double r = std::sqrt(-std::log(uniform()));
    const double phi = 6.283185307179586476925286766559 * uniform();
    return {r * std::cos(phi), r * std::sin(phi)};
  }

  // Real standard normal (one Box-Muller component).
  double standard_normal() {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 6.283185307179586476925286766559 * uniform();
    return r * std::cos(phi);
  }

  long poisson(double mean) {
    std::poisson_distribution<long> d(mean);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace clusterdet
