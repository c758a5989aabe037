#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace metadiv {

// Finalizer from MurmurHash3; bijective on 64-bit values.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

// Derives a decorrelated child seed from (master, stream, index). Every
// random draw in the engine comes from a seed built this way, so a resumed
// run replays the exact same streams without persisting generator state.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index) {
  std::uint64_t h = mix64(master ^ (stream + 0x9e3779b97f4a7c15ULL));
  return mix64(h ^ (index + 0xbf58476d1ce4e5b9ULL));
}

// Stream identifiers for derive_seed. Keep values stable across versions:
// archived runs replay against them.
enum : std::uint64_t {
  kStreamIteration = 1,  // per exploration iteration
  kStreamTraining = 2,   // per hierarchy training round
  kStreamRootInit = 3,   // root VAE initialization
};

// mt19937_64 bit source with hand-rolled float conversions. The standard
// distributions are implementation-defined, which would tie archives to a
// particular libstdc++; these mappings are fixed by this code instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 bits of mantissa.
  double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // Box-Muller, cosine branch only: generator state stays a pure function
  // of the draw count (no cached second variate to persist).
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace metadiv
