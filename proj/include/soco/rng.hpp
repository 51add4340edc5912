#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace soco {

// Deterministic RNG with portable derived helpers. std::mt19937_64 produces a
// fixed bit stream for a given seed on every platform; the distribution math
// below is ours, so draws are reproducible bit-for-bit across toolchains
// (std::uniform_real_distribution and friends are implementation-defined and
// are deliberately not used).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, two fresh draws per call so the stream layout stays simple.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Derives an independent stream seed from a master seed and a call-site path
// (e.g. {step, image_index, role}). Mixing is order-sensitive, so distinct
// paths give unrelated streams; this is what makes checkpoint resume exact:
// any step's randomness can be regenerated without replaying prior steps.
inline uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path) {
  uint64_t h = detail::splitmix64(master);
  for (uint64_t p : path) h = detail::splitmix64(h ^ detail::splitmix64(p));
  return h;
}

}  // namespace soco
