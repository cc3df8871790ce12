#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hilmares {

// Deterministic random stream. The uniform/normal transforms are spelled out
// here instead of using <random> distributions so that a given seed produces
// the same sequence on every standard library, which the seeded-repeat tests
// and golden logs rely on.
class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) : gen_(seed) {}

  void seed(uint64_t s) { gen_.seed(s); }

  // Uniform in [0, 1) with 53 random bits.
  double canonical() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }

  // Uniform integer in [0, n).
  uint64_t randint(uint64_t n) {
    // modulo bias is < 2^-40 for the buffer/episode sizes used here
    return gen_() % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = canonical();
    } while (u1 <= 0.0);
    const double u2 = canonical();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  bool bernoulli(double p) { return canonical() < p; }

  // Derive an independent child stream (splitmix64 over seed and stream id).
  static uint64_t derive_seed(uint64_t seed, uint64_t stream_id) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace hilmares
