#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace msrn {

// Seeded PRNG with hand-rolled distributions so that streams are
// bit-reproducible across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Independent stream derived from (base seed, purpose tag, indices).
  static Rng derive(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = base;
    for (char c : tag) h = mix(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
    h = mix(h ^ a);
    h = mix(h ^ b);
    return Rng(h);
  }

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 bits of mantissa
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via polar Box-Muller, cached spare discarded for
  // stream simplicity
  double normal() {
    for (;;) {
      double u = uniform(-1.0, 1.0);
      double v = uniform(-1.0, 1.0);
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // uniform integer in [0, n), rejection sampled
  int64_t below(int64_t n) {
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    for (;;) {
      uint64_t x = gen_();
      if (x < limit) return static_cast<int64_t>(x % un);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates, deterministic given the stream
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

 private:
  static uint64_t mix(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace msrn
