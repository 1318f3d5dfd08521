#pragma once

// Keyed, forkable random streams. Every randomized routine in the library
// takes an RngStream and derives named child streams for its subparts, so a
// run is reproducible from a single root seed and insensitive to how sibling
// computations are ordered or threaded.
//
// Engine: xoshiro256++ seeded through splitmix64 (reference algorithms by
// Blackman & Vigna). Distributions are implemented here rather than taken
// from <random> because the standard leaves distribution sequences
// implementation-defined and assignment vectors must replay exactly.
// Integer output is platform-exact; normal() goes through libm (log/cos/sqrt)
// and is exact only per platform.

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace fsm {

namespace detail {

// splitmix64 finalizer; also used as the generic 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class RngStream {
 public:
  static RngStream from_seed(std::uint64_t seed) {
    return RngStream(detail::mix64(seed));
  }

  // Stateless derivation: the child key depends only on this stream's key and
  // (tag, index), never on how much the parent has generated.
  RngStream child(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = key_;
    h = detail::mix64(h ^ detail::fnv1a64(tag));
    h = detail::mix64(h ^ index);
    return RngStream(h);
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    const std::uint64_t result =
        detail::rotl64(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl64(s_[3], 45);
    return result;
  }

  // Uniform on [0,1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
    const std::uint64_t threshold = (-n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, cosine branch only: exactly two uniforms per call, no cached
  // second variate to keep replay independent of call grouping.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0,1], keeps log finite
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double chisq1() {
    const double z = normal();
    return z * z;
  }

  // Fisher-Yates; all n! orders equally likely.
  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p.begin(), p.end());
    return p;
  }

 private:
  explicit RngStream(std::uint64_t key) : key_(key) {
    std::uint64_t sm = key_;
    auto next_seed = [&sm] {
      sm += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = sm;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    for (auto& w : s_) w = next_seed();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // xoshiro forbids all-zero
  }

  std::uint64_t key_;
  std::array<std::uint64_t, 4> s_;
};

}  // namespace fsm
