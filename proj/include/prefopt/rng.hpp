#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefopt {

// Deterministic RNG built on mt19937_64, whose output sequence is fixed by
// the standard. Uniform/normal/shuffle are implemented on top of the raw
// 64-bit stream instead of std <random> distributions, which are
// implementation-defined and would break cross-platform reproducibility.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n) without modulo bias.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("below(0) is undefined");
    const uint64_t limit = (UINT64_MAX / n) * n;
    for (;;) {
      const uint64_t v = next_u64();
      if (v < limit) return v % n;
    }
  }

  // Fisher-Yates shuffle driven by below(), so the permutation depends only
  // on the seed, not on library internals.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// FNV-1a 64-bit content hash. Used for manifest integrity checks; stable
// across platforms, unlike std::hash.
inline uint64_t fnv1a64(const void* bytes, size_t len) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace prefopt
