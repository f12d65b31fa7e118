#ifndef ICEPOP_RNG_HPP_
#define ICEPOP_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace icepop {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Order-sensitive hash of a short key tuple. Stable across platforms and runs.
inline std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Maps 64 random bits to a double in the open interval (0, 1).
inline double bits_to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Inverse CDF of Student's t with two degrees of freedom.
inline double student_t2_quantile(double u) {
  return (2.0 * u - 1.0) / std::sqrt(2.0 * u * (1.0 - u));
}

// A seeded random stream. mt19937_64 output is fixed by the standard, and the
// uniform/normal transforms below avoid std:: distributions whose algorithms
// are implementation-defined, so draws replay bit-identically everywhere.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}
  explicit RandomStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_bits() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Uses rejection so every value is equally likely.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    const double u1 = bits_to_open_unit(engine_());
    const double u2 = bits_to_open_unit(engine_());
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool operator==(const RandomStream&) const = default;

 private:
  std::mt19937_64 engine_;
};

}  // namespace icepop

#endif  // ICEPOP_RNG_HPP_
