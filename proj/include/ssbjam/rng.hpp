#pragma once

// Seeded random streams.
//
// A single root seed is expanded into independent substreams by hashing
// (root, stream tag, index...) through splitmix64. Each substream drives its
// own std::mt19937_64, whose output sequence is fixed by the C++ standard.
// The distribution transforms below are written out by hand because the
// std:: distributions are implementation-defined and would break bitwise
// reproducibility across standard libraries.

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace ssbjam {

enum class Stream : std::uint64_t {
  kNoise = 1,
  kJammer = 2,
  kFiller = 3,
  kShuffle = 4,
  kRow = 5,
  kInit = 6,
  kSplit = 7,
  kPartition = 8,
  kClient = 9,
  kChannel = 10,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of substream `tag` at the given index path under `root`.
constexpr std::uint64_t derive_seed(std::uint64_t root, Stream tag,
                                    std::initializer_list<std::uint64_t> path = {}) noexcept {
  std::uint64_t h = splitmix64(root ^ splitmix64(static_cast<std::uint64_t>(tag)));
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, Stream tag, std::initializer_list<std::uint64_t> path = {})
      : engine_(derive_seed(root, tag, path)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal pair via Box-Muller.
  std::pair<double, double> normal_pair() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

  // Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  std::complex<double> complex_normal(double variance) {
    const auto [a, b] = normal_pair();
    const double s = std::sqrt(variance / 2.0);
    return {s * a, s * b};
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ssbjam
