#pragma once

// Reference computations used only by the tests. They follow a different
// code path from the library on purpose: bit-register LFSRs instead of array
// recursions, direct O(N^2) DFTs instead of the FFT, finite differences
// instead of back-propagation.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

namespace oracle {

// Fibonacci LFSR on a 7-bit register. `state` holds x(i) in bit 0 through
// x(i+6) in bit 6; feedback x(i+7) = x(i+tap) xor x(i).
inline std::array<int, 127> lfsr_bits(unsigned state, int tap) {
  std::array<int, 127> out{};
  for (int i = 0; i < 127; ++i) {
    out[i] = state & 1u;
    const unsigned fb = ((state >> tap) ^ state) & 1u;
    state = (state >> 1) | (fb << 6);
  }
  return out;
}

// Register value for initial bits written most-significant first as
// x(6) x(5) ... x(0).
inline unsigned register_from_msb_first(const char* bits) {
  unsigned s = 0;
  for (int k = 0; k < 7; ++k) s |= static_cast<unsigned>(bits[k] - '0') << (6 - k);
  return s;
}

inline std::array<int, 127> pss(int n2) {
  const auto x = lfsr_bits(register_from_msb_first("1110110"), 4);
  std::array<int, 127> d{};
  for (int n = 0; n < 127; ++n) d[n] = 1 - 2 * x[(n + 43 * n2) % 127];
  return d;
}

inline std::array<int, 127> sss(int n1, int n2) {
  const auto x0 = lfsr_bits(1u, 4);
  const auto x1 = lfsr_bits(1u, 1);
  const int m0 = 15 * (n1 / 112) + 5 * n2;
  const int m1 = n1 % 112;
  std::array<int, 127> d{};
  for (int n = 0; n < 127; ++n) d[n] = (1 - 2 * x0[(n + m0) % 127]) * (1 - 2 * x1[(n + m1) % 127]);
  return d;
}

inline std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{};
    for (std::size_t m = 0; m < n; ++m) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
      acc += x[m] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// Per-class precision/recall/F1 by counting sample by sample. Undefined
// ratios are 0.
struct ClassScores {
  double precision, recall, f1;
};

inline std::array<ClassScores, 2> per_class_scores(const std::vector<std::uint8_t>& pred,
                                                   const std::vector<std::uint8_t>& truth, double* accuracy) {
  std::array<ClassScores, 2> out{};
  std::size_t correct = 0;
  for (int c = 0; c < 2; ++c) {
    std::size_t hit = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c) ++predicted;
      if (truth[i] == c) ++actual;
      if (pred[i] == c && truth[i] == c) ++hit;
    }
    const double p = predicted ? double(hit) / double(predicted) : 0.0;
    const double r = actual ? double(hit) / double(actual) : 0.0;
    out[c] = {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
  }
  for (std::size_t i = 0; i < truth.size(); ++i) correct += pred[i] == truth[i];
  *accuracy = double(correct) / double(truth.size());
  return out;
}

}  // namespace oracle
