#pragma once

// 5G NR synchronization signal block: PSS/SSS sequence generation, SSB
// resource grid assembly, and OFDM modulation/demodulation.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ssbjam/error.hpp"
#include "ssbjam/rng.hpp"

namespace ssbjam {

using Complex = std::complex<double>;

inline constexpr int kSequenceLength = 127;
inline constexpr int kSsbSymbols = 4;
inline constexpr int kSsbSubcarriers = 240;
inline constexpr int kSyncFirstSubcarrier = 56;
inline constexpr int kSyncLastSubcarrier = 182;
inline constexpr int kMaxGroupId = 335;
inline constexpr int kMaxSectorId = 2;

class CellIdentity {
 public:
  static CellIdentity compose(int n1, int n2) {
    if (n1 < 0 || n1 > kMaxGroupId) {
      throw DomainError("n1 (cell identity group) out of range [0, 335]: " + std::to_string(n1));
    }
    if (n2 < 0 || n2 > kMaxSectorId) {
      throw DomainError("n2 (sector identity) out of range [0, 2]: " + std::to_string(n2));
    }
    return CellIdentity(n1, n2);
  }

  static CellIdentity from_cell_id(int cell_id) {
    if (cell_id < 0 || cell_id > 3 * kMaxGroupId + kMaxSectorId) {
      throw DomainError("cell_id out of range [0, 1007]: " + std::to_string(cell_id));
    }
    return CellIdentity(cell_id / 3, cell_id % 3);
  }

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  int cell_id() const { return 3 * n1_ + n2_; }

  friend bool operator==(const CellIdentity&, const CellIdentity&) = default;

 private:
  CellIdentity(int n1, int n2) : n1_(n1), n2_(n2) {}
  int n1_;
  int n2_;
};

inline CellIdentity cell_id_compose(int n1, int n2) { return CellIdentity::compose(n1, n2); }

// Length-127 sequence over {+1, -1}.
class BpskSequence {
 public:
  using Storage = std::array<std::int8_t, kSequenceLength>;

  explicit BpskSequence(const Storage& values) : values_(values) {
    for (auto v : values_) {
      if (v != 1 && v != -1) throw DomainError("BPSK sequence entry must be +1 or -1");
    }
  }

  int operator[](std::size_t i) const { return values_[i]; }
  static constexpr std::size_t size() { return kSequenceLength; }
  const Storage& values() const { return values_; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  friend bool operator==(const BpskSequence&, const BpskSequence&) = default;

 private:
  Storage values_;
};

namespace detail {

using Bits = std::array<std::uint8_t, kSequenceLength>;

// Binary LFSR x(i+7) = (x(i+tap) + x(i)) mod 2 from initial state x(0..6).
inline Bits lfsr127(int tap, const std::array<std::uint8_t, 7>& init) {
  Bits x{};
  std::copy(init.begin(), init.end(), x.begin());
  for (int i = 0; i + 7 < kSequenceLength; ++i) {
    x[i + 7] = static_cast<std::uint8_t>((x[i + tap] + x[i]) % 2);
  }
  return x;
}

// PSS: x(i+7) = x(i+4) + x(i), [x(6) .. x(0)] = 1110110.
inline const Bits& pss_bits() {
  static const Bits bits = lfsr127(4, {0, 1, 1, 0, 1, 1, 1});
  return bits;
}

inline const Bits& sss_bits0() {
  static const Bits bits = lfsr127(4, {1, 0, 0, 0, 0, 0, 0});
  return bits;
}

inline const Bits& sss_bits1() {
  static const Bits bits = lfsr127(1, {1, 0, 0, 0, 0, 0, 0});
  return bits;
}

inline std::int8_t bpsk(std::uint8_t bit) { return static_cast<std::int8_t>(1 - 2 * bit); }

}  // namespace detail

inline BpskSequence pss_sequence(int n2) {
  if (n2 < 0 || n2 > kMaxSectorId) {
    throw DomainError("n2 (sector identity) out of range [0, 2]: " + std::to_string(n2));
  }
  const auto& x = detail::pss_bits();
  BpskSequence::Storage d{};
  for (int n = 0; n < kSequenceLength; ++n) d[n] = detail::bpsk(x[(n + 43 * n2) % kSequenceLength]);
  return BpskSequence(d);
}

struct SssShifts {
  int r0;
  int r1;
};

inline SssShifts sss_shifts(int n1, int n2) {
  const auto id = CellIdentity::compose(n1, n2);
  return {15 * (id.n1() / 112) + 5 * id.n2(), id.n1() % 112};
}

inline BpskSequence sss_sequence(int n1, int n2) {
  const auto [r0, r1] = sss_shifts(n1, n2);
  const auto& x0 = detail::sss_bits0();
  const auto& x1 = detail::sss_bits1();
  BpskSequence::Storage d{};
  for (int n = 0; n < kSequenceLength; ++n) {
    d[n] = static_cast<std::int8_t>(detail::bpsk(x0[(n + r0) % kSequenceLength]) *
                                    detail::bpsk(x1[(n + r1) % kSequenceLength]));
  }
  return BpskSequence(d);
}

// 4 OFDM symbols x 240 subcarriers, symbol-major.
class ResourceGrid {
 public:
  ResourceGrid() : cells_(kSsbSymbols * kSsbSubcarriers) {}

  Complex& at(int symbol, int subcarrier) { return cells_[index(symbol, subcarrier)]; }
  const Complex& at(int symbol, int subcarrier) const { return cells_[index(symbol, subcarrier)]; }

  std::span<Complex> symbol(int l) {
    return std::span(cells_).subspan(static_cast<std::size_t>(l) * kSsbSubcarriers, kSsbSubcarriers);
  }
  std::span<const Complex> symbol(int l) const {
    return std::span(cells_).subspan(static_cast<std::size_t>(l) * kSsbSubcarriers, kSsbSubcarriers);
  }

  std::span<const Complex> cells() const { return cells_; }
  std::span<Complex> cells() { return cells_; }

  double energy() const {
    double e = 0.0;
    for (const auto& c : cells_) e += std::norm(c);
    return e;
  }

  friend bool operator==(const ResourceGrid&, const ResourceGrid&) = default;

 private:
  static std::size_t index(int symbol, int subcarrier) {
    return static_cast<std::size_t>(symbol) * kSsbSubcarriers + static_cast<std::size_t>(subcarrier);
  }
  std::vector<Complex> cells_;
};

struct OfdmConfig {
  int nfft = 256;
  int cp_len = 18;
  // Grid subcarrier q lands on FFT bin (q + first_subcarrier) mod nfft.
  int first_subcarrier = -kSsbSubcarriers / 2;
  double sample_rate_hz = 15.36e6;

  void validate() const {
    if (nfft < 256 || !std::has_single_bit(static_cast<unsigned>(nfft))) {
      throw ConfigError("nfft must be a power of two >= 256, got " + std::to_string(nfft));
    }
    if (cp_len < 0 || cp_len >= nfft) {
      throw ConfigError("cp_len must satisfy 0 <= cp_len < nfft, got " + std::to_string(cp_len));
    }
    if (nfft < kSsbSubcarriers) throw ConfigError("nfft smaller than the SSB width");
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
      throw ConfigError("sample_rate_hz must be positive and finite");
    }
  }

  int symbol_length() const { return nfft + cp_len; }
  int ssb_length() const { return kSsbSymbols * symbol_length(); }

  int bin_of(int subcarrier) const {
    const int b = (subcarrier + first_subcarrier) % nfft;
    return b < 0 ? b + nfft : b;
  }
};

struct IqWaveform {
  std::vector<Complex> samples;
  double sample_rate_hz = 15.36e6;

  std::size_t size() const { return samples.size(); }

  bool all_finite() const {
    return std::all_of(samples.begin(), samples.end(),
                       [](const Complex& c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
  }

  double energy() const {
    double e = 0.0;
    for (const auto& c : samples) e += std::norm(c);
    return e;
  }

  double mean_power() const { return samples.empty() ? 0.0 : energy() / static_cast<double>(samples.size()); }

  friend bool operator==(const IqWaveform&, const IqWaveform&) = default;
};

// In-place iterative radix-2 FFT, unnormalized. `inverse` flips the
// exponent sign to +j.
inline void fft_inplace(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  if (!std::has_single_bit(n)) throw ConfigError("FFT length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles from direct evaluation keep roundoff at O(eps) per stage.
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const Complex w(std::cos(ang), std::sin(ang));
      for (std::size_t i = k; i < n; i += len) {
        const Complex u = a[i];
        const Complex v = a[i + half] * w;
        a[i] = u + v;
        a[i + half] = u - v;
      }
    }
  }
}

// Assembles the SSB: PSS on symbol 0, SSS on symbol 2 (subcarriers 56..182),
// unit-magnitude QPSK filler on symbols 1 and 3 and on symbol 2 outside the
// SSS band. Symbol 0 outside the PSS band stays zero.
inline ResourceGrid build_ssb_grid(const CellIdentity& id, std::uint64_t filler_seed) {
  ResourceGrid grid;
  const auto pss = pss_sequence(id.n2());
  const auto sss = sss_sequence(id.n1(), id.n2());
  for (int i = 0; i < kSequenceLength; ++i) {
    grid.at(0, kSyncFirstSubcarrier + i) = Complex(pss[i], 0.0);
    grid.at(2, kSyncFirstSubcarrier + i) = Complex(sss[i], 0.0);
  }

  Rng rng(filler_seed, Stream::kFiller);
  const double a = std::numbers::sqrt2 / 2.0;
  auto qpsk = [&] {
    const std::uint64_t bits = rng.below(4);
    return Complex((bits & 1) ? -a : a, (bits & 2) ? -a : a);
  };
  for (int l : {1, 2, 3}) {
    for (int q = 0; q < kSsbSubcarriers; ++q) {
      if (l == 2 && q >= kSyncFirstSubcarrier && q <= kSyncLastSubcarrier) continue;
      grid.at(l, q) = qpsk();
    }
  }
  return grid;
}

// Per symbol: cp_len cyclic-prefix samples followed by the nfft-point
// inverse DFT of the mapped subcarriers, scaled by 1/nfft.
inline IqWaveform ofdm_modulate(const ResourceGrid& grid, const OfdmConfig& cfg) {
  cfg.validate();
  IqWaveform wave;
  wave.sample_rate_hz = cfg.sample_rate_hz;
  wave.samples.reserve(static_cast<std::size_t>(cfg.ssb_length()));
  std::vector<Complex> bins(static_cast<std::size_t>(cfg.nfft));
  const double scale = 1.0 / cfg.nfft;
  for (int l = 0; l < kSsbSymbols; ++l) {
    std::fill(bins.begin(), bins.end(), Complex{});
    for (int q = 0; q < kSsbSubcarriers; ++q) bins[cfg.bin_of(q)] = grid.at(l, q);
    fft_inplace(bins, /*inverse=*/true);
    for (auto& b : bins) b *= scale;
    wave.samples.insert(wave.samples.end(), bins.end() - cfg.cp_len, bins.end());
    wave.samples.insert(wave.samples.end(), bins.begin(), bins.end());
  }
  return wave;
}

// Strips each cyclic prefix, applies the unnormalized forward DFT (the exact
// inverse of the 1/nfft-scaled synthesis) and de-maps subcarriers. Reads the
// first 4 symbols starting at `start`.
inline ResourceGrid ofdm_demodulate(const IqWaveform& wave, const OfdmConfig& cfg, std::size_t start = 0) {
  cfg.validate();
  const auto need = static_cast<std::size_t>(cfg.ssb_length());
  if (start > wave.size() || wave.size() - start < need) {
    throw LengthError("waveform too short for demodulation: need " + std::to_string(need) +
                      " samples, have " + std::to_string(wave.size() - std::min(start, wave.size())));
  }
  ResourceGrid grid;
  std::vector<Complex> bins(static_cast<std::size_t>(cfg.nfft));
  for (int l = 0; l < kSsbSymbols; ++l) {
    const auto body = wave.samples.begin() +
                      static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(l * cfg.symbol_length() + cfg.cp_len));
    std::copy(body, body + cfg.nfft, bins.begin());
    fft_inplace(bins, /*inverse=*/false);
    for (int q = 0; q < kSsbSubcarriers; ++q) grid.at(l, q) = bins[cfg.bin_of(q)];
  }
  return grid;
}

// Time-domain PSS symbol body (no cyclic prefix) for sector n2.
inline std::vector<Complex> pss_template(int n2, const OfdmConfig& cfg) {
  cfg.validate();
  const auto pss = pss_sequence(n2);
  std::vector<Complex> bins(static_cast<std::size_t>(cfg.nfft));
  for (int i = 0; i < kSequenceLength; ++i) bins[cfg.bin_of(kSyncFirstSubcarrier + i)] = Complex(pss[i], 0.0);
  fft_inplace(bins, /*inverse=*/true);
  for (auto& b : bins) b /= static_cast<double>(cfg.nfft);
  return bins;
}

struct PssDetection {
  int n2 = 0;
  // Sample index where the SSB (including the first cyclic prefix) starts.
  std::ptrdiff_t offset = 0;
  // Normalized cross-correlation |<t, w>|^2 / (|t|^2 |w|^2), in [0, 1].
  double peak_metric = 0.0;
};

inline PssDetection detect_pss(const IqWaveform& wave, const OfdmConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.nfft);
  if (wave.size() < n) {
    throw LengthError("waveform shorter than one PSS template (" + std::to_string(n) + " samples)");
  }
  const std::size_t positions = wave.size() - n + 1;

  PssDetection best;
  best.peak_metric = -1.0;
  for (int n2 = 0; n2 <= kMaxSectorId; ++n2) {
    const auto tmpl = pss_template(n2, cfg);
    double t_energy = 0.0;
    for (const auto& t : tmpl) t_energy += std::norm(t);
    for (std::size_t p = 0; p < positions; ++p) {
      Complex acc{};
      for (std::size_t i = 0; i < n; ++i) acc += std::conj(tmpl[i]) * wave.samples[p + i];
      double we = 0.0;
      for (std::size_t i = 0; i < n; ++i) we += std::norm(wave.samples[p + i]);
      const double metric = we > 0.0 ? std::min(1.0, std::norm(acc) / (t_energy * we)) : 0.0;
      if (metric > best.peak_metric) {
        best = {n2, static_cast<std::ptrdiff_t>(p) - cfg.cp_len, metric};
      }
    }
  }
  return best;
}

}  // namespace ssbjam
