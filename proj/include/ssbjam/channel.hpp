#pragma once

// Receive-side impairments: x = s * h + w (+ s_J).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssbjam/error.hpp"
#include "ssbjam/phy.hpp"
#include "ssbjam/rng.hpp"

namespace ssbjam {

struct ChannelImpulse {
  std::vector<Complex> taps{Complex(1.0, 0.0)};

  static ChannelImpulse identity() { return {}; }

  // Three taps with amplitudes 1, decay, decay^2, normalized to unit energy.
  static ChannelImpulse exponential3(double decay = 0.5) {
    ChannelImpulse h;
    h.taps = {1.0, decay, decay * decay};
    double e = 0.0;
    for (const auto& t : h.taps) e += std::norm(t);
    for (auto& t : h.taps) t /= std::sqrt(e);
    return h;
  }

  void validate() const {
    if (taps.empty()) throw DomainError("channel impulse response needs at least one tap");
    for (const auto& t : taps) {
      if (!std::isfinite(t.real()) || !std::isfinite(t.imag())) {
        throw DomainError("channel impulse response has a non-finite tap");
      }
    }
  }
};

struct ImpairmentConfig {
  double snr_db = 15.0;
  std::optional<double> jsr_db;  // absent: no jammer
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
    if (jsr_db && !std::isfinite(*jsr_db)) throw ConfigError("jsr_db must be finite");
  }
};

// Linear convolution with the taps, truncated to the input length.
inline IqWaveform apply_channel(const IqWaveform& x, const ChannelImpulse& h) {
  h.validate();
  if (x.samples.empty()) throw DomainError("apply_channel: empty waveform");
  IqWaveform y;
  y.sample_rate_hz = x.sample_rate_hz;
  y.samples.assign(x.size(), Complex{});
  for (std::size_t j = 0; j < x.size(); ++j) {
    Complex acc{};
    const std::size_t kmax = std::min(h.taps.size(), j + 1);
    for (std::size_t k = 0; k < kmax; ++k) acc += h.taps[k] * x.samples[j - k];
    y.samples[j] = acc;
  }
  return y;
}

namespace detail {

inline double reference_power(const IqWaveform& x, std::optional<double> ref_power, const char* op) {
  const double p = ref_power ? *ref_power : x.mean_power();
  if (!(p > 0.0) || !std::isfinite(p)) {
    throw DomainError(std::string(op) + ": input has zero energy, power ratio undefined");
  }
  return p;
}

inline IqWaveform add_gaussian(const IqWaveform& x, double variance, Rng rng) {
  IqWaveform y = x;
  for (auto& s : y.samples) s += rng.complex_normal(variance);
  return y;
}

}  // namespace detail

// Adds circularly-symmetric complex Gaussian noise with per-sample variance
// P / 10^(snr_db/10). P is the mean sample power of `x` unless a reference
// power is supplied (used when noise and jammer are referenced to the same
// clean signal).
inline IqWaveform add_awgn(const IqWaveform& x, double snr_db, std::uint64_t seed,
                           std::optional<double> ref_power = std::nullopt) {
  if (!std::isfinite(snr_db)) throw DomainError("add_awgn: snr_db must be finite");
  const double p = detail::reference_power(x, ref_power, "add_awgn");
  return detail::add_gaussian(x, p / std::pow(10.0, snr_db / 10.0), Rng(seed, Stream::kNoise));
}

// Gaussian jammer with per-sample power P * 10^(jsr_db/10), drawn from a
// stream disjoint from add_awgn's for the same seed.
inline IqWaveform add_jammer(const IqWaveform& x, double jsr_db, std::uint64_t seed,
                             std::optional<double> ref_power = std::nullopt) {
  if (!std::isfinite(jsr_db)) throw DomainError("add_jammer: jsr_db must be finite");
  const double p = detail::reference_power(x, ref_power, "add_jammer");
  return detail::add_gaussian(x, p * std::pow(10.0, jsr_db / 10.0), Rng(seed, Stream::kJammer));
}

// Full receive model. Noise and jammer powers are both referenced to the
// post-channel signal power.
inline IqWaveform impair(const IqWaveform& s, const ChannelImpulse& h, const ImpairmentConfig& cfg) {
  cfg.validate();
  IqWaveform y = apply_channel(s, h);
  const double p = detail::reference_power(y, std::nullopt, "impair");
  y = add_awgn(y, cfg.snr_db, cfg.seed, p);
  if (cfg.jsr_db) y = add_jammer(y, *cfg.jsr_db, cfg.seed, p);
  return y;
}

}  // namespace ssbjam
