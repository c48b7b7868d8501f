#include <gtest/gtest.h>

#include <cmath>

#include "ssbjam/channel.hpp"

using namespace ssbjam;

namespace {

IqWaveform ramp(std::size_t n) {
  IqWaveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.emplace_back(std::sin(0.1 * i) + 0.5, std::cos(0.37 * i));
  return w;
}

IqWaveform unit_power(std::size_t n) {
  IqWaveform w;
  w.samples.assign(n, Complex(1.0, 0.0));
  return w;
}

double relative_error(const IqWaveform& a, const IqWaveform& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a.samples[i] - b.samples[i]);
    den += std::norm(b.samples[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(ApplyChannel, IdentityTap) {
  const auto x = ramp(100);
  EXPECT_EQ(apply_channel(x, ChannelImpulse::identity()), x);
}

TEST(ApplyChannel, ScalarTapHalves) {
  const auto x = ramp(100);
  const auto y = apply_channel(x, {{Complex(0.5, 0.0)}});
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(y.samples[i], 0.5 * x.samples[i]);
}

TEST(ApplyChannel, DelayTap) {
  const auto x = ramp(100);
  const auto y = apply_channel(x, {{Complex(0.0), Complex(1.0)}});
  ASSERT_EQ(y.size(), x.size());
  EXPECT_EQ(y.samples[0], Complex(0.0));
  for (std::size_t i = 1; i < x.size(); ++i) ASSERT_EQ(y.samples[i], x.samples[i - 1]);
}

TEST(ApplyChannel, Linear) {
  const auto x = ramp(64);
  const auto h = ChannelImpulse::exponential3(0.4);
  const Complex a(1.5, -0.25);
  IqWaveform ax = x;
  for (auto& s : ax.samples) s *= a;
  const auto lhs = apply_channel(ax, h);
  const auto rhs = apply_channel(x, h);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LT(std::abs(lhs.samples[i] - a * rhs.samples[i]), 1e-12);
}

TEST(ApplyChannel, Errors) {
  EXPECT_THROW(apply_channel(ramp(4), {{}}), DomainError);
  EXPECT_THROW(apply_channel(IqWaveform{}, ChannelImpulse::identity()), DomainError);
  EXPECT_THROW(apply_channel(ramp(4), {{Complex(NAN, 0.0)}}), DomainError);
}

TEST(ExponentialProfile, UnitEnergy) {
  const auto h = ChannelImpulse::exponential3(0.5);
  double e = 0.0;
  for (auto t : h.taps) e += std::norm(t);
  EXPECT_NEAR(e, 1.0, 1e-15);
  EXPECT_EQ(h.taps.size(), 3u);
}

TEST(Awgn, VanishingNoise) {
  const auto x = ramp(1000);
  EXPECT_LT(relative_error(add_awgn(x, 300.0, 1), x), 1e-10);
}

TEST(Awgn, EmpiricalPowerAndMean) {
  const std::size_t n = 1'000'000;
  const auto x = unit_power(n);
  const double snr_db = 7.0;
  const double sigma2 = 1.0 / std::pow(10.0, snr_db / 10.0);
  const auto y = add_awgn(x, snr_db, 123);
  double p = 0.0;
  Complex mean{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = y.samples[i] - x.samples[i];
    p += std::norm(w);
    mean += w;
  }
  p /= n;
  mean /= static_cast<double>(n);
  EXPECT_LT(std::abs(p - sigma2) / sigma2, 0.02);
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(sigma2) / std::sqrt(static_cast<double>(n)));
}

TEST(Awgn, DeterministicPerSeed) {
  const auto x = ramp(500);
  EXPECT_EQ(add_awgn(x, 10.0, 9), add_awgn(x, 10.0, 9));
  EXPECT_NE(add_awgn(x, 10.0, 9), add_awgn(x, 10.0, 10));
}

TEST(Awgn, ZeroEnergyRejected) {
  IqWaveform z;
  z.samples.assign(10, Complex{});
  EXPECT_THROW(add_awgn(z, 10.0, 1), DomainError);
  EXPECT_THROW(add_jammer(z, 10.0, 1), DomainError);
}

TEST(Jammer, Vanishing) {
  const auto x = ramp(1000);
  EXPECT_LT(relative_error(add_jammer(x, -300.0, 1), x), 1e-10);
}

TEST(Jammer, ZeroDbMatchesSignalPowerAndIsZeroMean) {
  const std::size_t n = 1'000'000;
  const auto x = unit_power(n);
  const auto y = add_jammer(x, 0.0, 77);
  double p = 0.0;
  Complex mean{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = y.samples[i] - x.samples[i];
    p += std::norm(j);
    mean += j;
  }
  p /= n;
  mean /= static_cast<double>(n);
  EXPECT_LT(std::abs(p - 1.0), 0.02);
  EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Jammer, StreamIndependentOfNoise) {
  const auto x = unit_power(1000);
  const auto a = add_awgn(x, 0.0, 5);
  const auto b = add_jammer(x, 0.0, 5);
  EXPECT_NE(a, b);
}

TEST(Jammer, StrongJammerDestroysGridCorrelation) {
  const OfdmConfig cfg;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto grid = build_ssb_grid(CellIdentity::from_cell_id(static_cast<int>(seed * 7 % 1008)), seed);
    const auto rx = ofdm_demodulate(add_jammer(ofdm_modulate(grid, cfg), 20.0, seed), cfg);
    for (int l = 0; l < 4; ++l) {
      Complex dot{};
      double ea = 0.0, eb = 0.0;
      for (int q = 0; q < kSsbSubcarriers; ++q) {
        dot += std::conj(grid.at(l, q)) * rx.at(l, q);
        ea += std::norm(grid.at(l, q));
        eb += std::norm(rx.at(l, q));
      }
      worst = std::max(worst, std::abs(dot) / std::sqrt(ea * eb));
    }
  }
  EXPECT_LT(worst, 0.5);
}

TEST(Impairments, NoiseAndJammerCommuteWithSharedReference) {
  const auto x = ramp(2000);
  const double p = x.mean_power();
  const auto a = add_jammer(add_awgn(x, 12.0, 3, p), 4.0, 3, p);
  const auto b = add_awgn(add_jammer(x, 4.0, 3, p), 12.0, 3, p);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LT(std::abs(a.samples[i] - b.samples[i]), 1e-14);
}

TEST(Impairments, ImpairMatchesComposition) {
  const auto s = ramp(300);
  const auto h = ChannelImpulse::exponential3();
  ImpairmentConfig cfg{10.0, 3.0, 44};
  const auto y = apply_channel(s, h);
  const double p = y.mean_power();
  const auto expected = add_jammer(add_awgn(y, 10.0, 44, p), 3.0, 44, p);
  EXPECT_EQ(impair(s, h, cfg), expected);
  cfg.jsr_db.reset();
  EXPECT_EQ(impair(s, h, cfg), add_awgn(y, 10.0, 44, p));
  cfg.snr_db = INFINITY;
  EXPECT_THROW(impair(s, h, cfg), ConfigError);
}
