#pragma once

// Labeled feature datasets built from synthesized clean/jammed SSBs, plus
// splitting, client partitioning and the on-disk format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "ssbjam/binary_io.hpp"
#include "ssbjam/channel.hpp"
#include "ssbjam/error.hpp"
#include "ssbjam/phy.hpp"
#include "ssbjam/rng.hpp"

namespace ssbjam {

inline constexpr std::uint8_t kLabelClean = 0;
inline constexpr std::uint8_t kLabelJammed = 1;

struct Normalization {
  bool applied = false;
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

// P x Q feature matrix (binary32, row-major) with binary labels.
struct Dataset {
  std::size_t q = 0;
  std::vector<float> features;
  std::vector<std::uint8_t> labels;
  Normalization norm;

  Dataset() = default;
  explicit Dataset(std::size_t q_features) : q(q_features) {
    norm.mean.assign(q, 0.0);
    norm.stddev.assign(q, 0.0);
  }

  std::size_t rows() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const float> row(std::size_t i) const { return std::span(features).subspan(i * q, q); }

  void push_back(std::span<const float> x, std::uint8_t y) {
    if (x.size() != q) throw ShapeError(fmt::format("row has {} features, dataset has {}", x.size(), q));
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
  }

  void validate() const {
    if (features.size() != labels.size() * q) {
      throw ShapeError(fmt::format("feature count {} != rows {} x q {}", features.size(), labels.size(), q));
    }
    for (auto y : labels) {
      if (y > 1) throw DomainError(fmt::format("label {} is not 0 or 1", y));
    }
    for (float f : features) {
      if (!std::isfinite(f)) throw DomainError("dataset contains a non-finite feature");
    }
    if (norm.mean.size() != q || norm.stddev.size() != q) {
      throw ShapeError("normalization statistics do not match the feature count");
    }
  }

  // Rows selected by index, in the given order. Normalization is inherited.
  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out(q);
    out.norm = norm;
    out.features.reserve(idx.size() * q);
    out.labels.reserve(idx.size());
    for (auto i : idx) out.push_back(row(i), labels[i]);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Which resource elements become features.
struct FeatureConfig {
  int source_symbol = 0;
  int stride = 0;  // 0: floor(127 / (q/2))
};

struct GenConfig {
  std::size_t p_total = 2000;
  std::size_t q_features = 54;
  double jam_fraction = 0.5;
  double jsr_lo_db = -5.0;
  double jsr_hi_db = 15.0;
  double snr_db = 15.0;
  std::uint64_t seed = 1;
  OfdmConfig ofdm{};
  ChannelImpulse channel = ChannelImpulse::identity();
  FeatureConfig features{};

  static GenConfig desk() { return {}; }
  static GenConfig full_scale() {
    GenConfig c;
    c.p_total = 14129;
    return c;
  }

  void validate() const {
    if (p_total < 2) throw ConfigError("p_total must be >= 2");
    if (q_features == 0 || q_features % 2 != 0) throw ConfigError("q_features must be even and positive");
    if (q_features / 2 > static_cast<std::size_t>(kSequenceLength)) {
      throw ConfigError("q_features/2 must not exceed 127");
    }
    if (!(jam_fraction > 0.0 && jam_fraction < 1.0)) throw ConfigError("jam_fraction must lie in (0, 1)");
    if (!std::isfinite(jsr_lo_db) || !std::isfinite(jsr_hi_db) || jsr_lo_db > jsr_hi_db) {
      throw ConfigError("jsr range must be finite with lo <= hi");
    }
    if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
    ofdm.validate();
    channel.validate();
  }
};

inline std::vector<double> extract_features(const ResourceGrid& grid, std::size_t q, const FeatureConfig& fc = {}) {
  if (q == 0 || q % 2 != 0) throw ConfigError(fmt::format("feature count must be even and positive, got {}", q));
  const int count = static_cast<int>(q / 2);
  if (count > kSequenceLength) throw ConfigError(fmt::format("feature count {} exceeds 2 x 127", q));
  if (fc.source_symbol < 0 || fc.source_symbol >= kSsbSymbols) throw ConfigError("source symbol out of range");
  const int stride = fc.stride > 0 ? fc.stride : kSequenceLength / count;
  if ((count - 1) * stride >= kSequenceLength) throw ConfigError("feature stride runs past the PSS band");

  std::vector<double> out;
  out.reserve(q);
  for (int i = 0; i < count; ++i) {
    const Complex re = grid.at(fc.source_symbol, kSyncFirstSubcarrier + i * stride);
    out.push_back(re.real());
    out.push_back(re.imag());
  }
  return out;
}

struct GeneratedRow {
  std::vector<double> features;
  std::uint8_t label = kLabelClean;
  CellIdentity cell = CellIdentity::compose(0, 0);
  std::optional<double> jsr_db;
};

// Row i of the dataset. Its randomness derives only from (seed, i).
inline GeneratedRow generate_row(const GenConfig& cfg, std::size_t i) {
  Rng rng(cfg.seed, Stream::kRow, {i});
  GeneratedRow row;
  row.cell = CellIdentity::from_cell_id(static_cast<int>(rng.below(3 * kMaxGroupId + kMaxSectorId + 1)));
  const std::uint64_t filler_seed = rng.next_u64();
  const std::uint64_t impair_seed = rng.next_u64();
  const bool jammed = rng.uniform() < cfg.jam_fraction;
  const double jsr = rng.uniform(cfg.jsr_lo_db, cfg.jsr_hi_db);

  ImpairmentConfig ic{cfg.snr_db, std::nullopt, impair_seed};
  if (jammed) {
    ic.jsr_db = jsr;
    row.jsr_db = jsr;
    row.label = kLabelJammed;
  }
  const auto grid = build_ssb_grid(row.cell, filler_seed);
  const auto rx = impair(ofdm_modulate(grid, cfg.ofdm), cfg.channel, ic);
  row.features = extract_features(ofdm_demodulate(rx, cfg.ofdm), cfg.q_features, cfg.features);
  return row;
}

// Rows are generated independently, so the result does not depend on the
// worker count.
inline Dataset generate_dataset(const GenConfig& cfg, unsigned workers = 1) {
  cfg.validate();
  const std::size_t p = cfg.p_total;
  const std::size_t q = cfg.q_features;
  Dataset ds(q);
  ds.features.assign(p * q, 0.0f);
  ds.labels.assign(p, 0);

  auto fill = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = generate_row(cfg, i);
      for (std::size_t j = 0; j < q; ++j) ds.features[i * q + j] = static_cast<float>(r.features[j]);
      ds.labels[i] = r.label;
    }
  };

  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(p)));
  if (workers == 1) {
    fill(0, p);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (p + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(p, b + chunk);
      if (b < e) pool.emplace_back(fill, b, e);
    }
  }
  return ds;
}

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

// Shuffles row indices with `seed`; the first floor(train_ratio * P) go to train.
inline SplitResult split(const Dataset& ds, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw ConfigError(fmt::format("train ratio must lie in (0, 1), got {}", train_ratio));
  }
  std::vector<std::size_t> idx(ds.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng(seed, Stream::kSplit).shuffle(std::span(idx));
  const auto n_train = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(ds.rows())));

  SplitResult r;
  r.train_index.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  r.test_index.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  r.train = ds.subset(r.train_index);
  r.test = ds.subset(r.test_index);
  return r;
}

struct ClientShards {
  std::vector<Dataset> shards;
  std::vector<std::vector<std::size_t>> source_index;

  std::size_t size() const { return shards.size(); }
};

// Shuffles with `seed`, then deals rows round-robin into k shards.
// k = 1 returns the input unchanged.
inline ClientShards partition(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > ds.rows()) {
    throw ConfigError(fmt::format("client count must lie in [1, {}], got {}", ds.rows(), k));
  }
  std::vector<std::size_t> idx(ds.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng(seed, Stream::kPartition).shuffle(std::span(idx));

  ClientShards out;
  out.source_index.resize(k);
  for (std::size_t i = 0; i < idx.size(); ++i) out.source_index[i % k].push_back(idx[i]);
  // Rows keep their source order inside a shard; membership is what is random.
  for (auto& s : out.source_index) std::sort(s.begin(), s.end());
  out.shards.reserve(k);
  for (const auto& s : out.source_index) out.shards.push_back(ds.subset(s));
  return out;
}

// Per-feature population mean and standard deviation of `train`. Constant
// features get stddev 1 so standardization leaves them centred.
inline Normalization fit_standardization(const Dataset& train) {
  if (train.empty()) throw DomainError("cannot fit standardization on an empty dataset");
  Normalization n;
  n.applied = true;
  n.mean.assign(train.q, 0.0);
  n.stddev.assign(train.q, 0.0);
  const double p = static_cast<double>(train.rows());
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < train.q; ++j) n.mean[j] += train.features[i * train.q + j];
  }
  for (auto& m : n.mean) m /= p;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < train.q; ++j) {
      const double d = train.features[i * train.q + j] - n.mean[j];
      n.stddev[j] += d * d;
    }
  }
  for (auto& s : n.stddev) {
    s = std::sqrt(s / p);
    if (!(s > 0.0)) s = 1.0;
  }
  return n;
}

inline Dataset apply_standardization(const Dataset& ds, const Normalization& n) {
  if (ds.norm.applied) throw ConfigError("dataset is already standardized");
  if (!n.applied || n.mean.size() != ds.q || n.stddev.size() != ds.q) {
    throw ShapeError("standardization statistics do not match the dataset");
  }
  Dataset out = ds;
  out.norm = n;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (std::size_t j = 0; j < ds.q; ++j) {
      auto& f = out.features[i * ds.q + j];
      f = static_cast<float>((static_cast<double>(f) - n.mean[j]) / n.stddev[j]);
    }
  }
  return out;
}

// ---- persistence ---------------------------------------------------------

inline constexpr std::string_view kDatasetMagic = "SSBD";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  io::ByteWriter w;
  w.magic(kDatasetMagic);
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint64_t>(ds.rows());
  w.put<std::uint64_t>(ds.q);
  w.put<std::uint8_t>(ds.norm.applied ? 1 : 0);
  w.put_all<std::uint8_t>(ds.labels);
  w.put_all<float>(ds.features);
  w.put_all<double>(ds.norm.mean);
  w.put_all<double>(ds.norm.stddev);
  w.put<std::uint32_t>(io::crc32_of(w.bytes()));
  return std::move(w.bytes());
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& what = "dataset") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kDatasetMagic);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetVersion) {
    throw VersionMismatchError(fmt::format("{}: unsupported version {} (expected {})", what, version, kDatasetVersion));
  }
  const auto p = r.get<std::uint64_t>("row count");
  const auto q = r.get<std::uint64_t>("feature count");
  const auto flag = r.get<std::uint8_t>("normalization flag");
  if (flag > 1) throw FormatError(fmt::format("{}: invalid normalization flag {}", what, flag));
  // Reject sizes the remaining bytes cannot possibly hold before allocating.
  if (p > r.remaining() || (q != 0 && p > r.remaining() / q / sizeof(float)) || q > r.remaining()) {
    throw TruncationError(what + ": truncated feature section");
  }
  Dataset ds(q);
  ds.norm.applied = flag == 1;
  ds.labels.resize(p);
  r.get_all<std::uint8_t>(ds.labels, "labels");
  ds.features.resize(p * q);
  r.get_all<float>(ds.features, "features");
  r.get_all<double>(ds.norm.mean, "normalization means");
  r.get_all<double>(ds.norm.stddev, "normalization stddevs");
  const std::size_t body = r.position();
  const auto stored = r.get<std::uint32_t>("checksum");
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after checksum");
  if (io::crc32_of(bytes.first(body)) != stored) throw ChecksumError(what + ": checksum mismatch");
  try {
    ds.validate();
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_dataset(bytes, path.string());
}

// Header row f0..f{Q-1},label; one row per sample.
inline void export_csv(const Dataset& ds, std::ostream& out) {
  for (std::size_t j = 0; j < ds.q; ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (float f : ds.row(i)) out << fmt::format("{}", f) << ',';
    out << static_cast<int>(ds.labels[i]) << '\n';
  }
}

}  // namespace ssbjam
