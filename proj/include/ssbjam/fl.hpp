#pragma once

// In-process FedAvg simulation: broadcast, local training on private
// shards, dataset-size-weighted aggregation, per-round global evaluation.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ssbjam/datagen.hpp"
#include "ssbjam/error.hpp"
#include "ssbjam/nn.hpp"
#include "ssbjam/rng.hpp"

namespace ssbjam::fl {

struct FlConfig {
  std::size_t k_clients = 9;
  std::size_t rounds = 30;
  std::size_t local_iterations = 1;
  nn::TrainConfig train{};
  std::uint64_t seed = 0;
  // Clients trained concurrently per round. Results do not depend on it.
  unsigned workers = 1;

  void validate() const {
    if (k_clients < 1) throw ConfigError("k_clients must be >= 1");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (local_iterations < 1) throw ConfigError("local_iterations must be >= 1");
    train.validate();
  }
};

// Batch-order seed of client `client` in round `round` (0-based).
inline std::uint64_t client_round_seed(std::uint64_t root, std::size_t round, std::size_t client) {
  return derive_seed(root, Stream::kClient, {round, client});
}

inline std::vector<double> fedavg_weights(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw AggregationError("no client sizes");
  std::size_t n = 0;
  for (auto s : sizes) {
    if (s == 0) throw AggregationError("client sizes must be positive");
    n += s;
  }
  std::vector<double> w;
  w.reserve(sizes.size());
  for (auto s : sizes) w.push_back(static_cast<double>(s) / static_cast<double>(n));
  return w;
}

// Elementwise sum_k (n_k / n) w_k, accumulated in ascending client order as
// w_0 + sum_k (n_k / n)(w_k - w_0). The anchored form is algebraically the
// same convex combination and reproduces identical client models exactly.
inline nn::ModelParams fedavg_aggregate(std::span<const nn::ModelParams> clients, std::span<const std::size_t> sizes) {
  if (clients.empty()) throw AggregationError("no client models to aggregate");
  if (clients.size() != sizes.size()) {
    throw AggregationError(fmt::format("{} client models but {} sizes", clients.size(), sizes.size()));
  }
  for (std::size_t k = 1; k < clients.size(); ++k) {
    if (!clients[k].same_structure(clients[0])) {
      throw AggregationError(fmt::format("client {} parameter structure differs from client 0", k));
    }
  }
  const auto weights = fedavg_weights(sizes);
  nn::ModelParams out = clients[0];
  for (std::size_t t = 0; t < out.tensors.size(); ++t) {
    auto& dst = out.tensors[t].data;
    const auto& base = clients[0].tensors[t].data;
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double delta = 0.0;
      for (std::size_t k = 1; k < clients.size(); ++k) delta += weights[k] * (clients[k].tensors[t].data[j] - base[j]);
      dst[j] = base[j] + delta;
    }
  }
  return out;
}

// What a client sends back to the server: parameters and scalars only.
struct ClientUpdate {
  nn::ModelParams params;
  std::size_t n_samples = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
};

// A client owns its shard; nothing outside the class can read it.
class Client {
 public:
  Client(std::size_t id, Dataset shard) : id_(id), shard_(std::move(shard)) {
    if (shard_.empty()) throw ConfigError(fmt::format("client {} has an empty shard", id_));
  }

  std::size_t id() const { return id_; }
  std::size_t sample_count() const { return shard_.rows(); }

  ClientUpdate train(const nn::ModelSpec& spec, const nn::ModelParams& global, const nn::TrainConfig& cfg,
                     std::size_t iterations, std::uint64_t seed) const {
    nn::TrainConfig local = cfg;
    local.seed = seed;
    auto r = nn::train_local(spec, global, shard_, local, iterations);
    return {std::move(r.params), shard_.rows(), r.train_loss, r.train_acc};
  }

 private:
  std::size_t id_;
  Dataset shard_;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<double> client_train_loss;
  std::vector<double> client_train_acc;
  std::vector<std::size_t> client_sizes;
  std::uint64_t params_digest = 0;
  double test_loss = 0.0;
  double test_acc = 0.0;

  double mean_client_train_loss() const {
    return std::accumulate(client_train_loss.begin(), client_train_loss.end(), 0.0) /
           static_cast<double>(client_train_loss.size());
  }
  double mean_client_train_acc() const {
    return std::accumulate(client_train_acc.begin(), client_train_acc.end(), 0.0) /
           static_cast<double>(client_train_acc.size());
  }

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

class Server {
 public:
  Server(nn::ModelSpec spec, nn::ModelParams initial, std::vector<Client> clients, Dataset test, FlConfig cfg)
      : spec_(std::move(spec)),
        global_(std::move(initial)),
        clients_(std::move(clients)),
        test_(std::move(test)),
        cfg_(cfg) {
    cfg_.validate();
    if (clients_.empty()) throw ConfigError("federation needs at least one client");
    if (test_.empty()) throw ConfigError("global test set is empty");
    global_.check_matches(spec_);
    nn::check_loss_compatible(spec_, cfg_.train.loss);
  }

  const nn::ModelParams& global() const { return global_; }
  const nn::ModelSpec& spec() const { return spec_; }
  std::size_t rounds_completed() const { return round_; }

  RoundRecord run_round() {
    const std::size_t k = clients_.size();
    std::vector<ClientUpdate> updates(k);
    auto work = [&](std::size_t c) {
      updates[c] = clients_[c].train(spec_, global_, cfg_.train, cfg_.local_iterations,
                                     client_round_seed(cfg_.seed, round_, c));
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(cfg_.workers, static_cast<unsigned>(k)));
    if (workers == 1) {
      for (std::size_t c = 0; c < k; ++c) work(c);
    } else {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t c = w; c < k; c += workers) work(c);
        });
      }
    }  // barrier

    std::vector<nn::ModelParams> params;
    RoundRecord rec;
    rec.round = ++round_;
    params.reserve(k);
    for (auto& u : updates) {
      rec.client_sizes.push_back(u.n_samples);
      rec.client_train_loss.push_back(u.train_loss);
      rec.client_train_acc.push_back(u.train_acc);
      params.push_back(std::move(u.params));
    }
    global_ = fedavg_aggregate(params, rec.client_sizes);
    rec.params_digest = global_.digest();
    const auto ev = nn::evaluate(spec_, global_, test_, cfg_.train.loss.kind);
    rec.test_loss = ev.loss;
    rec.test_acc = ev.accuracy;
    return rec;
  }

 private:
  nn::ModelSpec spec_;
  nn::ModelParams global_;
  std::vector<Client> clients_;
  Dataset test_;
  FlConfig cfg_;
  std::size_t round_ = 0;
};

struct TrainingResult {
  std::vector<RoundRecord> history;
  nn::ModelParams final_params;
};

// Partitions `train` into k shards, initializes the global model from the
// seed and runs cfg.rounds rounds.
inline TrainingResult run_training(const Dataset& train, const Dataset& test, const FlConfig& cfg,
                                   const nn::ModelSpec& spec) {
  cfg.validate();
  const auto shards = partition(train, cfg.k_clients, cfg.seed);
  std::vector<Client> clients;
  clients.reserve(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) clients.emplace_back(c, shards.shards[c]);
  Server server(spec, nn::init_params(spec, cfg.seed), std::move(clients), test, cfg);
  TrainingResult r;
  for (std::size_t i = 0; i < cfg.rounds; ++i) r.history.push_back(server.run_round());
  r.final_params = server.global();
  return r;
}

inline TrainingResult run_training(const Dataset& train, const Dataset& test, const FlConfig& cfg) {
  return run_training(train, test, cfg, nn::cnn1d_spec(train.q));
}

inline void write_history_csv(std::span<const RoundRecord> history, std::ostream& out) {
  out << "round,mean_client_train_loss,mean_client_train_acc,global_test_loss,global_test_acc\n";
  for (const auto& r : history) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.round, r.mean_client_train_loss(),
                       r.mean_client_train_acc(), r.test_loss, r.test_acc);
  }
}

inline nlohmann::json history_json(std::span<const RoundRecord> history) {
  auto arr = nlohmann::json::array();
  for (const auto& r : history) {
    auto clients = nlohmann::json::array();
    for (std::size_t c = 0; c < r.client_sizes.size(); ++c) {
      clients.push_back({{"client", c},
                         {"samples", r.client_sizes[c]},
                         {"train_loss", r.client_train_loss[c]},
                         {"train_acc", r.client_train_acc[c]}});
    }
    arr.push_back({{"round", r.round},
                   {"mean_client_train_loss", r.mean_client_train_loss()},
                   {"mean_client_train_acc", r.mean_client_train_acc()},
                   {"global_test_loss", r.test_loss},
                   {"global_test_acc", r.test_acc},
                   {"params_digest", fmt::format("{:016x}", r.params_digest)},
                   {"clients", clients}});
  }
  return arr;
}

}  // namespace ssbjam::fl
