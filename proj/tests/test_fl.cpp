#include <gtest/gtest.h>

#include <sstream>
#include <type_traits>

#include "ssbjam/fl.hpp"

using namespace ssbjam;
using namespace ssbjam::fl;

namespace {

nn::ModelParams scalar(double v) { return {{nn::Tensor({1}, std::vector<double>{v})}}; }

Dataset small_dataset(std::size_t rows, std::uint64_t seed, std::size_t q = 6) {
  Dataset ds(q);
  Rng r(seed);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::uint8_t y = static_cast<std::uint8_t>(r.below(2));
    std::vector<float> x(q);
    for (auto& v : x) v = static_cast<float>(r.uniform(-1, 1) + (y ? 0.8 : -0.8));
    ds.push_back(x, y);
  }
  return ds;
}

FlConfig small_config(std::size_t k, std::size_t rounds) {
  FlConfig cfg;
  cfg.k_clients = k;
  cfg.rounds = rounds;
  cfg.seed = 17;
  cfg.train.batch_size = 4;
  cfg.train.learning_rate = 0.05;
  return cfg;
}

// Hand-rolled mini-batch SGD over the batch order a single client would
// see in each round.
nn::ModelParams centralized_schedule(const nn::ModelSpec& spec, nn::ModelParams p, const Dataset& ds,
                                     const FlConfig& cfg) {
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    std::vector<std::size_t> order(ds.rows());
    std::iota(order.begin(), order.end(), 0);
    Rng(client_round_seed(cfg.seed, t, 0), Stream::kShuffle, {0}).shuffle(std::span(order));
    for (std::size_t s = 0; s < order.size(); s += cfg.train.batch_size) {
      const auto idx = std::span(order).subspan(s, std::min(cfg.train.batch_size, order.size() - s));
      std::vector<std::uint8_t> y;
      for (auto i : idx) y.push_back(ds.labels[i]);
      const auto lg = nn::loss_and_grad(spec, p, nn::gather_batch(ds, idx), y, cfg.train.loss);
      nn::sgd_update(p, lg.grads, cfg.train.learning_rate);
    }
  }
  return p;
}

template <class T>
concept exposes_shard = requires(const T& c) { c.shard_; } || requires(const T& c) { c.shard(); };

}  // namespace

TEST(FedAvg, IdenticalClientsAreAFixedPoint) {
  const auto spec = nn::cnn1d_spec(54);
  const auto w = nn::init_params(spec, 5);
  const std::vector<nn::ModelParams> clients(9, w);
  const std::vector<std::size_t> sizes{1256, 1256, 1256, 1256, 1256, 1256, 1256, 1256, 1255};
  EXPECT_EQ(fedavg_aggregate(clients, sizes), w);
}

TEST(FedAvg, EqualSizesGiveTheMean) {
  const std::vector<nn::ModelParams> c{scalar(1.0), scalar(3.0)};
  const std::vector<std::size_t> n{10, 10};
  EXPECT_EQ(fedavg_aggregate(c, n).tensors[0].data[0], 2.0);
}

TEST(FedAvg, WeightedExample) {
  const std::vector<nn::ModelParams> c{scalar(0.0), scalar(0.0), scalar(1.0)};
  const std::vector<std::size_t> n{1, 1, 2};
  EXPECT_EQ(fedavg_aggregate(c, n).tensors[0].data[0], 0.5);
}

TEST(FedAvg, WeightsSumToOne) {
  Rng r(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> n(1 + r.below(20));
    for (auto& s : n) s = 1 + r.below(5000);
    const auto w = fedavg_weights(n);
    EXPECT_LT(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0), 1e-15);
  }
}

TEST(FedAvg, SingleClientIsIdentity) {
  const auto w = nn::init_params(nn::mlp_spec(6), 2);
  const std::vector<nn::ModelParams> c{w};
  const std::vector<std::size_t> n{7};
  EXPECT_EQ(fedavg_aggregate(c, n), w);
}

TEST(FedAvg, Errors) {
  const std::vector<nn::ModelParams> none;
  EXPECT_THROW(fedavg_aggregate(none, std::vector<std::size_t>{}), AggregationError);
  const std::vector<nn::ModelParams> c{scalar(1.0), scalar(2.0)};
  EXPECT_THROW(fedavg_aggregate(c, std::vector<std::size_t>{1}), AggregationError);
  EXPECT_THROW(fedavg_aggregate(c, std::vector<std::size_t>{1, 0}), AggregationError);
  const std::vector<nn::ModelParams> mixed{scalar(1.0), nn::ModelParams{{nn::Tensor({2})}}};
  EXPECT_THROW(fedavg_aggregate(mixed, std::vector<std::size_t>{1, 1}), AggregationError);
}

TEST(Client, UpdateCarriesNoData) {
  // The update a client returns is parameters plus scalar statistics.
  static_assert(std::is_same_v<decltype(ClientUpdate::params), nn::ModelParams>);
  static_assert(sizeof(ClientUpdate) == sizeof(nn::ModelParams) + sizeof(std::size_t) + 2 * sizeof(double));
  static_assert(!exposes_shard<Client>);
  const Client c(0, small_dataset(10, 1));
  EXPECT_EQ(c.sample_count(), 10u);
  EXPECT_THROW(Client(1, Dataset(6)), ConfigError);
}

TEST(Server, SingleClientRoundEqualsLocalTraining) {
  const auto ds = small_dataset(40, 2);
  const auto test = small_dataset(20, 3);
  const auto cfg = small_config(1, 1);
  const auto spec = nn::mlp_spec(6);
  const auto init = nn::init_params(spec, 4);
  std::vector<Client> clients{Client(0, ds)};
  Server server(spec, init, clients, test, cfg);
  const auto rec = server.run_round();
  auto tc = cfg.train;
  tc.seed = client_round_seed(cfg.seed, 0, 0);
  EXPECT_EQ(server.global(), nn::train_local(spec, init, ds, tc, 1).params);
  EXPECT_EQ(rec.round, 1u);
  EXPECT_EQ(rec.client_sizes, std::vector<std::size_t>{40});
}

TEST(Server, RejectsBadSetup) {
  const auto spec = nn::mlp_spec(6);
  const auto cfg = small_config(1, 1);
  EXPECT_THROW(Server(spec, nn::init_params(spec, 1), {}, small_dataset(5, 1), cfg), ConfigError);
  EXPECT_THROW(Server(spec, nn::init_params(nn::lr_spec(6), 1), {Client(0, small_dataset(5, 1))}, small_dataset(5, 1), cfg),
               ShapeError);
}

TEST(RunTraining, CentralizedEquivalence) {
  const auto train = small_dataset(37, 5, 12);
  const auto test = small_dataset(11, 6, 12);
  const auto spec = nn::cnn1d_spec(12);
  for (std::size_t r : {1u, 5u}) {
    const auto cfg = small_config(1, r);
    const auto fl = run_training(train, test, cfg, spec);
    EXPECT_EQ(fl.final_params, centralized_schedule(spec, nn::init_params(spec, cfg.seed), train, cfg)) << r;
    EXPECT_EQ(fl.history.size(), r);
  }
}

TEST(RunTraining, WorkerCountDoesNotChangeResults) {
  const auto train = small_dataset(90, 7);
  const auto test = small_dataset(30, 8);
  auto cfg = small_config(4, 3);
  const auto spec = nn::mlp_spec(6);
  const auto a = run_training(train, test, cfg, spec);
  cfg.workers = 4;
  const auto b = run_training(train, test, cfg, spec);
  cfg.workers = 3;
  const auto c = run_training(train, test, cfg, spec);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.history, c.history);
  EXPECT_EQ(a.final_params, b.final_params);
}

TEST(RunTraining, HistoryShapeAndCsv) {
  const auto train = small_dataset(60, 9);
  const auto test = small_dataset(20, 10);
  const auto cfg = small_config(3, 4);
  const auto res = run_training(train, test, cfg, nn::mlp_spec(6));
  ASSERT_EQ(res.history.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(res.history[i].round, i + 1);
    EXPECT_EQ(res.history[i].client_sizes, (std::vector<std::size_t>{20, 20, 20}));
    EXPECT_GE(res.history[i].test_acc, 0.0);
    EXPECT_LE(res.history[i].test_acc, 1.0);
  }
  EXPECT_EQ(res.history.back().params_digest, res.final_params.digest());
  std::ostringstream os;
  write_history_csv(res.history, os);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "round,mean_client_train_loss,mean_client_train_acc,global_test_loss,global_test_acc");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  const auto j = history_json(res.history);
  EXPECT_EQ(j.size(), 4u);
  EXPECT_EQ(j[0]["clients"].size(), 3u);
}

TEST(RunTraining, ConfigValidation) {
  const auto ds = small_dataset(10, 1);
  auto cfg = small_config(0, 1);
  EXPECT_THROW(run_training(ds, ds, cfg, nn::mlp_spec(6)), ConfigError);
  cfg = small_config(11, 1);
  EXPECT_THROW(run_training(ds, ds, cfg, nn::mlp_spec(6)), ConfigError);
  cfg = small_config(2, 0);
  EXPECT_THROW(run_training(ds, ds, cfg, nn::mlp_spec(6)), ConfigError);
}
