#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "ssbjam/metrics.hpp"

using namespace ssbjam;

namespace {

MetricsReport hand_example() { return metrics_from_counts({.tp = 47, .fp = 5, .tn = 45, .fn = 3}, "hand"); }

Dataset separable(std::size_t rows, std::uint64_t seed) {
  Dataset ds(12);
  Rng r(seed);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::uint8_t y = static_cast<std::uint8_t>(i % 2);
    std::vector<float> x(12);
    for (auto& v : x) v = static_cast<float>(r.uniform(-0.5, 0.5));
    x[0] += y ? 2.0f : -2.0f;
    ds.push_back(x, y);
  }
  return ds;
}

}  // namespace

TEST(Metrics, PerfectPredictions) {
  const std::vector<std::uint8_t> y{0, 1, 1, 0, 1};
  const auto m = compute_metrics(y, y);
  EXPECT_EQ(m.accuracy, 1.0);
  for (const auto& c : m.per_class) {
    EXPECT_EQ(c.precision, 1.0);
    EXPECT_EQ(c.recall, 1.0);
    EXPECT_EQ(c.f1, 1.0);
  }
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Metrics, HandConfusionExample) {
  const auto m = hand_example();
  EXPECT_NEAR(m.per_class[1].precision, 0.9038, 1e-4);
  EXPECT_EQ(m.per_class[1].recall, 0.94);
  EXPECT_EQ(m.accuracy, 0.92);
  EXPECT_NEAR(m.per_class[0].precision, 45.0 / 48.0, 1e-15);
  EXPECT_NEAR(m.per_class[0].recall, 0.9, 1e-15);
}

TEST(Metrics, ZeroDenominatorsReportZeroWithWarning) {
  const std::vector<std::uint8_t> pred{0, 0, 0};
  const std::vector<std::uint8_t> truth{0, 0, 0};
  const auto m = compute_metrics(pred, truth);
  EXPECT_EQ(m.per_class[1].precision, 0.0);
  EXPECT_EQ(m.per_class[1].recall, 0.0);
  EXPECT_EQ(m.per_class[1].f1, 0.0);
  EXPECT_EQ(m.per_class[0].f1, 1.0);
  EXPECT_EQ(m.warnings.size(), 2u);
  EXPECT_EQ(to_json(m)["warnings"].size(), 2u);
}

TEST(Metrics, Errors) {
  const std::vector<std::uint8_t> a{0, 1};
  const std::vector<std::uint8_t> b{0};
  const std::vector<std::uint8_t> bad{0, 3};
  const std::vector<std::uint8_t> none;
  EXPECT_THROW(compute_metrics(a, b), DomainError);
  EXPECT_THROW(compute_metrics(none, none), DomainError);
  EXPECT_THROW(compute_metrics(bad, a), DomainError);
}

TEST(Metrics, MatchesCountingOracle) {
  Rng r(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + r.below(60);
    const double bias = r.uniform();
    std::vector<std::uint8_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = r.uniform() < bias;
      truth[i] = r.uniform() < 0.5;
    }
    double acc = 0.0;
    const auto want = oracle::per_class_scores(pred, truth, &acc);
    const auto got = compute_metrics(pred, truth);
    ASSERT_EQ(got.accuracy, acc);
    for (int c = 0; c < 2; ++c) {
      ASSERT_EQ(got.per_class[c].precision, want[c].precision);
      ASSERT_EQ(got.per_class[c].recall, want[c].recall);
      ASSERT_EQ(got.per_class[c].f1, want[c].f1);
    }
  }
}

TEST(Metrics, AccuracyIsPrevalenceWeightedRecall) {
  Rng r(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + r.below(500);
    std::vector<std::uint8_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<std::uint8_t>(r.below(2));
      truth[i] = static_cast<std::uint8_t>(r.below(2));
    }
    const auto m = compute_metrics(pred, truth);
    const double pos = static_cast<double>(std::count(truth.begin(), truth.end(), 1)) / static_cast<double>(n);
    EXPECT_NEAR(m.accuracy, pos * m.per_class[1].recall + (1 - pos) * m.per_class[0].recall, 1e-12);
  }
}

TEST(Metrics, JsonRoundTrip) {
  const auto m = hand_example();
  EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(m).dump())), m);
  EXPECT_THROW(report_from_json(nlohmann::json{{"model", "x"}}), FormatError);
}

TEST(Centralized, LogisticRegressionOnSeparableData) {
  const auto train = separable(80, 1);
  const auto test = separable(40, 2);
  nn::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 20;
  cfg.seed = 3;
  const auto r = run_centralized(nn::ModelKind::kLr, train, test, cfg);
  EXPECT_EQ(r.report.accuracy, 1.0);
  EXPECT_EQ(r.report.model, "lr");
  EXPECT_EQ(r.spec.digest(), nn::lr_spec(12).digest());
}

TEST(Centralized, EveryModelKindProducesAReport) {
  const auto train = separable(40, 4);
  const auto test = separable(20, 5);
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  for (auto k : {nn::ModelKind::kMlp, nn::ModelKind::kCnn1d, nn::ModelKind::kSvm, nn::ModelKind::kLr}) {
    const auto r = run_centralized(k, train, test, cfg);
    EXPECT_EQ(r.report.counts.total(), 20u);
    EXPECT_TRUE(std::isfinite(r.final_train_loss));
    EXPECT_EQ(r.params.count(), r.spec.parameter_count());
  }
}

TEST(Centralized, CnnParameterCountMatchesFederatedModel) {
  const auto train = separable(20, 6);
  nn::TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = run_centralized(nn::ModelKind::kCnn1d, train, train, cfg);
  EXPECT_EQ(r.params.count(), nn::cnn1d_spec(12).parameter_count());
}

TEST(Report, SingleReport) {
  const std::vector<MetricsReport> one{hand_example()};
  const auto out = compare_report(std::nullopt, one);
  EXPECT_EQ(std::count(out.csv.begin(), out.csv.end(), '\n'), 3);
  EXPECT_NE(out.text.find("0.904"), std::string::npos);
  EXPECT_NE(out.text.find("0.920"), std::string::npos);
  EXPECT_EQ(out.json.size(), 1u);
  EXPECT_THROW(compare_report(std::nullopt, std::vector<MetricsReport>{}), DomainError);
}

TEST(Report, OrderWithFederatedLast) {
  auto a = hand_example();
  a.model = "mlp";
  auto b = hand_example();
  b.model = "svm";
  auto f = hand_example();
  f.model = "FL";
  const std::vector<MetricsReport> base{b, a};
  const auto out = compare_report(f, base);
  const auto ps = out.text.find("svm"), pm = out.text.find("mlp"), pf = out.text.find("FL");
  EXPECT_LT(ps, pm);
  EXPECT_LT(pm, pf);
  EXPECT_EQ(out.json.back()["model"], "FL");
}

TEST(Report, CsvReparsesToSameNumbers) {
  auto m = metrics_from_counts({.tp = 13, .fp = 7, .tn = 29, .fn = 2}, "cnn1d");
  const auto out = compare_report(std::nullopt, std::vector<MetricsReport>{m});
  std::istringstream in(out.csv);
  std::string line;
  std::getline(in, line);
  for (int c = 0; c < 2; ++c) {
    ASSERT_TRUE(std::getline(in, line));
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 6u);
    EXPECT_EQ(f[0], "cnn1d");
    EXPECT_EQ(std::stoi(f[1]), c);
    EXPECT_NEAR(std::stod(f[2]), m.per_class[c].precision, 5e-5);
    EXPECT_NEAR(std::stod(f[3]), m.per_class[c].recall, 5e-5);
    EXPECT_NEAR(std::stod(f[4]), m.per_class[c].f1, 5e-5);
    EXPECT_NEAR(std::stod(f[5]), m.accuracy, 5e-5);
  }
}

TEST(Centralized, CnnOnDefaultPreset) {
  const auto ds = generate_dataset(GenConfig::desk(), 2);
  const auto s = split(ds, 0.8, 1);
  const auto stats = fit_standardization(s.train);
  nn::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 1;
  const auto r = run_centralized(nn::ModelKind::kCnn1d, apply_standardization(s.train, stats),
                                 apply_standardization(s.test, stats), cfg);
  EXPECT_GE(r.report.accuracy, 0.88);
}
