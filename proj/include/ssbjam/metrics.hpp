#pragma once

// Binary classification metrics (label 1 = jammed = positive), centralized
// baselines and side-by-side comparison tables.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ssbjam/datagen.hpp"
#include "ssbjam/error.hpp"
#include "ssbjam/nn.hpp"

namespace ssbjam {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  std::string model;
  std::array<ClassMetrics, 2> per_class{};
  double accuracy = 0.0;
  ConfusionCounts counts;
  std::vector<std::string> warnings;  // metrics whose denominator was zero

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

namespace detail {

// Undefined ratios report 0 and leave a warning.
inline double ratio(std::size_t num, std::size_t den, const std::string& what, std::vector<std::string>& warnings) {
  if (den == 0) {
    warnings.push_back(what + " undefined (zero denominator), reported as 0");
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

inline double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace detail

inline MetricsReport metrics_from_counts(const ConfusionCounts& c, std::string model = {}) {
  if (c.total() == 0) throw DomainError("metrics need at least one sample");
  MetricsReport m;
  m.model = std::move(model);
  m.counts = c;
  auto& w = m.warnings;
  m.per_class[1].precision = detail::ratio(c.tp, c.tp + c.fp, "class 1 precision", w);
  m.per_class[1].recall = detail::ratio(c.tp, c.tp + c.fn, "class 1 recall", w);
  m.per_class[0].precision = detail::ratio(c.tn, c.tn + c.fn, "class 0 precision", w);
  m.per_class[0].recall = detail::ratio(c.tn, c.tn + c.fp, "class 0 recall", w);
  for (auto& cm : m.per_class) cm.f1 = detail::harmonic(cm.precision, cm.recall);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return m;
}

inline MetricsReport compute_metrics(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> truth,
                                     std::string model = {}) {
  if (predictions.size() != truth.size()) {
    throw DomainError(fmt::format("{} predictions vs {} labels", predictions.size(), truth.size()));
  }
  if (truth.empty()) throw DomainError("metrics need at least one sample");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i] > 1 || truth[i] > 1) throw DomainError("labels must be 0 or 1");
    if (truth[i] == 1) {
      predictions[i] == 1 ? ++c.tp : ++c.fn;
    } else {
      predictions[i] == 1 ? ++c.fp : ++c.tn;
    }
  }
  return metrics_from_counts(c, std::move(model));
}

inline nlohmann::json to_json(const MetricsReport& m) {
  auto classes = nlohmann::json::array();
  for (int c = 0; c < 2; ++c) {
    classes.push_back({{"class", c},
                       {"precision", m.per_class[c].precision},
                       {"recall", m.per_class[c].recall},
                       {"f1", m.per_class[c].f1}});
  }
  return {{"model", m.model},
          {"accuracy", m.accuracy},
          {"classes", classes},
          {"confusion", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn}}},
          {"warnings", m.warnings}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport m;
    m.model = j.at("model").get<std::string>();
    m.accuracy = j.at("accuracy").get<double>();
    for (const auto& c : j.at("classes")) {
      const int k = c.at("class").get<int>();
      if (k != 0 && k != 1) throw FormatError("class index must be 0 or 1");
      m.per_class[k] = {c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>()};
    }
    const auto& cc = j.at("confusion");
    m.counts = {cc.at("tp").get<std::size_t>(), cc.at("fp").get<std::size_t>(), cc.at("tn").get<std::size_t>(),
                cc.at("fn").get<std::size_t>()};
    if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

struct CentralizedResult {
  MetricsReport report;
  nn::ModelSpec spec;
  nn::ModelParams params;
  double final_train_loss = 0.0;
};

// Trains the selected architecture on the pooled training set for
// cfg.epochs passes and evaluates it on `test`. The loss follows the model
// kind (hinge + L2 for svm, BCE otherwise).
inline CentralizedResult run_centralized(nn::ModelKind kind, const Dataset& train, const Dataset& test,
                                         nn::TrainConfig cfg) {
  cfg.loss = nn::default_loss(kind);
  cfg.validate();
  CentralizedResult r;
  r.spec = nn::model_spec(kind, train.q);
  auto local = nn::train_local(r.spec, nn::init_params(r.spec, cfg.seed), train, cfg, cfg.epochs);
  r.params = std::move(local.params);
  r.final_train_loss = local.train_loss;
  const auto ev = nn::evaluate(r.spec, r.params, test, cfg.loss.kind);
  r.report = compute_metrics(ev.predictions, test.labels, std::string(nn::to_string(kind)));
  return r;
}

struct RenderedReport {
  std::string text;
  std::string csv;
  nlohmann::json json;
};

// Aligned table plus CSV and JSON twins. Baselines keep submission order;
// the FL row, when given, comes last. Table values use 3 decimals, CSV and
// JSON keep full precision.
inline RenderedReport compare_report(const std::optional<MetricsReport>& fl, std::span<const MetricsReport> baselines) {
  std::vector<const MetricsReport*> rows;
  for (const auto& b : baselines) rows.push_back(&b);
  if (fl) rows.push_back(&*fl);
  if (rows.empty()) throw DomainError("compare_report needs at least one report");

  std::size_t name_w = 6;
  for (const auto* r : rows) name_w = std::max(name_w, r->model.size());

  RenderedReport out;
  const auto rule = std::string(name_w + 2 + 5 + 4 * 12, '-');
  out.text += fmt::format("{:<{}}  {:>5}{:>12}{:>12}{:>12}{:>12}\n", "Models", name_w, "Class", "Precision", "Recall",
                          "F1-score", "Accuracy");
  out.text += rule + "\n";
  out.csv = "model,class,precision,recall,f1,accuracy\n";
  out.json = nlohmann::json::array();
  for (const auto* r : rows) {
    for (int c = 0; c < 2; ++c) {
      const auto& m = r->per_class[c];
      out.text += fmt::format("{:<{}}  {:>5}{:>12.3f}{:>12.3f}{:>12.3f}{:>12}\n", c == 0 ? r->model : "", name_w, c,
                              m.precision, m.recall, m.f1, c == 0 ? fmt::format("{:.3f}", r->accuracy) : "");
      out.csv += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r->model, c, m.precision, m.recall, m.f1,
                             r->accuracy);
    }
    out.text += rule + "\n";
    out.json.push_back(to_json(*r));
  }
  return out;
}

}  // namespace ssbjam
