// Command-line front end: dataset generation, splitting, federated and
// centralized training, evaluation and report tables.
//
// Exit codes: 0 success, 2 usage error, 3 data-format error,
// 4 numeric failure (non-finite loss).

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ssbjam/ssbjam.hpp"

namespace fs = std::filesystem;
using namespace ssbjam;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDataFormat = 3, kNumeric = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nn::ModelKind model_kind_or_usage(const std::string& s) {
  auto k = nn::parse_model_kind(s);
  if (!k) throw ConfigError("unknown model kind '" + s + "' (expected mlp, cnn1d, svm or lr)");
  return *k;
}

// The architecture a checkpoint was saved from, identified by spec digest.
std::pair<nn::ModelKind, nn::ModelSpec> spec_for_digest(std::uint64_t digest, std::size_t q) {
  for (auto k : {nn::ModelKind::kCnn1d, nn::ModelKind::kMlp, nn::ModelKind::kSvm, nn::ModelKind::kLr}) {
    auto spec = nn::model_spec(k, q);
    if (spec.digest() == digest) return {k, spec};
  }
  throw FormatError(fmt::format("checkpoint spec digest {:016x} matches no known architecture for {} features",
                                digest, q));
}

bool is_fl_tag(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s == "fl";
}

struct GenArgs {
  std::string out;
  std::string csv;
  GenConfig cfg;
  unsigned workers = 1;
};

struct SplitArgs {
  std::string in, train, test;
  double ratio = 0.8;
  std::uint64_t seed = 0;
  bool standardize = true;
};

struct TrainFlArgs {
  std::string train, test, history, history_json, checkpoint, report;
  fl::FlConfig cfg;
};

struct TrainCentralArgs {
  std::string model, train, test, report, checkpoint;
  nn::TrainConfig cfg;
};

struct EvalArgs {
  std::string checkpoint, test, report, tag;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const auto ds = generate_dataset(a.cfg, a.workers);
  save_dataset(ds, a.out);
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + a.csv + " for writing");
    export_csv(ds, csv);
  }
  std::size_t jammed = std::count(ds.labels.begin(), ds.labels.end(), kLabelJammed);
  std::cout << fmt::format("gen: {} rows x {} features ({} jammed) -> {}\n", ds.rows(), ds.q, jammed, a.out);
  return kOk;
}

int run_split(const SplitArgs& a) {
  const auto ds = load_dataset(a.in);
  auto s = split(ds, a.ratio, a.seed);
  if (a.standardize) {
    const auto stats = fit_standardization(s.train);
    s.train = apply_standardization(s.train, stats);
    s.test = apply_standardization(s.test, stats);
  }
  save_dataset(s.train, a.train);
  save_dataset(s.test, a.test);
  std::cout << fmt::format("split: {} train / {} test\n", s.train.rows(), s.test.rows());
  return kOk;
}

int run_train_fl(const TrainFlArgs& a) {
  const auto train = load_dataset(a.train);
  const auto test = load_dataset(a.test);
  if (train.q != test.q) throw FormatError("train and test feature counts differ");
  const auto spec = nn::cnn1d_spec(train.q);
  const auto result = fl::run_training(train, test, a.cfg, spec);

  std::ostringstream csv;
  fl::write_history_csv(result.history, csv);
  write_text(a.history, csv.str());
  if (!a.history_json.empty()) write_json(a.history_json, fl::history_json(result.history));
  if (!a.checkpoint.empty()) nn::save_checkpoint({spec.digest(), result.final_params}, a.checkpoint);
  if (!a.report.empty()) {
    const auto ev = nn::evaluate(spec, result.final_params, test, a.cfg.train.loss.kind);
    write_json(a.report, to_json(compute_metrics(ev.predictions, test.labels, "FL")));
  }
  const auto& last = result.history.back();
  std::cout << fmt::format("train-fl: {} rounds, global test acc {:.4f}, loss {:.4f}\n", last.round, last.test_acc,
                           last.test_loss);
  return kOk;
}

int run_train_central(const TrainCentralArgs& a) {
  const auto kind = model_kind_or_usage(a.model);
  const auto train = load_dataset(a.train);
  const auto test = load_dataset(a.test);
  if (train.q != test.q) throw FormatError("train and test feature counts differ");
  const auto r = run_centralized(kind, train, test, a.cfg);
  write_json(a.report, to_json(r.report));
  if (!a.checkpoint.empty()) nn::save_checkpoint({r.spec.digest(), r.params}, a.checkpoint);
  std::cout << fmt::format("train-central: {} accuracy {:.4f}\n", r.report.model, r.report.accuracy);
  return kOk;
}

int run_eval(const EvalArgs& a) {
  const auto ck = nn::load_checkpoint(a.checkpoint);
  const auto test = load_dataset(a.test);
  const auto [kind, spec] = spec_for_digest(ck.spec_digest, test.q);
  try {
    ck.params.check_matches(spec);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint tensors do not match architecture: ") + e.what());
  }
  const auto ev = nn::evaluate(spec, ck.params, test, nn::default_loss(kind).kind);
  const auto tag = a.tag.empty() ? std::string(nn::to_string(kind)) : a.tag;
  const auto m = compute_metrics(ev.predictions, test.labels, tag);
  write_json(a.report, to_json(m));
  std::cout << fmt::format("eval: {} accuracy {:.4f}\n", tag, m.accuracy);
  return kOk;
}

int run_report(const ReportArgs& a) {
  std::optional<MetricsReport> fl_row;
  std::vector<MetricsReport> baselines;
  for (const auto& in : a.inputs) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(in + ": " + e.what());
    }
    auto m = report_from_json(j);
    if (!fl_row && is_fl_tag(m.model)) {
      fl_row = std::move(m);
    } else {
      baselines.push_back(std::move(m));
    }
  }
  const auto r = compare_report(fl_row, baselines);
  const fs::path out(a.out);
  write_text(out, r.text);
  auto twin = out;
  write_text(twin.replace_extension(".csv"), r.csv);
  write_json(twin.replace_extension(".json"), r.json);
  std::cout << r.text;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic 5G SSB jamming-detection testbed: federated vs centralized"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Synthesize a labeled SSB feature dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset file")->required();
  gen_cmd->add_option("--samples", gen.cfg.p_total, "Number of SSB observations P")->capture_default_str();
  gen_cmd->add_option("--features", gen.cfg.q_features, "Number of IQ features Q (even)")->capture_default_str();
  gen_cmd->add_option("--jam-fraction", gen.cfg.jam_fraction, "Probability a row is jammed")->capture_default_str();
  gen_cmd->add_option("--snr-db", gen.cfg.snr_db, "Signal-to-noise ratio in dB")->capture_default_str();
  gen_cmd->add_option("--jsr-lo", gen.cfg.jsr_lo_db, "Lowest jammer-to-signal ratio in dB")->capture_default_str();
  gen_cmd->add_option("--jsr-hi", gen.cfg.jsr_hi_db, "Highest jammer-to-signal ratio in dB")->capture_default_str();
  gen_cmd->add_option("--seed", gen.cfg.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--workers", gen.workers, "Generation threads")->capture_default_str();
  gen_cmd->add_option("--csv", gen.csv, "Also export the dataset as CSV");

  SplitArgs sp;
  auto* split_cmd = app.add_subcommand("split", "Shuffle-split into train/test and standardize features");
  split_cmd->add_option("--in", sp.in, "Input dataset")->required();
  split_cmd->add_option("--ratio", sp.ratio, "Train fraction")->capture_default_str();
  split_cmd->add_option("--seed", sp.seed, "Shuffle seed")->capture_default_str();
  split_cmd->add_option("--train", sp.train, "Train output")->required();
  split_cmd->add_option("--test", sp.test, "Test output")->required();
  split_cmd->add_flag("!--no-standardize", sp.standardize, "Keep raw features");

  TrainFlArgs tf;
  auto* fl_cmd = app.add_subcommand("train-fl", "FedAvg training of the 1DCNN across clients");
  fl_cmd->add_option("--train", tf.train, "Training dataset")->required();
  fl_cmd->add_option("--test", tf.test, "Global held-out test dataset")->required();
  fl_cmd->add_option("--clients", tf.cfg.k_clients, "Number of clients K")->capture_default_str();
  fl_cmd->add_option("--rounds", tf.cfg.rounds, "Communication rounds R")->capture_default_str();
  fl_cmd->add_option("--local-iters", tf.cfg.local_iterations, "Local epochs per round")->capture_default_str();
  fl_cmd->add_option("--batch", tf.cfg.train.batch_size, "Mini-batch size")->capture_default_str();
  fl_cmd->add_option("--lr", tf.cfg.train.learning_rate, "SGD learning rate")->capture_default_str();
  fl_cmd->add_option("--seed", tf.cfg.seed, "Root seed")->capture_default_str();
  fl_cmd->add_option("--history", tf.history, "Round history CSV")->required();
  fl_cmd->add_option("--history-json", tf.history_json, "Round history JSON with per-client detail");
  fl_cmd->add_option("--checkpoint", tf.checkpoint, "Final global model checkpoint");
  fl_cmd->add_option("--report", tf.report, "Metrics report of the final global model");
  fl_cmd->add_option("--workers", tf.cfg.workers, "Clients trained concurrently")->capture_default_str();

  TrainCentralArgs tc;
  tc.cfg.epochs = 30;
  auto* central_cmd = app.add_subcommand("train-central", "Train a centralized baseline on pooled data");
  central_cmd->add_option("--model", tc.model, "mlp | cnn1d | svm | lr")->required();
  central_cmd->add_option("--train", tc.train, "Training dataset")->required();
  central_cmd->add_option("--test", tc.test, "Test dataset")->required();
  central_cmd->add_option("--epochs", tc.cfg.epochs, "Training epochs")->capture_default_str();
  central_cmd->add_option("--batch", tc.cfg.batch_size, "Mini-batch size")->capture_default_str();
  central_cmd->add_option("--lr", tc.cfg.learning_rate, "SGD learning rate")->capture_default_str();
  central_cmd->add_option("--seed", tc.cfg.seed, "Seed")->capture_default_str();
  central_cmd->add_option("--report", tc.report, "Metrics report JSON")->required();
  central_cmd->add_option("--checkpoint", tc.checkpoint, "Model checkpoint");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--test", ev.test, "Test dataset")->required();
  eval_cmd->add_option("--report", ev.report, "Metrics report JSON")->required();
  eval_cmd->add_option("--tag", ev.tag, "Model tag in the report (FL marks the federated row)");

  ReportArgs rp;
  auto* report_cmd = app.add_subcommand("report", "Render a comparison table from metrics reports");
  report_cmd->add_option("--inputs", rp.inputs, "Metrics report JSON files")->required()->expected(1, -1);
  report_cmd->add_option("--out", rp.out, "Text table; .csv and .json twins are written alongside")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*split_cmd) return run_split(sp);
    if (*fl_cmd) return run_train_fl(tf);
    if (*central_cmd) return run_train_central(tc);
    if (*eval_cmd) return run_eval(ev);
    if (*report_cmd) return run_report(rp);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << '\n';
    return kDataFormat;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kDataFormat;
  } catch (const ShapeError& e) {
    std::cerr << "data format error: " << e.what() << '\n';
    return kDataFormat;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
