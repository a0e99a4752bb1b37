// SPDX-License-Identifier: Apache-2.0
//
// los: score, train and evaluate output-signature detectors.
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "los/los.hpp"

namespace fs = std::filesystem;
using namespace los;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw FormatError(FormatErrc::io, "write failed for " + p.string());
}

// ---------------------------------------------------------------------------
// Score CSV: record_index,group_id,label,score
// ---------------------------------------------------------------------------

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

constexpr const char* kScoreHeader = "record_index,group_id,label,score";

std::string scores_csv(std::span<const LOSRecord> records, std::span<const double> scores) {
  std::ostringstream os;
  os << kScoreHeader << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < records.size(); ++i) {
    os << i << ',' << csv_field(records[i].group_id.value_or("")) << ',';
    if (records[i].label) os << static_cast<int>(*records[i].label);
    os << ',' << scores[i] << '\n';
  }
  return os.str();
}

struct ScoreTable {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

ScoreTable read_scores_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line) || csv_split(line) != csv_split(kScoreHeader))
    throw DomainError(p.string() + ": expected header '" + kScoreHeader + "'");
  ScoreTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = csv_split(line);
    const std::string where = p.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) throw DomainError(where + ": expected 4 fields");
    if (f[2] != "0" && f[2] != "1") throw DomainError(where + ": label must be 0 or 1");
    t.labels.push_back(static_cast<std::uint8_t>(f[2] == "1"));
    try {
      std::size_t used = 0;
      t.scores.push_back(std::stod(f[3], &used));
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DomainError(where + ": bad score '" + f[3] + "'");
    }
  }
  return t;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument("bad");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string method = "mink", scale = "prob", in, out;
  double k_frac = 20.0;
};

int run_score(const ScoreArgs& a) {
  static const std::map<std::string, Method> methods{{"mean", Method::mean}, {"min", Method::min},
                                                     {"max", Method::max},   {"loss", Method::loss},
                                                     {"mink", Method::mink}, {"minkpp", Method::minkpp}};
  static const std::map<std::string, Scale> scales{
      {"prob", Scale::prob}, {"log_prob", Scale::log_prob}, {"logit", Scale::logit}};
  GSFConfig cfg;
  cfg.k_frac = a.k_frac;
  cfg.scale = scales.at(a.scale);
  try {
    cfg.check();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  const auto records = read_records(a.in);
  std::vector<double> scores;
  scores.reserve(records.size());
  for (const auto& r : records) scores.push_back(score_record(r, methods.at(a.method), cfg));
  write_text(a.out, scores_csv(records, scores));
  return 0;
}

struct TrainArgs {
  std::string config, train, val, ckpt;
  std::size_t threads = 0;
};

void print_epoch(const net::EpochStats& s) {
  std::printf("epoch=%zu train_loss=%.6f val_auc=%.6f lr=%.3g\n", s.epoch, s.train_loss, s.val_auc, s.lr);
  std::fflush(stdout);
}

void print_summary(const net::TrainHistory& h) {
  std::printf("initial_val_auc=%.6f best_epoch=%zu best_val_auc=%.6f early_stopped=%d\n", h.initial_val_auc,
              h.best_epoch, h.best_val_auc, h.early_stopped ? 1 : 0);
}

int run_train(const TrainArgs& a) {
  net::TrainConfig cfg = a.config.empty() ? net::TrainConfig{} : net::parse_train_config(read_text(a.config));
  if (a.threads) cfg.threads = a.threads;
  const auto tr = read_records(a.train), va = read_records(a.val);
  auto res = net::train(tr, va, cfg, [](const net::EpochStats& s) {
    print_epoch(s);
    return true;
  });
  print_summary(res.history);
  net::save_checkpoint({cfg, res.params}, a.ckpt);
  return 0;
}

struct FinetuneArgs {
  std::string ckpt, train, val, out, config;
  std::size_t epochs = 10, threads = 0;
};

int run_finetune(const FinetuneArgs& a) {
  const auto ck = net::load_checkpoint(a.ckpt);
  net::TrainConfig cfg = a.config.empty() ? ck.config : net::parse_train_config(read_text(a.config));
  if (a.threads) cfg.threads = a.threads;
  const auto tr = read_records(a.train), va = read_records(a.val);
  auto res = net::finetune(ck.params, tr, va, cfg, a.epochs, [](const net::EpochStats& s) {
    print_epoch(s);
    return true;
  });
  print_summary(res.history);
  net::save_checkpoint({cfg, res.params}, a.out.empty() ? a.ckpt + ".ft" : a.out);
  return 0;
}

struct PredictArgs {
  std::string ckpt, in, out;
  std::size_t threads = 0;
};

int run_predict(const PredictArgs& a) {
  const auto ck = net::load_checkpoint(a.ckpt);
  const auto records = read_records(a.in);
  const auto scores = net::predict_scores(ck.params, records, net::resolve_threads(a.threads));
  write_text(a.out, scores_csv(records, scores));
  return 0;
}

struct EvalArgs {
  std::vector<std::string> scores;
  std::string out, method, split_id;
};

int run_eval(const EvalArgs& a) {
  std::vector<EvalReport> reports;
  for (const auto& path : a.scores) {
    const auto t = read_scores_csv(path);
    const std::string stem = fs::path(path).stem().string();
    reports.push_back(make_report(t.scores, t.labels, a.method.empty() ? stem : a.method,
                                  a.split_id.empty() ? stem : a.split_id));
  }
  const std::string text = to_text(reports);
  std::cout << text;
  write_text(a.out, text);
  write_text(a.out + ".json", to_json(reports).dump(2) + "\n");
  return 0;
}

struct SplitArgs {
  std::string mode = "grouped", in, out_prefix;
  std::uint64_t seed = 42;
  std::size_t folds = 5;
  double train_frac = 0.8;
};

std::vector<LOSRecord> pick(const std::vector<LOSRecord>& all, const std::vector<std::size_t>& idx) {
  std::vector<LOSRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

int run_split(const SplitArgs& a) {
  const auto records = read_records(a.in);
  if (a.mode == "grouped") {
    const auto s = grouped_split(records, a.train_frac, a.seed);
    write_records(pick(records, s.train), a.out_prefix + ".train.los");
    write_records(pick(records, s.test), a.out_prefix + ".test.los");
    std::printf("train=%zu test=%zu train_groups=%zu test_groups=%zu\n", s.train.size(), s.test.size(),
                s.train_groups.size(), s.test_groups.size());
  } else {
    const auto folds = kfold_splits(records.size(), a.folds, a.seed);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const std::string base = a.out_prefix + ".fold" + std::to_string(f);
      write_records(pick(records, folds[f].train), base + ".train.los");
      write_records(pick(records, folds[f].val), base + ".val.los");
      write_records(pick(records, folds[f].test), base + ".test.los");
      std::printf("fold=%zu train=%zu val=%zu test=%zu\n", f, folds[f].train.size(), folds[f].val.size(),
                  folds[f].test.size());
    }
  }
  return 0;
}

int run_gen_synth(const SynthConfig& cfg, const std::string& out) {
  write_records(gen_synthetic(cfg), out);
  return 0;
}

int run_inspect_mass(const std::string& in, const std::string& k_list) {
  const auto ks = parse_size_list(k_list);
  const auto records = read_records(in);
  if (records.empty()) throw DomainError("inspect-mass: no records");
  std::printf("k,captured_mass\n");
  for (auto k : ks) {
    double total = 0.0;
    bool capped = false;
    for (const auto& r : records) {
      const auto stripped = strip_padding(r);
      const auto cols = static_cast<Eigen::Index>(std::min<std::size_t>(k, stripped.k()));
      capped |= k > stripped.k();
      total += captured_mass(stripped.topk.leftCols(cols));
    }
    std::printf("%zu,%.8f\n", k, total / static_cast<double>(records.size()));
    if (capped) std::fprintf(stderr, "note: k=%zu exceeds the stored K of some records; their mass is capped\n", k);
  }
  return 0;
}

int run_validate(const std::string& in) {
  const auto records = read_records(in);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const auto& issue : validate(records[i])) {
      std::printf("record %zu: %s\n", i, issue.c_str());
      ++bad;
    }
  std::printf("%zu records, %zu issues\n", records.size(), bad);
  return bad == 0 ? 0 : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score, train and evaluate LLM output-signature detectors."};
  app.require_subcommand(1);
  std::function<int()> action;

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Score records with a heuristic baseline");
  score->add_option("--method", sa.method, "mean|min|max|loss|mink|minkpp")
      ->check(CLI::IsMember({"mean", "min", "max", "loss", "mink", "minkpp"}));
  score->add_option("--scale", sa.scale, "prob|log_prob|logit (mean/min/max only)")
      ->check(CLI::IsMember({"prob", "log_prob", "logit"}));
  score->add_option("--k-frac", sa.k_frac, "Min-K% percentage in (0,100]");
  score->add_option("--in", sa.in, "LOS file")->required();
  score->add_option("--out", sa.out, "Output CSV")->required();
  score->callback([&] { action = [&] { return run_score(sa); }; });

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a LOS-Net model");
  train->add_option("--config", ta.config, "key=value config file");
  train->add_option("--train", ta.train, "Training LOS file")->required();
  train->add_option("--val", ta.val, "Validation LOS file")->required();
  train->add_option("--ckpt", ta.ckpt, "Output checkpoint")->required();
  train->add_option("--threads", ta.threads, "Worker threads (default: LOS_THREADS or all cores)");
  train->callback([&] { action = [&] { return run_train(ta); }; });

  FinetuneArgs fa;
  auto* ft = app.add_subcommand("finetune", "Continue training a checkpoint on new data");
  ft->add_option("--ckpt", fa.ckpt, "Input checkpoint")->required();
  ft->add_option("--train", fa.train, "Training LOS file")->required();
  ft->add_option("--val", fa.val, "Validation LOS file")->required();
  ft->add_option("--epochs", fa.epochs, "Epochs (no early stopping)");
  ft->add_option("--out", fa.out, "Output checkpoint (default: <ckpt>.ft)");
  ft->add_option("--config", fa.config, "Override optimizer settings");
  ft->add_option("--threads", fa.threads, "Worker threads");
  ft->callback([&] { action = [&] { return run_finetune(fa); }; });

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Score records with a trained checkpoint");
  predict->add_option("--ckpt", pa.ckpt, "Checkpoint")->required();
  predict->add_option("--in", pa.in, "LOS file")->required();
  predict->add_option("--out", pa.out, "Output CSV")->required();
  predict->add_option("--threads", pa.threads, "Worker threads");
  predict->callback([&] { action = [&] { return run_predict(pa); }; });

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "AUC report from score CSVs (one run per file)");
  eval->add_option("--scores", ea.scores, "Score CSV (repeatable)")->required();
  eval->add_option("--out", ea.out, "Text report; JSON goes to <out>.json")->required();
  eval->add_option("--method", ea.method, "Method name (default: file stem)");
  eval->add_option("--split-id", ea.split_id, "Split id (default: file stem)");
  eval->callback([&] { action = [&] { return run_eval(ea); }; });

  SplitArgs spa;
  auto* split = app.add_subcommand("split", "Grouped train/test split or k-fold split");
  split->add_option("--mode", spa.mode, "grouped|kfold")->check(CLI::IsMember({"grouped", "kfold"}));
  split->add_option("--seed", spa.seed, "Shuffle seed");
  split->add_option("--in", spa.in, "LOS file")->required();
  split->add_option("--out-prefix", spa.out_prefix, "Prefix for the output LOS files")->required();
  split->add_option("--folds", spa.folds, "Number of folds (kfold)");
  split->add_option("--train-frac", spa.train_frac, "Train fraction of groups (grouped)");
  split->callback([&] { action = [&] { return run_split(spa); }; });

  SynthConfig sc;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic labeled LOS file");
  gen->add_option("--delta", sc.delta, "Class separation in [0,1]");
  gen->add_option("--seed", sc.seed, "Generator seed");
  gen->add_option("--out", synth_out, "Output LOS file")->required();
  gen->add_option("--n-per-class", sc.n_per_class, "Records per class");
  gen->add_option("--vocab", sc.vocab, "Vocabulary size");
  gen->add_option("--k", sc.k, "Top-K columns kept");
  gen->add_option("--seq-min", sc.seq_len_min, "Minimum sequence length");
  gen->add_option("--seq-max", sc.seq_len_max, "Maximum sequence length");
  gen->add_option("--groups-per-class", sc.groups_per_class, "Group ids per class (0 = none)");
  gen->callback([&] { action = [&] { return run_gen_synth(sc, synth_out); }; });

  std::string mass_in, k_list = "10,50,100,500,1000";
  auto* mass = app.add_subcommand("inspect-mass", "Mean captured probability mass for several K");
  mass->add_option("--in", mass_in, "LOS file")->required();
  mass->add_option("--k-list", k_list, "Comma-separated K values");
  mass->callback([&] { action = [&] { return run_inspect_mass(mass_in, k_list); }; });

  std::string validate_in;
  auto* val = app.add_subcommand("validate", "Check every record invariant");
  val->add_option("--in", validate_in, "LOS file")->required();
  val->callback([&] { action = [&] { return run_validate(validate_in); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "los: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "los: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "los: " << e.what() << '\n';
    return kExitData;
  }
}
