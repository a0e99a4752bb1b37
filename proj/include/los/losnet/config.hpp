#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include "los/error.hpp"

namespace los::net {

enum class ModelKind { losnet, atp_r_transformer, atp_r_mlp };
enum class RankMode { scaled, lookup };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::losnet: return "losnet";
    case ModelKind::atp_r_transformer: return "atp_r_transformer";
    case ModelKind::atp_r_mlp: return "atp_r_mlp";
  }
  return "?";
}

inline const char* to_string(RankMode m) { return m == RankMode::scaled ? "scaled" : "lookup"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "losnet") return ModelKind::losnet;
  if (s == "atp_r_transformer") return ModelKind::atp_r_transformer;
  if (s == "atp_r_mlp") return ModelKind::atp_r_mlp;
  throw DomainError("unknown model_kind '" + s + "'");
}

inline RankMode parse_rank_mode(const std::string& s) {
  if (s == "scaled") return RankMode::scaled;
  if (s == "lookup") return RankMode::lookup;
  throw DomainError("unknown rank_mode '" + s + "'");
}

/// Shapes of every tensor. D = emb_size; the LOS-Net kind splits D into a
/// projection branch of width D - rank_dim and a rank-encoding branch of
/// width rank_dim; the ATP-only kinds use the full D for rank encoding.
struct Architecture {
  ModelKind kind = ModelKind::losnet;
  RankMode rank_mode = RankMode::scaled;
  std::size_t k = 50;
  std::size_t emb_size = 128;
  std::size_t rank_dim = 32;
  std::size_t heads = 8;
  std::size_t layers = 1;
  std::size_t ff_dim = 512;
  std::size_t n_max = 256;
  std::size_t rank_max = 100;

  bool uses_transformer() const { return kind != ModelKind::atp_r_mlp; }
  bool uses_topk() const { return kind == ModelKind::losnet; }
  std::size_t proj_dim() const { return uses_topk() ? emb_size - rank_dim : 0; }

  void check() const {
    if (emb_size == 0 || layers == 0 || n_max == 0) throw DomainError("architecture: zero dimension");
    if (uses_topk() && (k == 0 || rank_dim == 0 || rank_dim >= emb_size))
      throw DomainError("architecture: losnet needs k >= 1 and 0 < rank_dim < emb_size");
    if (!uses_topk() && rank_dim != emb_size)
      throw DomainError("architecture: ATP-only kinds need rank_dim == emb_size");
    if (uses_transformer() && (heads == 0 || emb_size % heads != 0))
      throw DomainError("architecture: heads must divide emb_size");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainConfig {
  std::size_t num_layers = 1;
  double learning_rate = 1e-4;
  std::size_t emb_size = 128;
  std::size_t epochs = 300;
  double dropout = 0.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  std::size_t heads = 8;
  double warmup_frac = 0.10;
  std::size_t patience = 30;
  std::uint64_t seed = 0;
  ModelKind model_kind = ModelKind::losnet;
  RankMode rank_mode = RankMode::scaled;
  std::size_t n_max = 256;
  std::size_t rank_max = 100;
  std::size_t ff_mult = 4;
  bool early_stopping = true;
  std::size_t max_params = 2'000'000;
  /// 0 = take LOS_THREADS from the environment, else hardware concurrency.
  std::size_t threads = 0;

  Architecture architecture(std::size_t k) const {
    Architecture a;
    a.kind = model_kind;
    a.rank_mode = rank_mode;
    a.k = model_kind == ModelKind::losnet ? k : 0;
    a.emb_size = emb_size;
    a.rank_dim = model_kind == ModelKind::losnet ? emb_size / 4 : emb_size;
    a.heads = heads;
    a.layers = num_layers;
    a.ff_dim = ff_mult * emb_size;
    a.n_max = n_max;
    a.rank_max = rank_max;
    a.check();
    return a;
  }

  void check() const {
    if (batch_size == 0) throw DomainError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw DomainError("learning_rate must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be >= 0");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw DomainError("warmup_frac must lie in [0,1]");
  }
};

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LOS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// One `key=value` per line; '#' starts a comment. Unknown keys are errors.
inline TrainConfig parse_train_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DomainError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "num_layers") cfg.num_layers = std::stoul(val);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
      else if (key == "emb_size") cfg.emb_size = std::stoul(val);
      else if (key == "epochs") cfg.epochs = std::stoul(val);
      else if (key == "dropout") cfg.dropout = std::stod(val);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
      else if (key == "batch_size") cfg.batch_size = std::stoul(val);
      else if (key == "heads") cfg.heads = std::stoul(val);
      else if (key == "warmup_frac") cfg.warmup_frac = std::stod(val);
      else if (key == "patience") cfg.patience = std::stoul(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "model_kind") cfg.model_kind = parse_model_kind(val);
      else if (key == "rank_mode") cfg.rank_mode = parse_rank_mode(val);
      else if (key == "n_max") cfg.n_max = std::stoul(val);
      else if (key == "rank_max") cfg.rank_max = std::stoul(val);
      else if (key == "ff_mult") cfg.ff_mult = std::stoul(val);
      else if (key == "early_stopping") cfg.early_stopping = (val == "1" || val == "true");
      else if (key == "max_params") cfg.max_params = std::stoul(val);
      else if (key == "threads") cfg.threads = std::stoul(val);
      else throw DomainError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const DomainError*>(&e)) throw;
      throw DomainError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  cfg.check();
  return cfg;
}

inline std::string to_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "num_layers=" << c.num_layers << '\n'
     << "learning_rate=" << c.learning_rate << '\n'
     << "emb_size=" << c.emb_size << '\n'
     << "epochs=" << c.epochs << '\n'
     << "dropout=" << c.dropout << '\n'
     << "weight_decay=" << c.weight_decay << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "heads=" << c.heads << '\n'
     << "warmup_frac=" << c.warmup_frac << '\n'
     << "patience=" << c.patience << '\n'
     << "seed=" << c.seed << '\n'
     << "model_kind=" << to_string(c.model_kind) << '\n'
     << "rank_mode=" << to_string(c.rank_mode) << '\n'
     << "n_max=" << c.n_max << '\n'
     << "rank_max=" << c.rank_max << '\n'
     << "ff_mult=" << c.ff_mult << '\n'
     << "early_stopping=" << (c.early_stopping ? 1 : 0) << '\n'
     << "max_params=" << c.max_params << '\n';
  return os.str();
}

}  // namespace los::net
