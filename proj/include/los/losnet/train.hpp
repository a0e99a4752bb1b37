#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file train.hpp
 * @brief Mini-batch AdamW training with validation-AUC model selection.
 *
 * Each epoch shuffles the training set with a stream derived from
 * (seed, epoch), takes one optimizer step per batch and then scores the
 * validation set. The parameters with the highest validation AUC are kept;
 * the starting parameters are scored first and compete as well.
 */

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "los/eval.hpp"
#include "los/losnet/config.hpp"
#include "los/losnet/model.hpp"
#include "los/losnet/optim.hpp"
#include "los/losnet/params.hpp"
#include "los/synth.hpp"

namespace los::net {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;  // learning rate of the last update in the epoch
};

struct TrainHistory {
  double initial_val_auc = 0.0;
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 0 = starting parameters
  double best_val_auc = 0.0;
  bool early_stopped = false;
};

struct TrainResult {
  ModelParams<float> params;
  TrainHistory history;
};

/// Called after every epoch; returning false ends training.
using EpochCallback = std::function<bool(const EpochStats&)>;

namespace detail {

inline std::size_t common_k(std::span<const LOSRecord> a, std::span<const LOSRecord> b) {
  if (a.empty() || b.empty()) throw DomainError("train: train and validation sets must be non-empty");
  const std::size_t k = a.front().k();
  for (auto set : {a, b})
    for (const auto& r : set)
      if (r.k() != k) throw DomainError("train: records disagree on K");
  return k;
}

inline void require_both_classes(std::span<const LOSRecord> records, const char* what) {
  bool pos = false, neg = false;
  for (const auto& r : records) {
    if (!r.label) throw DomainError(std::string(what) + ": unlabeled record");
    (*r.label ? pos : neg) = true;
  }
  if (!pos || !neg) throw DomainError(std::string(what) + ": labels contain a single class");
}

inline double val_auc(const ModelParams<float>& p, std::span<const LOSRecord> val, std::size_t threads) {
  // Logits rather than probabilities: sigmoid saturation would create ties.
  const auto s = predict_logits(p, val, threads);
  const auto y = labels_of(val);
  return auc(std::span<const double>(s), std::span<const std::uint8_t>(y));
}

inline TrainResult fit(ModelParams<float> params, std::span<const LOSRecord> train_set,
                       std::span<const LOSRecord> val_set, const TrainConfig& cfg, std::size_t epochs,
                       bool early_stopping, const EpochCallback& on_epoch) {
  cfg.check();
  require_both_classes(train_set, "train");
  require_both_classes(val_set, "validation");
  const std::size_t threads = resolve_threads(cfg.threads);

  TrainResult out{params, {}};
  auto& h = out.history;
  h.initial_val_auc = val_auc(params, val_set, threads);
  h.best_val_auc = h.initial_val_auc;
  if (epochs == 0) return out;

  const std::size_t n = train_set.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const LinearSchedule sched(per_epoch * epochs, cfg.warmup_frac);
  AdamW<float> opt(params, cfg.weight_decay);

  std::vector<std::size_t> order(n);
  std::vector<const LOSRecord*> batch;
  std::size_t step = 0, since_best = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(los::detail::splitmix64(cfg.seed ^ los::detail::splitmix64(epoch)));
    for (std::size_t j = n; j-- > 1;) std::swap(order[j], order[los::detail::uniform_index(rng, j + 1)]);

    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t e = std::min(n, b + cfg.batch_size);
      batch.clear();
      for (std::size_t i = b; i < e; ++i) batch.push_back(&train_set[order[i]]);
      GradOptions go;
      go.dropout = cfg.dropout;
      go.dropout_seed = los::detail::splitmix64(cfg.seed + 0x5eed) ^ step;
      go.threads = threads;
      auto lg = loss_and_grad(params, std::span<const LOSRecord* const>(batch), go);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(e - b);
      lr = cfg.learning_rate * sched.factor(step);
      opt.step(params, lg.grad, lr);
      ++step;
    }
    if (!params.all_finite()) throw DomainError("train: parameters became non-finite at epoch " + std::to_string(epoch));

    EpochStats st{epoch, loss_sum / static_cast<double>(n), val_auc(params, val_set, threads), lr};
    h.epochs.push_back(st);
    if (st.val_auc > h.best_val_auc) {
      h.best_val_auc = st.val_auc;
      h.best_epoch = epoch;
      out.params = params;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (on_epoch && !on_epoch(st)) break;
    if (early_stopping && since_best >= cfg.patience) {
      h.early_stopped = true;
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Trains a fresh model initialised from cfg.seed.
inline TrainResult train(std::span<const LOSRecord> train_set, std::span<const LOSRecord> val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  const std::size_t k = detail::common_k(train_set, val_set);
  const Architecture arch = cfg.architecture(k);
  auto params = init_params<float>(arch, cfg.seed, cfg.max_params);
  return detail::fit(std::move(params), train_set, val_set, cfg, cfg.epochs, cfg.early_stopping, on_epoch);
}

/// Continues training from `params` for `epochs` epochs without early
/// stopping. Architecture comes from the checkpoint; cfg supplies the
/// optimizer settings.
inline TrainResult finetune(const ModelParams<float>& params, std::span<const LOSRecord> train_set,
                            std::span<const LOSRecord> val_set, const TrainConfig& cfg, std::size_t epochs = 10,
                            const EpochCallback& on_epoch = {}) {
  const std::size_t k = detail::common_k(train_set, val_set);
  if (params.arch.uses_topk() && params.arch.k != k)
    throw DomainError("finetune: data has K=" + std::to_string(k) + " but the model expects K=" +
                      std::to_string(params.arch.k));
  return detail::fit(params, train_set, val_set, cfg, epochs, false, on_epoch);
}

}  // namespace los::net
