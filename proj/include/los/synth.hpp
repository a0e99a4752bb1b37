#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file synth.hpp
 * @brief Deterministic synthetic output signatures with a planted signal.
 *
 * Each row is a distribution whose leading level holds mass a = 0.1 + 0.85c
 * and whose remaining V-1 levels decay geometrically with ratio rho (20%
 * multiplicative jitter), scattered over the vocabulary by a random
 * permutation. With u ~ U[0,1], s = 1 + 0.5*delta and rho0 ~ U[0.6, 0.9]:
 *
 *   positives: c = u^(1/s),  rho = rho0
 *   negatives: c = u^s,      rho = rho0 + (0.97 - rho0) * 0.5 * delta
 *
 * The realized token is drawn from the row itself, except that with
 * probability 0.3*delta a negative realizes a uniform pick among sorted
 * levels 1..20. At delta = 0 both classes share one distribution, so labels
 * carry no signal; separation grows smoothly with delta and is noisy per
 * token, so sequence-level scores improve with length.
 *
 * Every record is generated from its own stream derived from (seed, index),
 * so output is reproducible and independent of generation order.
 */

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "los/core.hpp"

namespace los {

struct SynthConfig {
  std::size_t n_per_class = 500;
  std::size_t seq_len_min = 8;
  std::size_t seq_len_max = 32;
  std::size_t vocab = 200;
  std::size_t k = 50;
  double delta = 0.5;
  std::uint64_t seed = 0;
  /// 0 disables group ids; otherwise records of each class cycle through
  /// this many groups named "pos-<i>" / "neg-<i>".
  std::size_t groups_per_class = 0;

  std::size_t n_records() const { return 2 * n_per_class; }

  void check() const {
    if (n_per_class == 0) throw DomainError("synth: n_per_class must be >= 1");
    if (seq_len_min == 0 || seq_len_min > seq_len_max) throw DomainError("synth: bad seq_len range");
    if (vocab < 2) throw DomainError("synth: vocab must be >= 2");
    if (k == 0) throw DomainError("synth: k must be >= 1");
    if (!(delta >= 0.0 && delta <= 1.0)) throw DomainError("synth: delta must lie in [0,1]");
  }
};

struct SynthSample {
  RawTDS raw;
  std::uint8_t label = 0;
  std::optional<std::string> group_id;
};

namespace detail {

inline constexpr double kSkew = 0.5;       // confidence skew per unit delta
inline constexpr double kFlatten = 0.5;    // tail flattening of negatives
inline constexpr double kOffModel = 0.3;   // off-model emission rate of negatives

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace detail

/// Sample `index` of the stream; labels alternate starting with a positive.
inline SynthSample synth_sample(const SynthConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ detail::splitmix64(index + 0x51ed)));
  SynthSample s;
  s.label = (index % 2 == 0) ? 1 : 0;
  if (cfg.groups_per_class > 0)
    s.group_id = std::string(s.label ? "pos-" : "neg-") + std::to_string((index / 2) % cfg.groups_per_class);

  const std::size_t n = cfg.seq_len_min + detail::uniform_index(rng, cfg.seq_len_max - cfg.seq_len_min + 1);
  const std::size_t v = cfg.vocab;
  const double delta = cfg.delta;
  s.raw.probs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(v));
  s.raw.token_ids.resize(n);

  std::vector<double> level(v);
  std::vector<std::uint32_t> perm(v);
  const double skew = 1.0 + detail::kSkew * delta;
  for (std::size_t i = 0; i < n; ++i) {
    const double u1 = detail::uniform01(rng), u2 = detail::uniform01(rng);
    const double c = s.label ? std::pow(u1, 1.0 / skew) : std::pow(u1, skew);
    const double a = 0.1 + 0.85 * c;
    const double rho0 = 0.6 + 0.3 * u2;
    const double rho = s.label ? rho0 : rho0 + (0.97 - rho0) * detail::kFlatten * delta;

    level[0] = a;
    double tail = 0.0, w = 1.0;
    for (std::size_t j = 1; j < v; ++j) {
      level[j] = w * (1.0 + 0.2 * (detail::uniform01(rng) - 0.5));
      tail += level[j];
      w *= rho;
    }
    for (std::size_t j = 1; j < v; ++j) level[j] *= (1.0 - a) / tail;

    // Realized level: sampled from the row itself, except that negatives
    // sometimes emit an arbitrary mid-ranked token.
    std::size_t r = 0;
    if (!s.label && detail::uniform01(rng) < detail::kOffModel * delta) {
      r = 1 + detail::uniform_index(rng, std::min<std::size_t>(20, v - 1));
    } else {
      double u = detail::uniform01(rng), acc = 0.0;
      for (r = 0; r + 1 < v; ++r) {
        acc += level[r];
        if (u < acc) break;
      }
    }

    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t j = v; j-- > 1;) std::swap(perm[j], perm[detail::uniform_index(rng, j + 1)]);
    for (std::size_t j = 0; j < v; ++j)
      s.raw.probs(static_cast<Eigen::Index>(i), perm[j]) = static_cast<float>(level[j]);
    s.raw.token_ids[i] = perm[r];
  }
  return s;
}

inline LOSRecord synth_record(const SynthConfig& cfg, std::size_t index) {
  SynthSample s = synth_sample(cfg, index);
  LOSRecord rec = build_record(s.raw, cfg.k);
  rec.label = s.label;
  rec.group_id = std::move(s.group_id);
  rec.meta["dataset"] = "synthetic";
  rec.meta["kind"] = "input";
  return rec;
}

inline std::vector<LOSRecord> gen_synthetic(const SynthConfig& cfg) {
  cfg.check();
  std::vector<LOSRecord> out;
  out.reserve(cfg.n_records());
  for (std::size_t i = 0; i < cfg.n_records(); ++i) out.push_back(synth_record(cfg, i));
  return out;
}

}  // namespace los
