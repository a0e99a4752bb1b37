#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file gsf.hpp
 * @brief Gated scoring functions and the heuristic gray-box baselines.
 *
 * A gated scoring function is a triple (kappa, T, g) over a record:
 *
 *     R = sum_i g_i * [kappa_i >= T]
 *
 * kappa assigns a per-token confidence, T an (adaptive) scalar threshold and
 * g a per-token weight. The make_*_spec() factories build the triples that
 * reproduce each direct scorer below; gsf_apply() evaluates any triple.
 *
 * All scores are raw with "higher = positive class"; nothing is thresholded.
 */

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "los/core.hpp"

namespace los {

enum class Scale { prob, log_prob, logit };
enum class Reduce { mean, min, max };
enum class Method { mean, min, max, loss, mink, minkpp };

struct GSFConfig {
  double k_frac = 20.0;  // percent, in (0, 100]
  double eps_floor = kDefaultEpsFloor;
  double eps_sigma = 1e-8;
  Scale scale = Scale::prob;

  void check() const {
    if (!(k_frac > 0.0 && k_frac <= 100.0)) throw DomainError("k_frac must lie in (0, 100]");
    if (!(eps_floor > 0.0 && eps_floor < 0.5)) throw DomainError("eps_floor must lie in (0, 0.5)");
    if (!(eps_sigma > 0.0)) throw DomainError("eps_sigma must be positive");
  }
};

/// kappa, T and g all see the record with padding already stripped.
struct GSFSpec {
  std::function<std::vector<double>(const LOSRecord&)> kappa;
  std::function<double(const LOSRecord&)> threshold;
  std::function<std::vector<double>(const LOSRecord&)> weight;
};

namespace detail {

inline std::vector<double> valid_atp(std::span<const float> atp) {
  std::vector<double> out;
  out.reserve(atp.size());
  for (float x : atp) {
    if (x < 0.0f) break;
    out.push_back(x);
  }
  return out;
}

inline double apply_scale(double p, Scale s, double eps) {
  switch (s) {
    case Scale::prob: return p;
    case Scale::log_prob: return std::log(std::max(p, eps));
    case Scale::logit: {
      const double x = std::clamp(p, eps, 1.0 - eps);
      return std::log(x / (1.0 - x));
    }
  }
  return p;
}

inline std::size_t mink_count(double k_frac, std::size_t n) {
  const auto m = static_cast<std::size_t>(std::ceil(k_frac / 100.0 * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, n);
}

/// m-th smallest (1-based) value, selecting by ascending sort with index tie-break.
inline double mth_smallest(std::vector<double> v, std::size_t m) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m - 1), v.end());
  return v[m - 1];
}

inline double mean_of_smallest(const std::vector<double>& v, std::size_t m) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  // Sum the selection in sequence order so m == n reproduces a plain mean bit for bit.
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) s += v[idx[j]];
  return s / static_cast<double>(m);
}

inline void require_finite(const std::vector<double>& v, const char* name) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw DomainError(std::string("gsf: non-finite ") + name + " at position " + std::to_string(i));
}

}  // namespace detail

inline double gsf_apply(const GSFSpec& spec, const LOSRecord& record) {
  const LOSRecord r = strip_padding(record);
  if (r.seq_len() == 0) throw DomainError("gsf_apply: record has no valid positions");
  const auto kappa = spec.kappa(r);
  const double t = spec.threshold(r);
  const auto g = spec.weight(r);
  if (kappa.size() != r.seq_len() || g.size() != r.seq_len())
    throw DomainError("gsf_apply: kappa/weight length does not match sequence length");
  detail::require_finite(kappa, "kappa");
  if (!std::isfinite(t)) throw DomainError("gsf: non-finite threshold");
  detail::require_finite(g, "weight");
  double score = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (kappa[i] >= t) score += g[i];
  return score;
}

// ---------------------------------------------------------------------------
// Direct scorers
// ---------------------------------------------------------------------------

inline double aggregate_score(std::span<const float> atp, Reduce mode, Scale scale,
                              double eps_floor = kDefaultEpsFloor) {
  const auto p = detail::valid_atp(atp);
  if (p.empty()) throw DomainError("aggregate_score: empty probability vector");
  std::vector<double> s(p.size());
  std::transform(p.begin(), p.end(), s.begin(),
                 [&](double x) { return detail::apply_scale(x, scale, eps_floor); });
  switch (mode) {
    case Reduce::mean: return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    case Reduce::min: return *std::min_element(s.begin(), s.end());
    case Reduce::max: return *std::max_element(s.begin(), s.end());
  }
  return 0.0;
}

/// Negated mean cross-entropy of the realized tokens.
inline double loss_score(std::span<const float> atp, const GSFConfig& cfg = {}) {
  const auto p = detail::valid_atp(atp);
  if (p.empty()) throw DomainError("loss_score: empty probability vector");
  double s = 0.0;
  for (double x : p) s += std::log(std::max(x, cfg.eps_floor));
  return s / static_cast<double>(p.size());
}

/// Mean log-probability of the ceil(k_frac% * N) least likely realized tokens.
inline double mink_score(std::span<const float> atp, const GSFConfig& cfg = {}) {
  cfg.check();
  const auto p = detail::valid_atp(atp);
  if (p.empty()) throw DomainError("mink_score: empty probability vector");
  std::vector<double> logp(p.size());
  std::transform(p.begin(), p.end(), logp.begin(),
                 [&](double x) { return std::log(std::max(x, cfg.eps_floor)); });
  return detail::mean_of_smallest(logp, detail::mink_count(cfg.k_frac, p.size()));
}

inline std::pair<double, double> token_stats(std::span<const float> row, const GSFConfig& cfg) {
  return token_stats(row, cfg.eps_floor);
}

/// Per-token calibrated log-likelihoods (log p - mu) / (sigma + eps_sigma).
/// Uses stored mu/sigma when present, else recomputes them from the
/// truncated topk rows (an approximation; see minkpp_is_exact()).
inline std::vector<double> minkpp_normalized(const LOSRecord& record, const GSFConfig& cfg) {
  const LOSRecord r = strip_padding(record);
  const std::size_t n = r.seq_len();
  if (n == 0) throw DomainError("minkpp: record has no valid positions");
  if (!r.has_stats() && r.topk.cols() == 0)
    throw DomainError("minkpp: record has neither mu/sigma nor topk rows");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu, sigma;
    if (r.has_stats()) {
      mu = (*r.mu)[i];
      sigma = (*r.sigma)[i];
    } else {
      const auto row = r.topk.row(static_cast<Eigen::Index>(i));
      std::tie(mu, sigma) = token_stats(std::span<const float>(row.data(), row.size()), cfg.eps_floor);
    }
    out[i] = (std::log(std::max<double>(r.atp[i], cfg.eps_floor)) - mu) / (sigma + cfg.eps_sigma);
  }
  return out;
}

inline bool minkpp_is_exact(const LOSRecord& record) { return record.has_stats(); }

inline double minkpp_score(const LOSRecord& record, const GSFConfig& cfg = {}) {
  cfg.check();
  const auto pbar = minkpp_normalized(record, cfg);
  return detail::mean_of_smallest(pbar, detail::mink_count(cfg.k_frac, pbar.size()));
}

inline double score_record(const LOSRecord& record, Method method, const GSFConfig& cfg) {
  switch (method) {
    case Method::mean: return aggregate_score(record.atp, Reduce::mean, cfg.scale, cfg.eps_floor);
    case Method::min: return aggregate_score(record.atp, Reduce::min, cfg.scale, cfg.eps_floor);
    case Method::max: return aggregate_score(record.atp, Reduce::max, cfg.scale, cfg.eps_floor);
    case Method::loss: return loss_score(record.atp, cfg);
    case Method::mink: return mink_score(record.atp, cfg);
    case Method::minkpp: return minkpp_score(record, cfg);
  }
  throw DomainError("unknown scoring method");
}

// ---------------------------------------------------------------------------
// GSF constructions reproducing each scorer. With ties in the gated quantity
// exactly at the threshold, the min / Min-K% / Min-K%++ constructions admit
// every tied token and can exceed the sort-based scorers.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> scaled_atp(const LOSRecord& r, Scale s, double eps) {
  std::vector<double> out(r.seq_len());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_scale(r.atp[i], s, eps);
  return out;
}

inline std::vector<double> negated(std::vector<double> v) {
  for (double& x : v) x = -x;
  return v;
}

inline GSFSpec ungated(std::function<std::vector<double>(const LOSRecord&)> weight) {
  return {[](const LOSRecord& r) { return std::vector<double>(r.seq_len(), 1.0); },
          [](const LOSRecord&) { return 0.0; }, std::move(weight)};
}

/// Gate on the m smallest values of `values(r)`, weight each by value/m.
inline GSFSpec bottom_fraction(double k_frac, std::function<std::vector<double>(const LOSRecord&)> gate,
                               std::function<std::vector<double>(const LOSRecord&)> weight) {
  return {[gate](const LOSRecord& r) { return negated(gate(r)); },
          [gate, k_frac](const LOSRecord& r) {
            return -mth_smallest(gate(r), mink_count(k_frac, r.seq_len()));
          },
          [weight, k_frac](const LOSRecord& r) {
            auto w = weight(r);
            const double m = static_cast<double>(mink_count(k_frac, r.seq_len()));
            for (double& x : w) x /= m;
            return w;
          }};
}

}  // namespace detail

inline GSFSpec make_mean_spec(Scale scale, double eps_floor = kDefaultEpsFloor) {
  return detail::ungated([=](const LOSRecord& r) {
    auto g = detail::scaled_atp(r, scale, eps_floor);
    for (double& x : g) x /= static_cast<double>(r.seq_len());
    return g;
  });
}

inline GSFSpec make_min_spec(Scale scale, double eps_floor = kDefaultEpsFloor) {
  auto s = [=](const LOSRecord& r) { return detail::scaled_atp(r, scale, eps_floor); };
  return {[s](const LOSRecord& r) { return detail::negated(s(r)); },
          [s](const LOSRecord& r) {
            const auto v = s(r);
            return -*std::min_element(v.begin(), v.end());
          },
          s};
}

inline GSFSpec make_max_spec(Scale scale, double eps_floor = kDefaultEpsFloor) {
  auto s = [=](const LOSRecord& r) { return detail::scaled_atp(r, scale, eps_floor); };
  return {s,
          [s](const LOSRecord& r) {
            const auto v = s(r);
            return *std::max_element(v.begin(), v.end());
          },
          s};
}

inline GSFSpec make_loss_spec(const GSFConfig& cfg = {}) {
  const double eps = cfg.eps_floor;
  return detail::ungated([eps](const LOSRecord& r) {
    auto g = detail::scaled_atp(r, Scale::log_prob, eps);
    for (double& x : g) x /= static_cast<double>(r.seq_len());
    return g;
  });
}

inline GSFSpec make_mink_spec(const GSFConfig& cfg = {}) {
  cfg.check();
  const double eps = cfg.eps_floor;
  return detail::bottom_fraction(
      cfg.k_frac, [](const LOSRecord& r) { return detail::scaled_atp(r, Scale::prob, 0.0); },
      [eps](const LOSRecord& r) { return detail::scaled_atp(r, Scale::log_prob, eps); });
}

inline GSFSpec make_minkpp_spec(const GSFConfig& cfg = {}) {
  cfg.check();
  auto pbar = [cfg](const LOSRecord& r) { return minkpp_normalized(r, cfg); };
  return detail::bottom_fraction(cfg.k_frac, pbar, pbar);
}

inline GSFSpec make_spec(Method method, const GSFConfig& cfg) {
  switch (method) {
    case Method::mean: return make_mean_spec(cfg.scale, cfg.eps_floor);
    case Method::min: return make_min_spec(cfg.scale, cfg.eps_floor);
    case Method::max: return make_max_spec(cfg.scale, cfg.eps_floor);
    case Method::loss: return make_loss_spec(cfg);
    case Method::mink: return make_mink_spec(cfg);
    case Method::minkpp: return make_minkpp_spec(cfg);
  }
  throw DomainError("unknown scoring method");
}

inline const char* to_string(Method m) {
  switch (m) {
    case Method::mean: return "mean";
    case Method::min: return "min";
    case Method::max: return "max";
    case Method::loss: return "loss";
    case Method::mink: return "mink";
    case Method::minkpp: return "minkpp";
  }
  return "?";
}

inline const char* to_string(Scale s) {
  switch (s) {
    case Scale::prob: return "prob";
    case Scale::log_prob: return "log_prob";
    case Scale::logit: return "logit";
  }
  return "?";
}

}  // namespace los
