#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file core.hpp
 * @brief LLM Output Signature records and the preprocessing that builds them.
 *
 * A raw token distribution sequence (N rows over a vocabulary of V entries,
 * plus the id of the token that actually followed at each step) is reduced to
 * a vocabulary-independent record:
 *
 *   - topk   N x K, each row the K largest probabilities in descending order
 *   - atp    N     probability of the realized token
 *   - ranks  N     number of vocabulary entries strictly more likely than it
 *   - mu/sigma N   mean and std of the log-likelihood under the full row
 *
 * Per-token arrays padded past the real sequence length hold the sentinel -1
 * (ranks hold its u32 image). Validity masks are never stored; a position is
 * real iff its atp entry is >= 0.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "los/error.hpp"

namespace los {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr float kPadValue = -1.0f;
inline constexpr std::uint32_t kRankPad = 0xFFFFFFFFu;

/// Default log-of-zero floor used wherever a probability enters a logarithm.
inline constexpr double kDefaultEpsFloor = 1e-12;

/// Reserved meta keys.
inline constexpr const char* kMetaVocabSize = "vocab_size";
inline constexpr const char* kMetaGroupId = "group_id";

/// Full next-token distributions for one sequence plus the realized token ids.
struct RawTDS {
  RowMatrixF probs;                      // N x V
  std::vector<std::uint32_t> token_ids;  // N

  std::size_t seq_len() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t vocab_size() const { return static_cast<std::size_t>(probs.cols()); }
};

/// One sequence's output signature, ready for scoring or for the model.
struct LOSRecord {
  RowMatrixF topk;
  std::vector<float> atp;
  std::optional<std::vector<std::uint32_t>> ranks;
  std::optional<std::vector<float>> mu;
  std::optional<std::vector<float>> sigma;
  std::optional<std::uint8_t> label;
  std::optional<std::string> group_id;
  std::map<std::string, std::string> meta;

  std::size_t seq_len() const { return atp.size(); }
  std::size_t k() const { return static_cast<std::size_t>(topk.cols()); }
  bool has_stats() const { return mu.has_value() && sigma.has_value(); }

  /// Number of leading positions carrying real data (atp >= 0).
  std::size_t valid_len() const {
    std::size_t n = 0;
    while (n < atp.size() && atp[n] >= 0.0f) ++n;
    return n;
  }

  std::optional<std::size_t> vocab_size() const {
    auto it = meta.find(kMetaVocabSize);
    if (it == meta.end()) return std::nullopt;
    try {
      return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  friend bool operator==(const LOSRecord& a, const LOSRecord& b) {
    return a.topk.rows() == b.topk.rows() && a.topk.cols() == b.topk.cols() &&
           std::equal(a.topk.data(), a.topk.data() + a.topk.size(), b.topk.data()) &&
           a.atp == b.atp && a.ranks == b.ranks && a.mu == b.mu && a.sigma == b.sigma &&
           a.label == b.label && a.group_id == b.group_id && a.meta == b.meta;
  }
};

namespace detail {

inline void check_non_empty(const RawTDS& raw) {
  if (raw.seq_len() == 0 || raw.vocab_size() == 0)
    throw DomainError("empty token distribution sequence");
}

inline void check_token_ids(const RawTDS& raw) {
  if (raw.token_ids.size() != raw.seq_len())
    throw DomainError("token_ids length " + std::to_string(raw.token_ids.size()) +
                      " does not match sequence length " + std::to_string(raw.seq_len()));
  for (std::size_t i = 0; i < raw.token_ids.size(); ++i)
    if (raw.token_ids[i] >= raw.vocab_size())
      throw DomainError("token id " + std::to_string(raw.token_ids[i]) + " at step " +
                        std::to_string(i) + " out of range for vocabulary of " +
                        std::to_string(raw.vocab_size()));
}

}  // namespace detail

/// Row-sorts the distributions and keeps the first k columns. Ties are broken
/// by column index. If k exceeds the vocabulary, rows are right-padded with -1.
inline RowMatrixF topk_sort(const RawTDS& raw, std::size_t k) {
  detail::check_non_empty(raw);
  if (k == 0) throw DomainError("k must be >= 1");
  const std::size_t n = raw.seq_len(), v = raw.vocab_size();
  const std::size_t take = std::min(k, v);
  RowMatrixF out(n, k);
  out.setConstant(kPadValue);
  std::vector<std::uint32_t> idx(v);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = raw.probs.row(i).data();
    std::iota(idx.begin(), idx.end(), 0u);
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                      [row](std::uint32_t a, std::uint32_t b) {
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    for (std::size_t j = 0; j < take; ++j) out(i, j) = row[idx[j]];
  }
  return out;
}

/// r_i = #{v : X[i,v] > p_i}. Ties with the realized token do not count.
inline std::vector<std::uint32_t> compute_ranks(const RawTDS& raw) {
  detail::check_non_empty(raw);
  detail::check_token_ids(raw);
  std::vector<std::uint32_t> ranks(raw.seq_len());
  for (std::size_t i = 0; i < raw.seq_len(); ++i) {
    const auto row = raw.probs.row(i);
    const float p = row(raw.token_ids[i]);
    ranks[i] = static_cast<std::uint32_t>((row.array() > p).count());
  }
  return ranks;
}

inline std::vector<float> extract_atp(const RawTDS& raw) {
  detail::check_non_empty(raw);
  detail::check_token_ids(raw);
  std::vector<float> atp(raw.seq_len());
  for (std::size_t i = 0; i < raw.seq_len(); ++i) atp[i] = raw.probs(i, raw.token_ids[i]);
  return atp;
}

/// Mean retained probability mass per row. Rows that are entirely padding
/// are not counted; -1 entries inside a row are skipped.
inline double captured_mass(const RowMatrixF& topk) {
  double total = 0.0;
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < topk.rows(); ++i) {
    double row_sum = 0.0;
    bool any = false;
    for (Eigen::Index j = 0; j < topk.cols(); ++j) {
      const float x = topk(i, j);
      if (x < 0.0f) continue;
      row_sum += x;
      any = true;
    }
    if (!any) continue;
    total += row_sum;
    ++rows;
  }
  if (rows == 0) throw DomainError("captured_mass: no rows");
  return total / static_cast<double>(rows);
}

/// Mean and standard deviation of log X under X itself, over the entries of
/// one (possibly truncated) row. Negative (padding) entries are skipped and
/// probabilities are floored at eps inside the logarithm.
inline std::pair<double, double> token_stats(std::span<const float> row,
                                             double eps_floor = kDefaultEpsFloor) {
  double mu = 0.0;
  for (float x : row) {
    if (x < 0.0f) continue;
    mu += x * std::log(std::max<double>(x, eps_floor));
  }
  double var = 0.0;
  for (float x : row) {
    if (x < 0.0f) continue;
    const double d = std::log(std::max<double>(x, eps_floor)) - mu;
    var += x * d * d;
  }
  return {mu, std::sqrt(var)};
}

/// Returns a copy truncated or padded to exactly n_max positions.
inline LOSRecord pad_to(const LOSRecord& record, std::size_t n_max) {
  if (n_max == 0) throw DomainError("pad_to: n_max must be >= 1");
  LOSRecord out = record;
  const std::size_t n = record.seq_len();
  const auto k = record.topk.cols();
  if (n == n_max) return out;

  const std::size_t keep = std::min(n, n_max);
  out.topk.resize(static_cast<Eigen::Index>(n_max), k);
  out.topk.setConstant(kPadValue);
  out.topk.topRows(static_cast<Eigen::Index>(keep)) =
      record.topk.topRows(static_cast<Eigen::Index>(keep));

  auto fit = [&](auto& vec, auto pad) {
    vec.resize(n_max, pad);
  };
  fit(out.atp, kPadValue);
  if (out.ranks) fit(*out.ranks, kRankPad);
  if (out.mu) fit(*out.mu, kPadValue);
  if (out.sigma) fit(*out.sigma, kPadValue);
  return out;
}

/// Drops padded positions (atp < 0) from the tail.
inline LOSRecord strip_padding(const LOSRecord& record) {
  const std::size_t n = record.valid_len();
  if (n == record.seq_len()) return record;
  LOSRecord out = record;
  out.topk = record.topk.topRows(static_cast<Eigen::Index>(n));
  out.atp.resize(n);
  if (out.ranks) out.ranks->resize(n);
  if (out.mu) out.mu->resize(n);
  if (out.sigma) out.sigma->resize(n);
  return out;
}

struct BuildOptions {
  double eps_floor = kDefaultEpsFloor;
  bool with_stats = true;
  bool with_ranks = true;
  /// Tolerance on each row's total mass.
  double row_sum_tol = 1e-4;
};

/// Full preprocessing of a raw sequence into a record with K columns.
/// mu/sigma are computed over the full (untruncated) row, summed in sorted
/// order so the result does not depend on vocabulary order.
inline LOSRecord build_record(const RawTDS& raw, std::size_t k, const BuildOptions& opt = {}) {
  detail::check_non_empty(raw);
  detail::check_token_ids(raw);
  if (k == 0) throw DomainError("k must be >= 1");
  const std::size_t n = raw.seq_len(), v = raw.vocab_size();

  LOSRecord rec;
  rec.topk.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  rec.topk.setConstant(kPadValue);
  rec.atp = extract_atp(raw);
  if (opt.with_ranks) rec.ranks = compute_ranks(raw);
  if (opt.with_stats) {
    rec.mu.emplace(n);
    rec.sigma.emplace(n);
  }
  std::vector<float> sorted(v);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = raw.probs.row(static_cast<Eigen::Index>(i));
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const float x = row(static_cast<Eigen::Index>(j));
      if (!(x >= 0.0f)) throw DomainError("negative or NaN probability at step " + std::to_string(i));
      sum += x;
      sorted[j] = x;
    }
    if (std::abs(sum - 1.0) > opt.row_sum_tol)
      throw DomainError("row " + std::to_string(i) + " sums to " + std::to_string(sum));
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    for (std::size_t j = 0; j < std::min(k, v); ++j) rec.topk(i, j) = sorted[j];
    if (opt.with_stats) {
      auto [mu, sigma] = token_stats(sorted, opt.eps_floor);
      (*rec.mu)[i] = static_cast<float>(mu);
      (*rec.sigma)[i] = static_cast<float>(sigma);
    }
  }
  rec.meta[kMetaVocabSize] = std::to_string(v);
  return rec;
}

/// Checks every record invariant; returns human-readable violations (empty if valid).
inline std::vector<std::string> validate(const LOSRecord& r) {
  std::vector<std::string> issues;
  auto fail = [&](std::string msg) { issues.push_back(std::move(msg)); };
  const std::size_t n = r.seq_len();
  if (n == 0) fail("empty sequence");
  if (static_cast<std::size_t>(r.topk.rows()) != n)
    fail("topk has " + std::to_string(r.topk.rows()) + " rows, expected " + std::to_string(n));
  if (r.topk.cols() == 0) fail("topk has zero columns");
  if (r.ranks && r.ranks->size() != n) fail("ranks length mismatch");
  if (r.mu.has_value() != r.sigma.has_value()) fail("mu and sigma must be present together");
  if (r.mu && r.mu->size() != n) fail("mu length mismatch");
  if (r.sigma && r.sigma->size() != n) fail("sigma length mismatch");
  if (r.label && *r.label > 1) fail("label must be 0 or 1");
  if (!issues.empty()) return issues;

  const std::size_t valid = r.valid_len();
  if (valid == 0) fail("no valid positions");
  const auto vocab = r.vocab_size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string at = " at step " + std::to_string(i);
    if (i >= valid) {
      if (r.atp[i] != kPadValue) fail("non-sentinel value after padding" + at);
      continue;
    }
    if (!(r.atp[i] <= 1.0f)) fail("atp outside [0,1]" + at);
    double sum = 0.0;
    bool padded_tail = false;
    for (Eigen::Index j = 0; j < r.topk.cols(); ++j) {
      const float x = r.topk(static_cast<Eigen::Index>(i), j);
      if (x == kPadValue) {
        padded_tail = true;
        continue;
      }
      if (padded_tail) {
        fail("topk value after padding" + at);
        break;
      }
      if (!(x >= 0.0f && x <= 1.0f)) {
        fail("topk entry outside [0,1]" + at);
        break;
      }
      if (j > 0 && x > r.topk(static_cast<Eigen::Index>(i), j - 1)) {
        fail("topk row not non-increasing" + at);
        break;
      }
      sum += x;
    }
    if (sum > 1.0 + 1e-5) fail("topk row sum " + std::to_string(sum) + " exceeds 1" + at);
    if (r.ranks && vocab && (*r.ranks)[i] >= *vocab)
      fail("rank " + std::to_string((*r.ranks)[i]) + " >= vocab size" + at);
    if (r.sigma && !((*r.sigma)[i] >= 0.0f)) fail("negative sigma" + at);
    if (r.mu && !std::isfinite((*r.mu)[i])) fail("non-finite mu" + at);
  }
  return issues;
}

}  // namespace los
