#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file eval.hpp
 * @brief ROC-AUC, split protocols and evaluation reports.
 *
 * AUC is the Mann-Whitney statistic with ties credited 0.5. It is computed
 * from mid-ranks in O(n log n); the doubled U statistic is accumulated as an
 * integer so the result is the exact ratio (2U) / (2 * n_pos * n_neg).
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "los/core.hpp"
#include "los/py_random.hpp"

namespace los {

inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw DomainError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::uint64_t n_pos = 0;
  for (auto y : labels) n_pos += (y != 0);
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("auc: labels contain a single class");
  for (double s : scores)
    if (std::isnan(s)) throw DomainError("auc: NaN score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum over positives of doubled 1-based mid-ranks.
  std::uint64_t rank2_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t mid2 = i + 1 + j;  // (i+1) + j = 2 * mean rank of the block
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank2_sum += mid2;
    i = j;
  }
  const std::uint64_t u2 = rank2_sum - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  return auc(std::span<const double>(scores), std::span<const std::uint8_t>(labels));
}

inline std::vector<std::uint8_t> labels_of(std::span<const LOSRecord> records) {
  std::vector<std::uint8_t> y;
  y.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw DomainError("record " + std::to_string(i) + " has no label");
    y.push_back(*records[i].label);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct GroupedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::string> train_groups;
  std::vector<std::string> test_groups;
};

/// Book-level split: each class's sorted group list is shuffled with `seed`,
/// the first floor(train_frac * n_groups) groups of each class go to train.
inline GroupedSplit grouped_split(std::span<const LOSRecord> records, double train_frac = 0.8,
                                  std::uint64_t seed = 42) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw DomainError("train_frac must lie in (0,1)");
  std::map<std::string, std::uint8_t> group_label;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.group_id) throw DomainError("record " + std::to_string(i) + " has no group_id");
    if (!r.label) throw DomainError("record " + std::to_string(i) + " has no label");
    auto [it, inserted] = group_label.emplace(*r.group_id, *r.label);
    if (!inserted && it->second != *r.label)
      throw DomainError("group '" + *r.group_id + "' mixes labels");
  }

  GroupedSplit out;
  std::set<std::string> train_set;
  for (std::uint8_t cls : {std::uint8_t{1}, std::uint8_t{0}}) {
    std::vector<std::string> groups;
    for (const auto& [g, y] : group_label)
      if (y == cls) groups.push_back(g);
    PyRandom(seed).shuffle(groups);
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(groups.size()) + 1e-9));
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i < n_train) {
        out.train_groups.push_back(groups[i]);
        train_set.insert(groups[i]);
      } else {
        out.test_groups.push_back(groups[i]);
      }
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    (train_set.count(*records[i].group_id) ? out.train : out.test).push_back(i);
  return out;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// K-fold with a rotating validation fold: fold f tests on part f, validates
/// on part (f+1) mod folds and trains on the rest. Indices are shuffled with
/// `seed`; the remainder of n / folds goes to the leading parts.
inline std::vector<Fold> kfold_splits(std::size_t n, std::size_t folds = 5, std::uint64_t seed = 42) {
  if (folds < 3) throw DomainError("kfold_splits: need at least 3 folds");
  if (n < folds) throw DomainError("kfold_splits: n smaller than number of folds");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  PyRandom(seed).shuffle(idx);

  std::vector<std::vector<std::size_t>> parts(folds);
  std::size_t at = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    parts[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(at),
                    idx.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  std::vector<Fold> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t v = (f + 1) % folds;
    out[f].test = parts[f];
    out[f].val = parts[v];
    for (std::size_t g = 0; g < folds; ++g)
      if (g != f && g != v) out[f].train.insert(out[f].train.end(), parts[g].begin(), parts[g].end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::string method;
  std::string split_id;
  std::optional<std::uint64_t> seed;
  std::vector<double> per_record_scores;
};

inline EvalReport make_report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                              std::string method, std::string split_id,
                              std::optional<std::uint64_t> seed = std::nullopt) {
  EvalReport r;
  r.auc = auc(scores, labels);
  for (auto y : labels) (y ? r.n_pos : r.n_neg) += 1;
  r.method = std::move(method);
  r.split_id = std::move(split_id);
  r.seed = seed;
  r.per_record_scores.assign(scores.begin(), scores.end());
  return r;
}

struct ReportSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population std over runs
  std::size_t runs = 0;
};

inline ReportSummary summarize(std::span<const EvalReport> reports) {
  ReportSummary s;
  s.runs = reports.size();
  if (reports.empty()) return s;
  for (const auto& r : reports) s.mean += r.auc;
  s.mean /= static_cast<double>(reports.size());
  double var = 0.0;
  for (const auto& r : reports) var += (r.auc - s.mean) * (r.auc - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(reports.size()));
  return s;
}

/// One line per run:
///   method=<m> split=<id> auc=<x> n=<total> n_pos=<p> n_neg=<q> seed=<s|->
/// followed, for more than one run, by
///   summary method=<m> runs=<r> auc_mean=<x> auc_std=<y>
inline std::string to_text(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : reports) {
    os << "method=" << r.method << " split=" << r.split_id << " auc=" << r.auc << " n=" << (r.n_pos + r.n_neg)
       << " n_pos=" << r.n_pos << " n_neg=" << r.n_neg << " seed=";
    if (r.seed)
      os << *r.seed;
    else
      os << '-';
    os << '\n';
  }
  if (reports.size() > 1) {
    const auto s = summarize(reports);
    os << "summary method=" << reports.front().method << " runs=" << s.runs << " auc_mean=" << s.mean
       << " auc_std=" << s.stddev << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(std::span<const EvalReport> reports, bool with_scores = false) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j{{"method", r.method}, {"split_id", r.split_id}, {"auc", r.auc},
                     {"n_pos", r.n_pos},   {"n_neg", r.n_neg},       {"seed", nullptr}};
    if (r.seed) j["seed"] = *r.seed;
    if (with_scores) j["scores"] = r.per_record_scores;
    runs.push_back(std::move(j));
  }
  const auto s = summarize(reports);
  return {{"runs", runs}, {"summary", {{"auc_mean", s.mean}, {"auc_std", s.stddev}, {"runs", s.runs}}}};
}

}  // namespace los
