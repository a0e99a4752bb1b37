// Acceptance gate: every criterion prints one PASS/FAIL line; the exit status
// is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "support/oracles.hpp"

using namespace los;
using namespace los::net;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr Method kAllMethods[] = {Method::mean, Method::min, Method::max, Method::loss, Method::mink, Method::minkpp};
constexpr ModelKind kKinds[] = {ModelKind::losnet, ModelKind::atp_r_transformer, ModelKind::atp_r_mlp};

SynthConfig synth(double delta, std::size_t n_per_class, std::uint64_t seed) {
  SynthConfig c;
  c.delta = delta;
  c.n_per_class = n_per_class;
  c.seed = seed;
  return c;
}

double auc_of(std::span<const double> s, std::span<const LOSRecord> recs) {
  const auto y = labels_of(recs);
  return auc(s, std::span<const std::uint8_t>(y));
}

double method_auc(std::span<const LOSRecord> recs, Method m, const GSFConfig& cfg = {}) {
  std::vector<double> s;
  s.reserve(recs.size());
  for (const auto& r : recs) s.push_back(score_record(r, m, cfg));
  return auc_of(s, recs);
}

double model_auc(const ModelParams<float>& p, std::span<const LOSRecord> recs) {
  const auto s = predict_logits(p, recs, resolve_threads(0));
  return auc_of(s, recs);
}

// Smallest point of the hyperparameter grid.
TrainConfig smallest_grid_config(std::size_t epochs) {
  TrainConfig c;
  c.emb_size = 64;
  c.num_layers = 1;
  c.dropout = 0.0;
  c.weight_decay = 0.0;
  c.epochs = epochs;
  return c;
}

std::vector<LOSRecord> slice(const std::vector<LOSRecord>& v, std::size_t b, std::size_t e) {
  return {v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e)};
}

// Source model for the transfer criterion, produced by the learnability run.
std::optional<ModelParams<float>> g_source;

// ---------------------------------------------------------------------------

void gsf_equivalence(Outcome& o) {
  const auto t0 = Clock::now();
  SynthConfig c = synth(0.5, 500, 101);
  c.seq_len_min = 1;
  const auto recs = gen_synthetic(c);
  double worst = 0.0;
  std::size_t checks = 0;
  for (const auto& r : recs)
    for (auto m : kAllMethods) {
      const auto scales = (m == Method::mean || m == Method::min || m == Method::max)
                              ? std::vector<Scale>{Scale::prob, Scale::log_prob, Scale::logit}
                              : std::vector<Scale>{Scale::prob};
      for (auto sc : scales) {
        GSFConfig cfg;
        cfg.scale = sc;
        worst = std::max(worst, std::abs(gsf_apply(make_spec(m, cfg), r) - score_record(r, m, cfg)));
        ++checks;
      }
    }
  const double t = seconds_since(t0);
  o.require(recs.size() == 1000, "1000 records");
  o.require(worst <= 1e-9, "max |gsf - direct| <= 1e-9");
  o.require(t < 5.0, "runtime < 5 s");
  o.detail << "records=" << recs.size() << " checks=" << checks << " max_abs_diff=" << worst << " time_s=" << t;
}

void gradient_check(Outcome& o) {
  const auto t0 = Clock::now();
  const auto batch = oracle::gradcheck_batch();
  double worst = 0.0;
  std::string worst_name;
  for (auto kind : kKinds)
    for (auto mode : {RankMode::scaled, RankMode::lookup}) {
      const auto cfg = oracle::gradcheck_config(kind, mode);
      const auto p = init_params<double>(cfg.architecture(batch[0].k()), 7, cfg.max_params, 0.3);
      for (const auto& e : oracle::gradcheck(p, batch))
        if (e.rel > worst) {
          worst = e.rel;
          worst_name = std::string(to_string(kind)) + "/" + to_string(mode) + "/" + e.name;
        }
    }
  const double t = seconds_since(t0);
  o.require(worst < 1e-4, "max relative error < 1e-4");
  o.require(t < 60.0, "runtime < 60 s");
  o.detail << "max_rel_err=" << worst << " at " << worst_name << " time_s=" << t;
}

void learnability(Outcome& o) {
  const auto data = gen_synthetic(synth(0.75, 2500, 0));
  const auto tr = slice(data, 0, 4000), va = slice(data, 4000, 5000);
  auto cfg = smallest_grid_config(50);
  cfg.seed = 0;
  const auto t0 = Clock::now();
  // Stops once the target is reached; the criterion is "within 50 epochs".
  const auto res = train(tr, va, cfg, [](const EpochStats& s) { return s.val_auc < 0.95; });
  const double t = seconds_since(t0);
  g_source = res.params;
  const auto& h = res.history;
  o.require(h.best_val_auc >= 0.95, "val AUC >= 0.95");
  o.require(h.epochs.size() <= 50, "<= 50 epochs");
  o.require(t < 120.0, "wall clock < 2 min");
  o.detail << "best_val_auc=" << h.best_val_auc << " epochs_run=" << h.epochs.size() << " threads=" << resolve_threads(0)
           << " params=" << res.params.num_params() << " time_s=" << t;
}

void null_control(Outcome& o) {
  const auto test = gen_synthetic(synth(0.0, 1000, 201));
  for (auto m : kAllMethods) {
    const double a = method_auc(test, m);
    o.require(a >= 0.45 && a <= 0.55, to_string(m));
    o.detail << to_string(m) << "=" << a << " ";
  }
  for (auto sc : {Scale::log_prob, Scale::logit}) {
    GSFConfig cfg;
    cfg.scale = sc;
    for (auto m : {Method::mean, Method::min, Method::max}) {
      const double a = method_auc(test, m, cfg);
      o.require(a >= 0.45 && a <= 0.55, std::string(to_string(m)) + "/" + to_string(sc));
    }
  }
  auto cfg = smallest_grid_config(10);
  cfg.seed = 1;
  const auto res = train(gen_synthetic(synth(0.0, 500, 202)), gen_synthetic(synth(0.0, 250, 203)), cfg);
  const double a = model_auc(res.params, test);
  o.require(a >= 0.45 && a <= 0.55, "losnet");
  o.detail << "losnet=" << a << " test_records=" << test.size();
}

void mink_reductions(Outcome& o) {
  GSFConfig full;
  full.k_frac = 100.0;
  const auto recs = gen_synthetic(synth(0.5, 500, 301));
  std::size_t mismatches = 0;
  for (const auto& r : recs) mismatches += mink_score(r.atp, full) != loss_score(r.atp, full);
  o.require(mismatches == 0, "mink(100) == loss exactly");
  double prev = -1.0;
  o.detail << "k100_mismatches=" << mismatches << " mink_auc:";
  for (double d : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double a = method_auc(gen_synthetic(synth(d, 1000, 302)), Method::mink);
    o.require(a >= prev, "monotone at delta=" + std::to_string(d));
    prev = a;
    o.detail << " " << d << "->" << a;
  }
}

void k_mass(Outcome& o) {
  SynthConfig c = synth(0.75, 50, 401);
  c.vocab = 1000;
  c.k = 1000;
  const std::size_t ks[] = {10, 50, 100, 500, 1000};
  std::vector<double> mean_mass(std::size(ks), 0.0);
  double worst_full = 0.0;
  bool per_record_monotone = true;
  for (std::size_t i = 0; i < c.n_records(); ++i) {
    const auto rec = synth_record(c, i);
    double prev = 0.0;
    for (std::size_t j = 0; j < std::size(ks); ++j) {
      const double m = captured_mass(rec.topk.leftCols(static_cast<Eigen::Index>(ks[j])));
      per_record_monotone &= m >= prev;
      prev = m;
      mean_mass[j] += m / static_cast<double>(c.n_records());
    }
    for (Eigen::Index r = 0; r < rec.topk.rows(); ++r)
      worst_full = std::max(worst_full, std::abs(rec.topk.row(r).cast<double>().sum() - 1.0));
  }
  o.require(per_record_monotone, "mass non-decreasing in K");
  o.require(worst_full <= 1e-5, "mass at K=V within 1e-5 of 1");
  o.detail << "mass:";
  for (std::size_t j = 0; j < std::size(ks); ++j) o.detail << " K" << ks[j] << "=" << mean_mass[j];
  o.detail << " max_row_dev_at_V=" << worst_full;

  // Same samples at K=10 and K=V=200.
  double aucs[2];
  const std::size_t model_ks[] = {10, 200};
  for (int j = 0; j < 2; ++j) {
    auto mk = [&](std::size_t n, std::uint64_t seed) {
      SynthConfig s = synth(0.75, n, seed);
      s.k = model_ks[j];
      return gen_synthetic(s);
    };
    auto cfg = smallest_grid_config(20);
    cfg.seed = 2;
    const auto res = train(mk(1000, 402), mk(250, 403), cfg);
    aucs[j] = model_auc(res.params, mk(500, 404));
  }
  o.require(std::abs(aucs[0] - aucs[1]) <= 0.05, "K=10 within 5 points of K=V");
  o.detail << " auc_K10=" << aucs[0] << " auc_KV=" << aucs[1];
}

void transfer(Outcome& o) {
  if (!g_source) {
    o.require(false, "source model from the learnability run");
    return;
  }
  std::size_t wins = 0;
  o.detail << "finetune/scratch:";
  for (std::uint64_t t = 0; t < 10; ++t) {
    const auto tr = gen_synthetic(synth(0.6, 100, 500 + 3 * t));
    const auto va = gen_synthetic(synth(0.6, 100, 501 + 3 * t));
    const auto te = gen_synthetic(synth(0.6, 500, 502 + 3 * t));
    auto cfg = smallest_grid_config(10);
    cfg.seed = t;
    const double scratch = model_auc(train(tr, va, cfg).params, te);
    const double ft = model_auc(finetune(*g_source, tr, va, cfg, 10).params, te);
    wins += ft > scratch;
    o.detail << " " << ft << "/" << scratch;
  }
  o.require(wins >= 8, ">= 8/10 wins");
  o.detail << " wins=" << wins << "/10";
}

void splits(Outcome& o) {
  std::vector<LOSRecord> manifest;
  for (std::uint8_t cls : {std::uint8_t{1}, std::uint8_t{0}})
    for (int g = 0; g < 50; ++g)
      for (int e = 0; e < 3; ++e) {
        LOSRecord r;
        r.topk = RowMatrixF::Constant(1, 1, 1.0f);
        r.atp = {1.0f};
        r.label = cls;
        r.group_id = std::string(cls ? "book-p" : "book-n") + std::to_string(g);
        manifest.push_back(r);
      }
  const auto a = grouped_split(manifest, 0.8, 42), b = grouped_split(manifest, 0.8, 42);
  std::set<std::string> tr(a.train_groups.begin(), a.train_groups.end());
  bool disjoint = true;
  for (const auto& g : a.test_groups) disjoint &= !tr.count(g);
  for (auto i : a.test) disjoint &= !tr.count(*manifest[i].group_id);
  o.require(disjoint, "disjoint groups");
  o.require(a.train == b.train && a.test == b.test && a.train_groups == b.train_groups, "deterministic");
  std::size_t pos = 0;
  for (auto i : a.test) pos += *manifest[i].label;
  const double frac = static_cast<double>(pos) / static_cast<double>(a.test.size());
  o.require(std::abs(frac - 0.5) <= 0.05, "test positive fraction 50% +- 5");
  o.detail << "groups train/test=" << a.train_groups.size() << "/" << a.test_groups.size() << " test_pos_frac=" << frac;

  bool partition = true;
  for (std::size_t n : {5, 10, 103, 1000}) {
    std::vector<int> seen(n, 0);
    for (const auto& f : kfold_splits(n, 5, 42)) {
      for (auto i : f.test) ++seen[i];
      partition &= f.train.size() + f.val.size() + f.test.size() == n;
    }
    for (int s : seen) partition &= s == 1;
  }
  o.require(partition, "kfold test folds partition the index set");
  o.detail << " kfold_partition=" << (partition ? "ok" : "broken");
}

void auc_oracle(Outcome& o) {
  std::mt19937_64 rng(601);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 80;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = (t % 2) ? static_cast<double>(rng() % 5) : std::ldexp(static_cast<double>(rng() >> 11), -53);
      y[i] = rng() & 1;
    }
    y[0] = 1;
    y[1] = 0;
    mismatches += auc(s, y) != oracle::pairwise_auc(s, y);
  }
  const double example = auc({0.8, 0.7, 0.6, 0.5}, {1, 0, 1, 0});
  o.require(mismatches == 0, "200 sets match pairwise enumeration exactly");
  o.require(example == 0.75, "worked example is 0.75");
  o.detail << "sets=200 mismatches=" << mismatches << " worked_example=" << example;
}

void format(Outcome& o) {
  std::mt19937_64 rng(701);
  std::vector<LOSRecord> recs;
  for (int mask = 0; mask < 16; ++mask) {
    BuildOptions opt;
    opt.with_stats = mask & 2;
    opt.with_ranks = mask & 4;
    auto r = build_record(oracle::random_raw(rng, 1 + mask % 6, 20), 1 + mask % 9, opt);
    if (mask & 1) r.label = static_cast<std::uint8_t>(mask % 3 == 0);
    if (mask & 8) r.group_id = "group " + std::to_string(mask);
    if (mask % 4 == 1) r.meta["source"] = "acceptance";
    if (mask % 5 == 2) r = pad_to(r, 12);
    recs.push_back(std::move(r));
  }
  const auto bytes = encode_records(recs);
  const auto back = decode_records(bytes);
  o.require(back == recs, "decoded records equal the originals");
  o.require(encode_records(back) == bytes, "re-encoding is byte-exact");

  auto code = [](const std::string& b) -> std::string {
    try {
      decode_records(b);
    } catch (const FormatError& e) {
      return to_string(e.code());
    }
    return "accepted";
  };
  std::string bad_magic = bytes, bad_version = bytes;
  bad_magic[0] = 'X';
  bad_version[4] = 7;
  const std::pair<std::string, std::string> cases[] = {{code(bytes.substr(0, 5)), "truncated"},
                                                       {code(bad_magic), "bad_magic"},
                                                       {code(bad_version), "version_mismatch"},
                                                       {code(bytes + "!"), "length_mismatch"},
                                                       {code(bytes.substr(0, bytes.size() - 2)), "truncated"}};
  for (const auto& [got, want] : cases) o.require(got == want, "expected " + want + " got " + got);
  o.detail << "combinations=16 bytes=" << bytes.size() << " corruption_cases=" << std::size(cases);
}

void degeneracy(Outcome& o) {
  std::vector<RawTDS> raws;
  RawTDS onehot;
  onehot.probs = RowMatrixF::Zero(3, 10);
  onehot.probs(0, 2) = onehot.probs(1, 0) = onehot.probs(2, 9) = 1.0f;
  onehot.token_ids = {2, 5, 9};
  raws.push_back(onehot);
  RawTDS uniform;
  uniform.probs = RowMatrixF::Constant(4, 10, 0.1f);
  uniform.token_ids = {0, 1, 2, 3};
  raws.push_back(uniform);
  RawTDS single;
  single.probs = RowMatrixF::Constant(1, 10, 0.1f);
  single.token_ids = {7};
  raws.push_back(single);

  std::size_t evaluated = 0, non_finite = 0;
  for (const auto& raw : raws) {
    const auto rec = build_record(raw, 5);
    for (auto sc : {Scale::prob, Scale::log_prob, Scale::logit})
      for (auto m : kAllMethods) {
        GSFConfig cfg;
        cfg.scale = sc;
        for (double v : {score_record(rec, m, cfg), gsf_apply(make_spec(m, cfg), rec)}) {
          ++evaluated;
          non_finite += !std::isfinite(v);
        }
      }
    for (auto kind : kKinds) {
      TrainConfig cfg;
      cfg.model_kind = kind;
      cfg.emb_size = 64;
      const auto p = init_params<float>(cfg.architecture(5), 3);
      ++evaluated;
      non_finite += !std::isfinite(logit(p, rec));
    }
  }
  o.require(non_finite == 0, "all scores finite");
  o.detail << "evaluated=" << evaluated << " non_finite=" << non_finite;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
      {"gsf-equivalence", gsf_equivalence}, {"gradient-check", gradient_check},
      {"learnability", learnability},       {"null-control", null_control},
      {"mink-reductions", mink_reductions}, {"k-mass", k_mass},
      {"transfer", transfer},               {"splits", splits},
      {"auc-oracle", auc_oracle},           {"format", format},
      {"degeneracy", degeneracy}};
  std::size_t failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s %-16s (%.1fs) %s\n", o.pass ? "PASS" : "FAIL", name, seconds_since(t0), o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", std::size(criteria) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
