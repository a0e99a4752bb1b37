#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "support/oracles.hpp"

using namespace los;
using namespace los::net;

namespace {

std::vector<LOSRecord> small_set(std::size_t n_per_class = 4, std::size_t k = 6, double delta = 0.5) {
  SynthConfig c;
  c.n_per_class = n_per_class;
  c.vocab = 40;
  c.k = k;
  c.seq_len_min = 3;
  c.seq_len_max = 10;
  c.delta = delta;
  c.seed = 11;
  return gen_synthetic(c);
}

TrainConfig small_config(ModelKind kind, RankMode mode = RankMode::scaled) {
  TrainConfig c;
  c.model_kind = kind;
  c.rank_mode = mode;
  c.emb_size = 16;
  c.heads = 4;
  c.num_layers = 2;
  c.n_max = 32;
  c.rank_max = 10;
  return c;
}

constexpr ModelKind kKinds[] = {ModelKind::losnet, ModelKind::atp_r_transformer, ModelKind::atp_r_mlp};

}  // namespace

TEST(RankEncode, ScaledFormulaCollapses) {
  const auto rec = small_set()[0];
  const auto arch = small_config(ModelKind::losnet).architecture(rec.k());
  auto p = ModelParams<double>::zeros(arch);
  p.rank_w2.setOnes();
  const auto in = make_input<double>(rec, arch);
  const auto re = rank_encode(p, in);
  for (Eigen::Index i = 0; i < re.rows(); ++i)
    for (Eigen::Index j = 0; j < re.cols(); ++j) EXPECT_EQ(re(i, j), in.p(i));
}

TEST(RankEncode, ZeroProbabilityGivesZeroRow) {
  auto rec = small_set()[1];
  rec.atp[2] = 0.0f;
  const auto arch = small_config(ModelKind::losnet).architecture(rec.k());
  const auto p = init_params<double>(arch, 1, 2'000'000, 0.5);
  const auto re = rank_encode(p, make_input<double>(rec, arch));
  EXPECT_EQ(re.row(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(RankEncode, MatchesElementwiseOracle) {
  for (auto mode : {RankMode::scaled, RankMode::lookup}) {
    const auto recs = small_set(3);
    const auto arch = small_config(ModelKind::losnet, mode).architecture(recs[0].k());
    const auto p = init_params<double>(arch, 2, 2'000'000, 0.5);
    for (const auto& rec : recs) {
      const auto re = rank_encode(p, make_input<double>(rec, arch));
      for (std::size_t i = 0; i < rec.seq_len(); ++i) {
        const double pi = rec.atp[i];
        const std::uint32_t r = (*rec.ranks)[i];
        for (std::size_t j = 0; j < arch.rank_dim; ++j) {
          const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
          const double expect =
              mode == RankMode::scaled
                  ? pi * (1.0 / (1.0 + r)) * p.rank_w1(0, jj) + pi * p.rank_w2(0, jj)
                  : pi * p.rank_table(static_cast<Eigen::Index>(std::min<std::uint32_t>(r, 10)), jj);
          EXPECT_NEAR(re(ii, jj), expect, 1e-12);
        }
      }
    }
  }
}

TEST(Forward, ZeroNetworkReturnsHeadBias) {
  for (auto kind : kKinds) {
    const auto recs = small_set();
    auto p = ModelParams<double>::zeros(small_config(kind).architecture(recs[0].k()));
    p.head_b(0, 0) = 0.37;
    for (const auto& r : recs) EXPECT_DOUBLE_EQ(logit(p, r), 0.37) << to_string(kind);
  }
}

TEST(Forward, InvariantToVocabularyPermutation) {
  std::mt19937_64 rng(4);
  const auto arch = small_config(ModelKind::losnet).architecture(8);
  const auto p = init_params<float>(arch, 3, 2'000'000, 0.2);
  for (int t = 0; t < 5; ++t) {
    const auto raw = oracle::random_raw(rng, 7, 25);
    std::vector<std::uint32_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    RawTDS shuffled = raw;
    for (Eigen::Index j = 0; j < 25; ++j) shuffled.probs.col(perm[static_cast<std::size_t>(j)]) = raw.probs.col(j);
    for (auto& tok : shuffled.token_ids) tok = perm[tok];
    EXPECT_EQ(logit(p, build_record(raw, 8)), logit(p, build_record(shuffled, 8)));
  }
}

TEST(Forward, PaddingIsNeutral) {
  for (auto kind : kKinds) {
    const auto recs = small_set();
    const auto p = init_params<float>(small_config(kind).architecture(recs[0].k()), 5, 2'000'000, 0.2);
    for (const auto& r : recs) EXPECT_EQ(logit(p, r), logit(p, pad_to(r, 30))) << to_string(kind);
  }
}

TEST(Forward, AtpOnlyKindsIgnoreTopk) {
  for (auto kind : {ModelKind::atp_r_transformer, ModelKind::atp_r_mlp}) {
    const auto recs = small_set();
    const auto p = init_params<float>(small_config(kind).architecture(recs[0].k()), 6, 2'000'000, 0.2);
    for (auto r : recs) {
      const float before = logit(p, r);
      r.topk.setRandom();
      EXPECT_EQ(logit(p, r), before);
    }
  }
}

TEST(Forward, TruncatesToNMax) {
  const auto recs = small_set();
  auto cfg = small_config(ModelKind::losnet);
  cfg.n_max = 3;
  const auto p = init_params<float>(cfg.architecture(recs[0].k()), 7, 2'000'000, 0.2);
  for (const auto& r : recs) EXPECT_EQ(logit(p, r), logit(p, pad_to(r, 3)));
}

TEST(Forward, ShapeErrors) {
  auto recs = small_set();
  const auto p = init_params<float>(small_config(ModelKind::losnet).architecture(recs[0].k() + 1), 1);
  EXPECT_THROW(logit(p, recs[0]), DomainError);
  const auto q = init_params<float>(small_config(ModelKind::losnet).architecture(recs[0].k()), 1);
  recs[0].ranks.reset();
  EXPECT_THROW(logit(q, recs[0]), DomainError);
  recs[1].atp.assign(recs[1].atp.size(), kPadValue);
  EXPECT_THROW(logit(q, recs[1]), DomainError);
}

TEST(Predict, BatchingAndThreadsDoNotChangeScores) {
  const auto recs = small_set(10);
  const auto p = init_params<float>(small_config(ModelKind::losnet).architecture(recs[0].k()), 8, 2'000'000, 0.2);
  const auto batch = predict_scores(p, recs, 1);
  const auto threaded = predict_scores(p, recs, 3);
  ASSERT_EQ(batch.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const double one = predict_scores(p, std::span<const LOSRecord>(&recs[i], 1))[0];
    EXPECT_NEAR(batch[i], one, 1e-6);
    EXPECT_EQ(batch[i], threaded[i]);
    EXPECT_GT(batch[i], 0.0);
    EXPECT_LT(batch[i], 1.0);
    EXPECT_NEAR(batch[i], 1.0 / (1.0 + std::exp(-static_cast<double>(logit(p, recs[i])))), 1e-6);
  }
  EXPECT_TRUE(predict_scores(p, std::span<const LOSRecord>()).empty());
}

TEST(Predict, DuplicateRecordsGiveIdenticalLogits) {
  auto recs = small_set(3);
  recs.push_back(recs[2]);
  const auto p = init_params<float>(small_config(ModelKind::losnet).architecture(recs[0].k()), 9, 2'000'000, 0.2);
  const auto s = predict_logits(p, recs, 2);
  EXPECT_EQ(s[2], s.back());
}

TEST(Loss, ClosedForms) {
  auto recs = small_set(1);
  const auto arch = small_config(ModelKind::losnet).architecture(recs[0].k());
  auto p = ModelParams<double>::zeros(arch);
  const std::span<const LOSRecord> pos(&recs[0], 1);
  ASSERT_EQ(*recs[0].label, 1);
  EXPECT_NEAR(loss_and_grad(p, pos).loss, std::log(2.0), 1e-15);
  p.head_b(0, 0) = 0.8;
  const auto lg = loss_and_grad(p, pos);
  EXPECT_NEAR(lg.grad.head_b(0, 0), 1.0 / (1.0 + std::exp(-0.8)) - 1.0, 1e-15);
  EXPECT_NEAR(lg.loss, std::log1p(std::exp(-0.8)), 1e-15);
}

TEST(Loss, Errors) {
  auto recs = small_set(1);
  const auto p = init_params<double>(small_config(ModelKind::losnet).architecture(recs[0].k()), 1);
  recs[0].label.reset();
  EXPECT_THROW(loss_and_grad(p, std::span<const LOSRecord>(recs)), DomainError);
  EXPECT_THROW(loss_and_grad(p, std::span<const LOSRecord>()), DomainError);
}

TEST(Loss, ThreadedGradientMatchesSerial) {
  const auto recs = small_set(6);
  const auto p = init_params<double>(small_config(ModelKind::losnet).architecture(recs[0].k()), 3, 2'000'000, 0.3);
  GradOptions one, many;
  many.threads = 4;
  const auto a = loss_and_grad(p, std::span<const LOSRecord>(recs), one);
  const auto b = loss_and_grad(p, std::span<const LOSRecord>(recs), many);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  const auto ta = a.grad.tensors(), tb = b.grad.tensors();
  for (std::size_t j = 0; j < ta.size(); ++j)
    EXPECT_LT((*ta[j].tensor - *tb[j].tensor).cwiseAbs().maxCoeff(), 1e-12) << ta[j].name;
}

class GradCheck : public ::testing::TestWithParam<std::tuple<ModelKind, RankMode>> {};

TEST_P(GradCheck, AnalyticMatchesFiniteDifferences) {
  const auto [kind, mode] = GetParam();
  const auto batch = oracle::gradcheck_batch();
  const auto cfg = oracle::gradcheck_config(kind, mode);
  const auto p = init_params<double>(cfg.architecture(batch[0].k()), 7, 2'000'000, 0.3);
  for (const auto& e : oracle::gradcheck(p, batch)) EXPECT_LT(e.rel, 1e-4) << e.name;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradCheck,
                         ::testing::Combine(::testing::ValuesIn(kKinds),
                                            ::testing::Values(RankMode::scaled, RankMode::lookup)));

TEST(GradCheckDropout, FixedMasksAreDifferentiable) {
  const auto batch = oracle::gradcheck_batch();
  for (auto kind : {ModelKind::losnet, ModelKind::atp_r_mlp}) {
    const auto cfg = oracle::gradcheck_config(kind, RankMode::scaled);
    const auto p = init_params<double>(cfg.architecture(batch[0].k()), 8, 2'000'000, 0.3);
    GradOptions opt;
    opt.dropout = 0.3;
    opt.dropout_seed = 99;
    for (const auto& e : oracle::gradcheck(p, batch, opt)) EXPECT_LT(e.rel, 1e-4) << e.name;
  }
}

TEST(Params, BudgetAndShapes) {
  TrainConfig big;
  big.emb_size = 256;
  big.num_layers = 2;
  const auto arch = big.architecture(1000);
  const auto p = init_params<float>(arch, 0);
  EXPECT_LE(p.num_params(), 2'000'000u);
  EXPECT_EQ(arch.rank_dim + arch.proj_dim(), 256u);
  EXPECT_EQ(p.proj_w.rows(), 1000);
  EXPECT_EQ(p.pos_emb.rows(), 257);
  EXPECT_THROW(init_params<float>(arch, 0, 100'000), DomainError);

  TrainConfig bad;
  bad.emb_size = 20;
  bad.heads = 8;
  EXPECT_THROW(bad.architecture(10), DomainError);
}

TEST(Params, InitIsSeededAndBounded) {
  const auto arch = small_config(ModelKind::losnet).architecture(6);
  const auto a = init_params<float>(arch, 1), b = init_params<float>(arch, 1), c = init_params<float>(arch, 2);
  EXPECT_EQ(a.proj_w, b.proj_w);
  EXPECT_NE(a.proj_w, c.proj_w);
  EXPECT_LE(a.layers[0].wq.cwiseAbs().maxCoeff(), 0.04f);
  EXPECT_EQ(a.layers[0].bq.cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(a.layers[0].ln1_g.minCoeff(), 1.0f);
  EXPECT_EQ(a.head_b(0, 0), 0.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto kind : kKinds)
    for (auto mode : {RankMode::scaled, RankMode::lookup}) {
      auto cfg = small_config(kind, mode);
      cfg.learning_rate = 3.3e-4;
      cfg.seed = 12345;
      const Checkpoint ck{cfg, init_params<float>(cfg.architecture(6), 4)};
      const auto bytes = encode_checkpoint(ck);
      const auto back = decode_checkpoint(bytes);
      EXPECT_EQ(encode_checkpoint(back), bytes);
      EXPECT_EQ(back.params.arch, ck.params.arch);
      EXPECT_EQ(back.config.learning_rate, cfg.learning_rate);
      EXPECT_EQ(back.config.seed, cfg.seed);
      const auto ta = back.params.tensors(), tb = ck.params.tensors();
      ASSERT_EQ(ta.size(), tb.size());
      for (std::size_t j = 0; j < ta.size(); ++j) EXPECT_EQ(*ta[j].tensor, *tb[j].tensor) << ta[j].name;
    }
}

TEST(Checkpoint, RejectsCorruption) {
  const auto cfg = small_config(ModelKind::losnet);
  const auto bytes = encode_checkpoint({cfg, init_params<float>(cfg.architecture(6), 4)});
  auto code = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return e.code();
    }
    return FormatErrc::io;
  };
  EXPECT_EQ(code(bytes.substr(0, 3)), FormatErrc::truncated);
  EXPECT_EQ(code(bytes.substr(0, bytes.size() - 1)), FormatErrc::truncated);
  EXPECT_EQ(code("XOSC" + bytes.substr(4)), FormatErrc::bad_magic);
  auto v = bytes;
  v[4] = 9;
  EXPECT_EQ(code(v), FormatErrc::version_mismatch);
  EXPECT_EQ(code(bytes + "z"), FormatErrc::length_mismatch);
}
