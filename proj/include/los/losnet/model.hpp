#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file model.hpp
 * @brief LOS-Net forward pass and hand-written backward pass.
 *
 * Input per record (only the real positions, truncated to n_max):
 *
 *   RE[i]  = p_i * s(r_i) * w1 + p_i * w2,  s(r) = 1 / (1 + r)      (scaled)
 *   RE[i]  = p_i * E[min(r_i, rank_max)]                            (lookup)
 *   H0     = [ X' W | RE ]        losnet
 *   H0     = RE                   atp_r_transformer / atp_r_mlp
 *
 * Transformer kinds prepend a CLS row, add learned positional embeddings to
 * all n + 1 rows, run post-LN encoder layers (multi-head self-attention,
 * GELU feed-forward of width ff_dim) and read the logit from the CLS row
 * through an affine head. The MLP kind runs position-wise GELU layers, mean
 * pools and applies the head.
 *
 * Dropout, when enabled, acts on attention weights and on feed-forward
 * activations. Everything is templated on the scalar so the same code trains
 * in float and is gradient-checked in double.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "los/core.hpp"
#include "los/losnet/params.hpp"

namespace los::net {

template <class S>
struct ModelInput {
  Mat<S> topk;                       // n x K (losnet only)
  Eigen::Matrix<S, Eigen::Dynamic, 1> p;  // n
  std::vector<std::uint32_t> ranks;  // n
  std::size_t n() const { return ranks.size(); }
};

/// Extracts the real positions of a record into model input form. Padding
/// entries (-1) inside topk rows become 0.
template <class S>
ModelInput<S> make_input(const LOSRecord& rec, const Architecture& arch) {
  if (!rec.ranks) throw DomainError("record has no ranks; the model needs them");
  if (arch.uses_topk() && rec.k() != arch.k)
    throw DomainError("record has K=" + std::to_string(rec.k()) + " but the model expects K=" + std::to_string(arch.k));
  if (static_cast<std::size_t>(rec.topk.rows()) != rec.seq_len() || rec.ranks->size() != rec.seq_len())
    throw DomainError("record arrays disagree in length");
  const std::size_t n = std::min(rec.valid_len(), arch.n_max);
  if (n == 0) throw DomainError("record has no valid positions");
  ModelInput<S> in;
  in.p.resize(static_cast<Eigen::Index>(n));
  in.ranks.assign(rec.ranks->begin(), rec.ranks->begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t i = 0; i < n; ++i) in.p(static_cast<Eigen::Index>(i)) = static_cast<S>(rec.atp[i]);
  if (arch.uses_topk()) {
    in.topk = rec.topk.topRows(static_cast<Eigen::Index>(n)).template cast<S>().cwiseMax(S(0));
  }
  return in;
}

inline double rank_scale(std::uint32_t r) { return 1.0 / (1.0 + static_cast<double>(r)); }

namespace detail {

template <class S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.70710678118654752440)));
}

template <class S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.70710678118654752440)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.39894228040143267794);
  return cdf + x * pdf;
}

template <class S>
S sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

/// Numerically stable BCE on a logit.
template <class S>
S bce_with_logit(S z, S y) {
  return std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline constexpr double kLnEps = 1e-5;

template <class S>
struct LayerNormCache {
  Mat<S> xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LayerNormCache<S>& c) {
  const auto cols = static_cast<S>(x.cols());
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().sum() / cols;
  const Mat<S> centered = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> var = centered.array().square().rowwise().sum() / cols;
  c.rstd = (var.array() + S(kLnEps)).rsqrt();
  c.xhat = centered.array().colwise() * c.rstd.array();
  return (c.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& g, const LayerNormCache<S>& c, Mat<S>& dg, Mat<S>& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * g.row(0).array();
  const auto cols = static_cast<S>(dy.cols());
  const Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / cols;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / cols;
  Mat<S> dx = dxhat;
  dx.colwise() -= m1;
  dx -= (c.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

template <class S>
void add_bias(Mat<S>& y, const Mat<S>& b) {
  y.rowwise() += b.row(0);
}

/// Bernoulli keep-mask scaled by 1 / (1 - rate).
template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  Mat<S> m(rows, cols);
  const S keep = S(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m.data()[i] = u >= rate ? keep : S(0);
  }
  return m;
}

}  // namespace detail

/// Source of dropout masks for one record; inactive when rate == 0.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64 rng{0};
  bool active() const { return rate > 0.0; }
};

template <class S>
struct LayerCache {
  Mat<S> x, q, k, v;
  std::vector<Mat<S>> attn;       // per head, post-softmax
  std::vector<Mat<S>> attn_mask;  // per head dropout masks (empty if inactive)
  Mat<S> ctx;
  detail::LayerNormCache<S> ln1;
  Mat<S> n1;
  Mat<S> ff_pre, ff_act, ff_mask;
  detail::LayerNormCache<S> ln2;
};

template <class S>
struct ForwardCache {
  Eigen::Matrix<S, Eigen::Dynamic, 1> rank_gate;  // p_i * s(r_i) (scaled) or p_i (lookup)
  std::vector<std::size_t> rank_rows;             // lookup rows used
  std::vector<LayerCache<S>> layers;
  Mat<S> z_out;                                   // final hidden (transformer) or pooled (mlp)
  std::vector<Mat<S>> mlp_in, mlp_pre, mlp_mask;  // mlp kind
};

template <class S>
Mat<S> rank_encode(const ModelParams<S>& P, const ModelInput<S>& in, ForwardCache<S>* cache = nullptr) {
  const auto n = static_cast<Eigen::Index>(in.n());
  Mat<S> re;
  if (P.arch.rank_mode == RankMode::scaled) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> gate(n);
    for (Eigen::Index i = 0; i < n; ++i) gate(i) = in.p(i) * static_cast<S>(rank_scale(in.ranks[static_cast<std::size_t>(i)]));
    re = gate * P.rank_w1 + in.p * P.rank_w2;
    if (cache) cache->rank_gate = gate;
  } else {
    re.resize(n, P.rank_table.cols());
    std::vector<std::size_t> rows(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      rows[static_cast<std::size_t>(i)] = std::min<std::size_t>(in.ranks[static_cast<std::size_t>(i)], P.arch.rank_max);
      re.row(i) = in.p(i) * P.rank_table.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
    }
    if (cache) cache->rank_rows = std::move(rows);
  }
  return re;
}

namespace detail {

template <class S>
Mat<S> encoder_layer_forward(const EncoderLayerParams<S>& L, const Architecture& arch, const Mat<S>& x,
                             Dropout* drop, LayerCache<S>& c) {
  const auto T = x.rows();
  const auto D = static_cast<Eigen::Index>(arch.emb_size);
  const auto H = static_cast<Eigen::Index>(arch.heads);
  const auto dh = D / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const bool dropping = drop && drop->active();

  c.x = x;
  c.q = x * L.wq;
  add_bias(c.q, L.bq);
  c.k = x * L.wk;
  add_bias(c.k, L.bk);
  c.v = x * L.wv;
  add_bias(c.v, L.bv);
  c.ctx.resize(T, D);
  c.attn.resize(static_cast<std::size_t>(H));
  c.attn_mask.assign(dropping ? static_cast<std::size_t>(H) : 0, Mat<S>());
  for (Eigen::Index h = 0; h < H; ++h) {
    Mat<S> s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    const Eigen::Matrix<S, Eigen::Dynamic, 1> mx = s.rowwise().maxCoeff();
    s = (s.colwise() - mx).array().exp();
    const Eigen::Matrix<S, Eigen::Dynamic, 1> sum = s.rowwise().sum();
    s = s.array().colwise() / sum.array();
    auto& a = c.attn[static_cast<std::size_t>(h)];
    a = std::move(s);
    if (dropping) {
      auto& m = c.attn_mask[static_cast<std::size_t>(h)];
      m = dropout_mask<S>(T, T, drop->rate, drop->rng);
      c.ctx.middleCols(h * dh, dh) = (a.array() * m.array()).matrix() * c.v.middleCols(h * dh, dh);
    } else {
      c.ctx.middleCols(h * dh, dh) = a * c.v.middleCols(h * dh, dh);
    }
  }
  Mat<S> y1 = c.ctx * L.wo;
  add_bias(y1, L.bo);
  y1 += x;
  c.n1 = layer_norm(y1, L.ln1_g, L.ln1_b, c.ln1);

  c.ff_pre = c.n1 * L.w1;
  add_bias(c.ff_pre, L.b1);
  c.ff_act = c.ff_pre.unaryExpr([](S v) { return gelu(v); });
  if (dropping) {
    c.ff_mask = dropout_mask<S>(c.ff_act.rows(), c.ff_act.cols(), drop->rate, drop->rng);
    c.ff_act.array() *= c.ff_mask.array();
  } else {
    c.ff_mask.resize(0, 0);
  }
  Mat<S> y2 = c.ff_act * L.w2;
  add_bias(y2, L.b2);
  y2 += c.n1;
  return layer_norm(y2, L.ln2_g, L.ln2_b, c.ln2);
}

template <class S>
Mat<S> encoder_layer_backward(const EncoderLayerParams<S>& L, const Architecture& arch, const LayerCache<S>& c,
                              const Mat<S>& dout, EncoderLayerParams<S>& G) {
  const auto D = static_cast<Eigen::Index>(arch.emb_size);
  const auto H = static_cast<Eigen::Index>(arch.heads);
  const auto dh = D / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  const Mat<S> dy2 = layer_norm_backward(dout, L.ln2_g, c.ln2, G.ln2_g, G.ln2_b);
  G.w2.noalias() += c.ff_act.transpose() * dy2;
  G.b2.row(0) += dy2.colwise().sum();
  Mat<S> dact = dy2 * L.w2.transpose();
  if (c.ff_mask.size() > 0) dact.array() *= c.ff_mask.array();
  const Mat<S> dpre = dact.array() * c.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  G.w1.noalias() += c.n1.transpose() * dpre;
  G.b1.row(0) += dpre.colwise().sum();
  Mat<S> dn1 = dy2;
  dn1.noalias() += dpre * L.w1.transpose();

  const Mat<S> dy1 = layer_norm_backward(dn1, L.ln1_g, c.ln1, G.ln1_g, G.ln1_b);
  G.wo.noalias() += c.ctx.transpose() * dy1;
  G.bo.row(0) += dy1.colwise().sum();
  const Mat<S> dctx = dy1 * L.wo.transpose();

  Mat<S> dq(c.q.rows(), D), dk(c.k.rows(), D), dv(c.v.rows(), D);
  for (Eigen::Index h = 0; h < H; ++h) {
    const auto& a = c.attn[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    Mat<S> da = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    if (!c.attn_mask.empty()) {
      const auto& m = c.attn_mask[static_cast<std::size_t>(h)];
      dv.middleCols(h * dh, dh) = (a.array() * m.array()).matrix().transpose() * dctx_h;
      da.array() *= m.array();
    } else {
      dv.middleCols(h * dh, dh) = a.transpose() * dctx_h;
    }
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (da.array() * a.array()).rowwise().sum();
    Mat<S> ds = (a.array() * (da.colwise() - dot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  G.wq.noalias() += c.x.transpose() * dq;
  G.bq.row(0) += dq.colwise().sum();
  G.wk.noalias() += c.x.transpose() * dk;
  G.bk.row(0) += dk.colwise().sum();
  G.wv.noalias() += c.x.transpose() * dv;
  G.bv.row(0) += dv.colwise().sum();

  Mat<S> dx = dy1;
  dx.noalias() += dq * L.wq.transpose();
  dx.noalias() += dk * L.wk.transpose();
  dx.noalias() += dv * L.wv.transpose();
  return dx;
}

}  // namespace detail

/// Pre-sigmoid logit. `drop` is null (or inactive) for inference.
template <class S>
S forward(const ModelParams<S>& P, const ModelInput<S>& in, Dropout* drop = nullptr, ForwardCache<S>* cache = nullptr) {
  const Architecture& A = P.arch;
  const auto n = static_cast<Eigen::Index>(in.n());
  if (A.uses_topk() && (in.topk.rows() != n || in.topk.cols() != static_cast<Eigen::Index>(A.k)))
    throw DomainError("forward: topk shape does not match the model");
  ForwardCache<S> local;
  ForwardCache<S>& c = cache ? *cache : local;

  Mat<S> re = rank_encode(P, in, &c);

  if (!A.uses_transformer()) {
    const bool dropping = drop && drop->active();
    Mat<S> a = std::move(re);
    c.mlp_in.clear();
    c.mlp_pre.clear();
    c.mlp_mask.clear();
    for (const auto& L : P.mlp) {
      c.mlp_in.push_back(a);
      Mat<S> pre = a * L.w;
      detail::add_bias(pre, L.b);
      a = pre.unaryExpr([](S v) { return detail::gelu(v); });
      c.mlp_pre.push_back(std::move(pre));
      if (dropping) {
        c.mlp_mask.push_back(detail::dropout_mask<S>(a.rows(), a.cols(), drop->rate, drop->rng));
        a.array() *= c.mlp_mask.back().array();
      }
    }
    c.z_out = a.colwise().mean();
    return (c.z_out * P.head_w)(0, 0) + P.head_b(0, 0);
  }

  const auto D = static_cast<Eigen::Index>(A.emb_size);
  Mat<S> z(n + 1, D);
  z.row(0) = P.cls_emb.row(0);
  if (A.uses_topk()) {
    const auto kp = static_cast<Eigen::Index>(A.proj_dim());
    z.block(1, 0, n, kp) = in.topk * P.proj_w;
    z.block(1, kp, n, D - kp) = re;
  } else {
    z.bottomRows(n) = re;
  }
  z += P.pos_emb.topRows(n + 1);

  c.layers.resize(P.layers.size());
  for (std::size_t l = 0; l < P.layers.size(); ++l)
    z = detail::encoder_layer_forward(P.layers[l], A, z, drop, c.layers[l]);
  c.z_out = std::move(z);
  return (c.z_out.row(0) * P.head_w)(0, 0) + P.head_b(0, 0);
}

/// Accumulates dlogit * d(logit)/d(params) into G using a populated cache.
template <class S>
void backward(const ModelParams<S>& P, const ModelInput<S>& in, const ForwardCache<S>& c, S dlogit,
              ModelParams<S>& G) {
  const Architecture& A = P.arch;
  const auto n = static_cast<Eigen::Index>(in.n());
  G.head_b(0, 0) += dlogit;
  Mat<S> dre;

  if (!A.uses_transformer()) {
    G.head_w += c.z_out.transpose() * dlogit;
    Mat<S> da = Mat<S>::Ones(n, 1) * (P.head_w.transpose() * (dlogit / static_cast<S>(n)));
    for (std::size_t l = P.mlp.size(); l-- > 0;) {
      if (!c.mlp_mask.empty()) da.array() *= c.mlp_mask[l].array();
      const Mat<S> dpre = da.array() * c.mlp_pre[l].unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
      G.mlp[l].w.noalias() += c.mlp_in[l].transpose() * dpre;
      G.mlp[l].b.row(0) += dpre.colwise().sum();
      da = dpre * P.mlp[l].w.transpose();
    }
    dre = std::move(da);
  } else {
    const auto D = static_cast<Eigen::Index>(A.emb_size);
    G.head_w += c.z_out.row(0).transpose() * dlogit;
    Mat<S> dz = Mat<S>::Zero(n + 1, D);
    dz.row(0) = P.head_w.transpose() * dlogit;
    for (std::size_t l = P.layers.size(); l-- > 0;)
      dz = detail::encoder_layer_backward(P.layers[l], A, c.layers[l], dz, G.layers[l]);
    G.pos_emb.topRows(n + 1) += dz;
    G.cls_emb.row(0) += dz.row(0);
    if (A.uses_topk()) {
      const auto kp = static_cast<Eigen::Index>(A.proj_dim());
      G.proj_w.noalias() += in.topk.transpose() * dz.block(1, 0, n, kp);
      dre = dz.block(1, kp, n, D - kp);
    } else {
      dre = dz.bottomRows(n);
    }
  }

  if (A.rank_mode == RankMode::scaled) {
    G.rank_w1.row(0) += c.rank_gate.transpose() * dre;
    G.rank_w2.row(0) += in.p.transpose() * dre;
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      G.rank_table.row(static_cast<Eigen::Index>(c.rank_rows[static_cast<std::size_t>(i)])) += in.p(i) * dre.row(i);
  }
}

template <class S>
S logit(const ModelParams<S>& P, const LOSRecord& rec) {
  return forward(P, make_input<S>(rec, P.arch));
}

// ---------------------------------------------------------------------------
// Batched loss, gradients and inference
// ---------------------------------------------------------------------------

namespace detail {

/// Runs fn(chunk, begin, end) over `threads` contiguous chunks of [0, n).
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = n * t / threads, e = n * (t + 1) / threads;
    pool.emplace_back([&, t, b, e] {
      try {
        fn(t, b, e);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

struct GradOptions {
  double dropout = 0.0;
  /// Dropout streams are derived from (seed, position in batch).
  std::uint64_t dropout_seed = 0;
  std::size_t threads = 1;
};

template <class S>
struct LossAndGrad {
  S loss;
  ModelParams<S> grad;
};

/// Mean BCE over a labeled batch and its exact gradient.
template <class S>
LossAndGrad<S> loss_and_grad(const ModelParams<S>& P, std::span<const LOSRecord* const> batch,
                             const GradOptions& opt = {}) {
  if (batch.empty()) throw DomainError("loss_and_grad: empty batch");
  for (const auto* r : batch)
    if (!r->label) throw DomainError("loss_and_grad: unlabeled record");

  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, batch.size()));
  std::vector<ModelParams<S>> grads(threads, ModelParams<S>::zeros_like(P));
  std::vector<S> losses(threads, S(0));
  const S inv_b = S(1) / static_cast<S>(batch.size());

  detail::parallel_chunks(batch.size(), threads, [&](std::size_t t, std::size_t b, std::size_t e) {
    ForwardCache<S> cache;
    for (std::size_t i = b; i < e; ++i) {
      const LOSRecord& rec = *batch[i];
      const auto in = make_input<S>(rec, P.arch);
      Dropout drop;
      drop.rate = opt.dropout;
      if (drop.active()) {
        std::uint64_t s = opt.dropout_seed * 0x9e3779b97f4a7c15ull + i + 1;
        s ^= s >> 31;
        drop.rng.seed(s * 0xbf58476d1ce4e5b9ull);
      }
      const S z = forward(P, in, &drop, &cache);
      const S y = static_cast<S>(*rec.label);
      losses[t] += detail::bce_with_logit(z, y);
      backward(P, in, cache, (detail::sigmoid(z) - y) * inv_b, grads[t]);
    }
  });

  LossAndGrad<S> out{S(0), std::move(grads[0])};
  S loss = losses[0];
  for (std::size_t t = 1; t < threads; ++t) {
    auto dst = out.grad.tensors();
    auto src = grads[t].tensors();
    for (std::size_t j = 0; j < dst.size(); ++j) *dst[j].tensor += *src[j].tensor;
    loss += losses[t];
  }
  out.loss = loss * inv_b;
  return out;
}

template <class S>
LossAndGrad<S> loss_and_grad(const ModelParams<S>& P, std::span<const LOSRecord> batch, const GradOptions& opt = {}) {
  std::vector<const LOSRecord*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& r : batch) ptrs.push_back(&r);
  return loss_and_grad(P, std::span<const LOSRecord* const>(ptrs), opt);
}

/// sigmoid(logit) per record, order preserving. Records are independent, so
/// the result does not depend on the thread count.
template <class S>
std::vector<double> predict_scores(const ModelParams<S>& P, std::span<const LOSRecord> records, std::size_t threads = 1) {
  std::vector<double> out(records.size());
  if (records.empty()) return out;
  detail::parallel_chunks(records.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      out[i] = static_cast<double>(detail::sigmoid(logit(P, records[i])));
  });
  return out;
}

/// Raw logits, same contract as predict_scores. Useful when sigmoid saturates.
template <class S>
std::vector<double> predict_logits(const ModelParams<S>& P, std::span<const LOSRecord> records, std::size_t threads = 1) {
  std::vector<double> out(records.size());
  if (records.empty()) return out;
  detail::parallel_chunks(records.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = static_cast<double>(logit(P, records[i]));
  });
  return out;
}

}  // namespace los::net
