#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "los/error.hpp"
#include "los/losnet/config.hpp"

namespace los::net {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
struct EncoderLayerParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln1_g, ln1_b;
  Mat<S> w1, b1, w2, b2;
  Mat<S> ln2_g, ln2_b;
};

template <class S>
struct MlpLayerParams {
  Mat<S> w, b;
};

template <class S, class T>
struct NamedTensor {
  std::string name;
  T* tensor;
};

/// Every learnable tensor. Weights map inputs on the left (y = x W + b) and
/// biases / vectors are stored as 1 x n rows. Tensors a kind does not use
/// are left empty and are not enumerated.
template <class S>
struct ModelParams {
  Architecture arch;

  Mat<S> proj_w;      // K x K'
  Mat<S> rank_w1;     // 1 x d   (scaled rank mode)
  Mat<S> rank_w2;     // 1 x d   (scaled rank mode)
  Mat<S> rank_table;  // (rank_max + 1) x d   (lookup rank mode)
  Mat<S> pos_emb;     // (n_max + 1) x D
  Mat<S> cls_emb;     // 1 x D
  std::vector<EncoderLayerParams<S>> layers;
  std::vector<MlpLayerParams<S>> mlp;
  Mat<S> head_w;  // D x 1
  Mat<S> head_b;  // 1 x 1

  /// All tensors allocated and zero.
  static ModelParams zeros(const Architecture& a) {
    a.check();
    ModelParams p;
    p.arch = a;
    const auto D = static_cast<Eigen::Index>(a.emb_size);
    const auto d = static_cast<Eigen::Index>(a.rank_dim);
    const auto F = static_cast<Eigen::Index>(a.ff_dim);
    if (a.uses_topk()) p.proj_w = Mat<S>::Zero(static_cast<Eigen::Index>(a.k), static_cast<Eigen::Index>(a.proj_dim()));
    if (a.rank_mode == RankMode::scaled) {
      p.rank_w1 = Mat<S>::Zero(1, d);
      p.rank_w2 = Mat<S>::Zero(1, d);
    } else {
      p.rank_table = Mat<S>::Zero(static_cast<Eigen::Index>(a.rank_max + 1), d);
    }
    if (a.uses_transformer()) {
      p.pos_emb = Mat<S>::Zero(static_cast<Eigen::Index>(a.n_max + 1), D);
      p.cls_emb = Mat<S>::Zero(1, D);
      p.layers.resize(a.layers);
      for (auto& l : p.layers) {
        for (Mat<S>* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Mat<S>::Zero(D, D);
        for (Mat<S>* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_g, &l.ln1_b, &l.b2, &l.ln2_g, &l.ln2_b})
          *b = Mat<S>::Zero(1, D);
        l.w1 = Mat<S>::Zero(D, F);
        l.b1 = Mat<S>::Zero(1, F);
        l.w2 = Mat<S>::Zero(F, D);
      }
    } else {
      p.mlp.resize(a.layers);
      for (auto& l : p.mlp) {
        l.w = Mat<S>::Zero(D, D);
        l.b = Mat<S>::Zero(1, D);
      }
    }
    p.head_w = Mat<S>::Zero(D, 1);
    p.head_b = Mat<S>::Zero(1, 1);
    return p;
  }

  static ModelParams zeros_like(const ModelParams& other) { return zeros(other.arch); }

  std::vector<NamedTensor<S, Mat<S>>> tensors() { return collect<Mat<S>>(*this); }
  std::vector<NamedTensor<S, const Mat<S>>> tensors() const { return collect<const Mat<S>>(*this); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
    return n;
  }

  void set_zero() {
    for (auto& t : tensors()) t.tensor->setZero();
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out = ModelParams<T>::zeros(arch);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<T>();
    return out;
  }

  bool all_finite() const {
    for (const auto& t : tensors())
      if (!t.tensor->allFinite()) return false;
    return true;
  }

 private:
  template <class T, class Self>
  static std::vector<NamedTensor<S, T>> collect(Self& self) {
    std::vector<NamedTensor<S, T>> out;
    auto add = [&](std::string name, T& t) {
      if (t.size() > 0) out.push_back({std::move(name), &t});
    };
    add("proj_w", self.proj_w);
    add("rank_w1", self.rank_w1);
    add("rank_w2", self.rank_w2);
    add("rank_table", self.rank_table);
    add("pos_emb", self.pos_emb);
    add("cls_emb", self.cls_emb);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      add(p + "wq", l.wq);
      add(p + "bq", l.bq);
      add(p + "wk", l.wk);
      add(p + "bk", l.bk);
      add(p + "wv", l.wv);
      add(p + "bv", l.bv);
      add(p + "wo", l.wo);
      add(p + "bo", l.bo);
      add(p + "ln1_g", l.ln1_g);
      add(p + "ln1_b", l.ln1_b);
      add(p + "w1", l.w1);
      add(p + "b1", l.b1);
      add(p + "w2", l.w2);
      add(p + "b2", l.b2);
      add(p + "ln2_g", l.ln2_g);
      add(p + "ln2_b", l.ln2_b);
    }
    for (std::size_t i = 0; i < self.mlp.size(); ++i) {
      const std::string p = "mlp." + std::to_string(i) + ".";
      add(p + "w", self.mlp[i].w);
      add(p + "b", self.mlp[i].b);
    }
    add("head_w", self.head_w);
    add("head_b", self.head_b);
    return out;
  }
};

namespace detail {

inline bool is_bias_like(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "bq" || leaf == "bk" || leaf == "bv" || leaf == "bo" || leaf == "b1" || leaf == "b2" ||
         leaf == "b" || leaf == "head_b" || leaf == "ln1_b" || leaf == "ln2_b";
}

inline bool is_ln_gain(const std::string& name) {
  return name.ends_with("ln1_g") || name.ends_with("ln2_g");
}

}  // namespace detail

/// Truncated normal (|x| <= 2 std, std 0.02) weights, zero biases, unit
/// LayerNorm gains. Throws if the model exceeds `max_params`.
template <class S>
ModelParams<S> init_params(const Architecture& arch, std::uint64_t seed, std::size_t max_params = 2'000'000,
                           double init_std = 0.02) {
  ModelParams<S> p = ModelParams<S>::zeros(arch);
  if (p.num_params() > max_params)
    throw DomainError("model has " + std::to_string(p.num_params()) + " parameters, budget is " +
                      std::to_string(max_params));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& t : p.tensors()) {
    if (detail::is_ln_gain(t.name)) {
      t.tensor->setOnes();
    } else if (!detail::is_bias_like(t.name)) {
      for (Eigen::Index i = 0; i < t.tensor->size(); ++i) {
        double x;
        do x = normal(rng);
        while (std::abs(x) > 2.0);
        t.tensor->data()[i] = static_cast<S>(init_std * x);
      }
    }
  }
  return p;
}

}  // namespace los::net
