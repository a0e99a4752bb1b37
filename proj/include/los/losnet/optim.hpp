#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstddef>

#include "los/losnet/params.hpp"

namespace los::net {

/// Linear warmup then linear decay to zero. Warmup length is
/// floor(warmup_frac * total_steps); `factor(s)` is the multiplier applied to
/// the base learning rate for the update taken at step s (0-based).
struct LinearSchedule {
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;

  LinearSchedule() = default;
  LinearSchedule(std::size_t total, double warmup_frac)
      : total_steps(total), warmup_steps(static_cast<std::size_t>(std::floor(warmup_frac * static_cast<double>(total)))) {}

  double factor(std::size_t step) const {
    if (step < warmup_steps) return static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
  }
};

/// AdamW with decoupled weight decay:
///   p -= lr * wd * p
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class S>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  AdamW(const ModelParams<S>& like, double wd)
      : weight_decay(wd), m_(ModelParams<S>::zeros_like(like)), v_(ModelParams<S>::zeros_like(like)) {}

  std::size_t steps() const { return t_; }

  void step(ModelParams<S>& params, const ModelParams<S>& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    auto P = params.tensors();
    auto G = grad.tensors();
    auto M = m_.tensors();
    auto V = v_.tensors();
    for (std::size_t j = 0; j < P.size(); ++j) {
      auto& p = *P[j].tensor;
      const auto& g = *G[j].tensor;
      auto& m = *M[j].tensor;
      auto& v = *V[j].tensor;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g.data()[i]);
        double pi = static_cast<double>(p.data()[i]);
        pi -= lr * weight_decay * pi;
        const double mi = beta1 * static_cast<double>(m.data()[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(v.data()[i]) + (1.0 - beta2) * gi * gi;
        m.data()[i] = static_cast<S>(mi);
        v.data()[i] = static_cast<S>(vi);
        pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
        p.data()[i] = static_cast<S>(pi);
      }
    }
  }

 private:
  ModelParams<S> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace los::net
