#pragma once

#include <vector>

#include "bssm/model.hpp"

namespace bssm {

struct AdamWConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// One decoupled-decay update at step `t` (1-based):
///   p <- p - lr*wd*p (if decay), m, v moments, p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename S>
void adamw_step(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& m, Tensor<S>& v, long t,
                const AdamWConfig& cfg, bool decay);

template <typename S>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<S>> params, AdamWConfig cfg);

  /// Applies one update using the accumulated gradients; parameters without
  /// a gradient this step are treated as having gradient zero.
  void step();
  void zero_grad();

  long step_count() const { return step_; }
  void set_step_count(long t) { step_ = t; }
  AdamWConfig& config() { return cfg_; }
  const std::vector<NamedParam<S>>& params() const { return params_; }
  std::vector<Tensor<S>>& first_moments() { return m_; }
  std::vector<Tensor<S>>& second_moments() { return v_; }

 private:
  std::vector<NamedParam<S>> params_;
  AdamWConfig cfg_;
  std::vector<Tensor<S>> m_, v_;
  long step_ = 0;
};

}  // namespace bssm
