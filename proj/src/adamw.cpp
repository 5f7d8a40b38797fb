#include "bssm/adamw.hpp"

#include <cmath>

#include "bssm/error.hpp"

namespace bssm {

template <typename S>
void adamw_step(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& m, Tensor<S>& v, long t,
                const AdamWConfig& cfg, bool decay) {
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape())
    throw ShapeError("adamw_step: shape mismatch for parameter " + shape_string(param.shape()));
  if (t < 1) throw ContractError("adamw_step: step count starts at 1");
  const S lr = static_cast<S>(cfg.lr), b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const S c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const S eps = static_cast<S>(cfg.eps);
  auto p = param.values().array();
  const auto g = grad.values().array();
  if (decay && cfg.weight_decay != 0) p *= S(1) - lr * static_cast<S>(cfg.weight_decay);
  m.values().array() = b1 * m.values().array() + (S(1) - b1) * g;
  v.values().array() = b2 * v.values().array() + (S(1) - b2) * g.square();
  p -= lr * (m.values().array() / c1) / ((v.values().array() / c2).sqrt() + eps);
}

template <typename S>
AdamW<S>::AdamW(std::vector<NamedParam<S>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Tensor<S>::zeros(p.var.shape()));
    v_.push_back(Tensor<S>::zeros(p.var.shape()));
  }
}

template <typename S>
void AdamW<S>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<S>& var = params_[i].var;
    const Tensor<S> grad = var.has_grad() ? var.grad() : Tensor<S>::zeros(var.shape());
    adamw_step(var.mutable_value(), grad, m_[i], v_[i], step_, cfg_, params_[i].decay);
  }
}

template <typename S>
void AdamW<S>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template void adamw_step<float>(Tensor<float>&, const Tensor<float>&, Tensor<float>&, Tensor<float>&, long,
                                const AdamWConfig&, bool);
template void adamw_step<double>(Tensor<double>&, const Tensor<double>&, Tensor<double>&, Tensor<double>&, long,
                                 const AdamWConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace bssm
