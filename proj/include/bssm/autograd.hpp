#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "bssm/tensor.hpp"

namespace bssm {

/// One recorded value in the reverse-mode graph. `backward` reads `grad`
/// and accumulates into the gradients of `inputs`.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-allocated on first use.
  Tensor<Scalar>& grad_buffer();
};

/// Shared handle to a graph node. Leaves created with `parameter()` keep
/// their gradient across backward calls until `zero_grad()`.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.numel() == node_->value.numel() && node_->value.numel() > 0; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }
  const Shape& shape() const { return node_->value.shape(); }
  Node<Scalar>& node() const { return *node_; }
  const std::shared_ptr<Node<Scalar>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Thread-local switch; while any guard is alive ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. The backward closure is kept only when recording is
/// on and some input needs a gradient.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                        std::function<void(Node<Scalar>&)> backward);

/// Reverse sweep from a scalar. Each reachable node runs its closure once,
/// in reverse topological order.
template <typename Scalar>
void backward(const Var<Scalar>& loss);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace bssm
