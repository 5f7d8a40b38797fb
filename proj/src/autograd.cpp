#include "bssm/autograd.hpp"

#include <unordered_set>

#include "bssm/error.hpp"

namespace bssm {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar>& Node<Scalar>::grad_buffer() {
  if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor<Scalar>::zeros(value.shape());
  return grad;
}

template <typename Scalar>
Var<Scalar>::Var(Tensor<Scalar> value, bool requires_grad) : node_(std::make_shared<Node<Scalar>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                        std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.ptr());
    node->backward = std::move(backward);
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (loss.value().numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the reachable DAG.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node().grad_buffer().values().array() += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward && node->grad.numel() == node->value.numel()) node->backward(*node);
  }
  // Interior gradients are released; leaves keep theirs.
  for (Node<Scalar>* node : order)
    if (node->backward) node->grad = Tensor<Scalar>();
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace bssm
