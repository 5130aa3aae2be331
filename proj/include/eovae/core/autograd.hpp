#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "eovae/core/tensor.hpp"

namespace eovae {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && grad.shape() == value.shape(); }
};

/// Handle to a node in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() : node_(std::make_shared<Node<T>>()) {}

  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  const Tensor<T>& value() const noexcept { return node_->value; }
  Tensor<T>& mutable_value() noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const noexcept { return node_->requires_grad; }

  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->ensure_grad(); }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T{0});
  }

  T item() const { return node_->value.item(); }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const NodePtr& node() const noexcept { return node_; }

  /// Reverse-mode sweep from a scalar root. Interior nodes release their
  /// graph links afterwards; leaf gradients accumulate.
  void backward() {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar root");
    if (!node_->requires_grad) return;
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{node_, 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto n = stack.back().first;
      const std::size_t idx = stack.back().second++;
      if (idx < n->inputs.size()) {
        const auto& child = n->inputs[idx];
        if (child->requires_grad && !seen.count(child.get())) {
          seen.insert(child.get());
          stack.push_back({child, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad().fill(T{1});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->backward_fn) {
        n->ensure_grad();
        n->backward_fn(*n);
        n->backward_fn = nullptr;
        n->inputs.clear();
        n->grad = Tensor<T>();
      }
    }
  }

 private:
  NodePtr node_;
};

/// Builds a result node. Graph links are recorded only when grad mode is on
/// and some input requires a gradient. The backward callback receives the
/// result node (with its grad populated) and must accumulate into inputs.
template <typename T, typename BackwardFn>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn&& backward) {
  Var<T> out(std::move(value), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward_fn = std::forward<BackwardFn>(backward);
  return out;
}

/// Gradient buffer of the i-th input of a node, or nullptr if it needs none.
template <typename T>
Tensor<T>* input_grad(Node<T>& node, std::size_t i) {
  auto& in = node.inputs[i];
  return in->requires_grad ? &in->ensure_grad() : nullptr;
}

template <typename T>
const Tensor<T>& input_value(const Node<T>& node, std::size_t i) {
  return node.inputs[i]->value;
}

}  // namespace eovae
