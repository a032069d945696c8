#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

// Handle to a value in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  // Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  T item() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds a result node. The backward closure is kept only when grad mode is
// on and at least one input needs a gradient.
template <typename T, typename Backward>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.shared());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

// Reverse-mode sweep seeded with d(objective)/d(root); gradients accumulate
// into every reachable node that requires them.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root.requires_grad()) return;
  require_same_shape(root.shape(), seed.shape(), "backward seed");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<T>& g = root.node()->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

template <typename T>
void backward(const Var<T>& root) {
  if (root.requires_grad() && root.value().size() != 1) throw DimensionError("backward: root must be a scalar");
  backward(root, Tensor<T>(root.shape(), T(1)));
}

// Gradient buffer of parent i, or nullptr when that parent is a constant.
template <typename T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

template <typename T>
const Tensor<T>& parent_value(const Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

// Named trainable tensors, in registration order.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Var<T> v) { items_.emplace_back(std::move(name), std::move(v)); }
  void append(const ParameterSet& other, const std::string& prefix) {
    for (const auto& [n, v] : other.items_) items_.emplace_back(prefix + n, v);
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t size() const { return items_.size(); }
  const std::pair<std::string, Var<T>>& operator[](std::size_t i) const { return items_[i]; }

  void zero_grad() {
    for (auto& [n, v] : items_) v.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [n, v] : items_) total += v.value().size();
    return total;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
};

}  // namespace rwinpaint
