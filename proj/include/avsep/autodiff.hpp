#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "avsep/errors.hpp"
#include "avsep/tensor.hpp"

namespace avsep {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool& finite_check_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording within a scope (inference / oracle evaluation).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation (or leaf) in the reverse-mode graph.
struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  // Maps the gradient w.r.t. this node's value to gradients w.r.t. each input.
  std::function<std::vector<Tensor>(const Tensor& grad_out)> backward;
  Tensor grad;  // accumulated by backprop; empty until first contribution

  void accumulate(const Tensor& g) {
    if (!grad.defined()) {
      grad = g.clone();
      return;
    }
    if (!grad.same_shape(g))
      throw DimensionError("gradient shape mismatch: " + grad.shape_str() +
                           " vs " + g.shape_str());
    double* d = grad.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < grad.size(); ++i) d[i] += s[i];
  }
};

// Value handle into the graph. Copies alias the same node.
class Var {
 public:
  Var() = default;

  // Leaf (parameter or constant input).
  explicit Var(Tensor value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  // Operation result. Drops the tape when gradients are off or no input
  // needs them, so intermediates free eagerly in inference.
  static Var op(Tensor value, std::vector<Var> inputs,
                std::function<std::vector<Tensor>(const Tensor&)> backward) {
    if (detail::finite_check_flag() && !value.all_finite())
      throw NumericError("non-finite tensor produced " + value.shape_str());
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
      for (const Var& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
      v.node_->requires_grad = true;
      v.node_->inputs.reserve(inputs.size());
      for (Var& in : inputs) v.node_->inputs.push_back(in.node_);
      v.node_->backward = std::move(backward);
    }
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->grad.defined(); }
  void clear_grad() { node_->grad = Tensor(); }
  NodePtr node() const { return node_; }

  double scalar() const {
    if (node_->value.size() != 1)
      throw DimensionError("scalar() on non-scalar " + node_->value.shape_str());
    return node_->value[0];
  }

 private:
  NodePtr node_;
};

// Reverse-mode sweep from a scalar root. Leaf gradients land in Node::grad
// and persist until cleared; interior gradients are discarded as the graph
// is released by the caller.
inline void backward(const Var& root) {
  if (root.value().size() != 1)
    throw DimensionError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Post-order over the graph, iteratively.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor::scalar(1.0));
  for (std::size_t i = order.size(); i-- > 0;) {
    Node* n = order[i];
    if (n->inputs.empty() || !n->grad.defined()) continue;
    std::vector<Tensor> gs = n->backward(n->grad);
    if (gs.size() != n->inputs.size())
      throw NumericError("backward arity mismatch");
    for (std::size_t k = 0; k < gs.size(); ++k) {
      if (n->inputs[k]->requires_grad && gs[k].defined())
        n->inputs[k]->accumulate(gs[k]);
    }
    n->grad = Tensor();  // interior gradient no longer needed
  }
}

}  // namespace avsep
