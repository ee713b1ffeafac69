#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "facl/tensor.hpp"

namespace facl {

struct Node;
using Val = std::shared_ptr<Node>;

/// One vertex of the per-step computation graph. The graph is rebuilt every
/// training step; parameter nodes are long-lived leaves whose gradient
/// accumulators persist until the optimizer consumes them.
struct Node {
  Tensor v;
  Tensor g;  // allocated on first accumulation
  bool needs_grad = false;
  std::vector<Val> in;
  std::function<void(Node&)> back;  // scatters g into the inputs

  explicit Node(Tensor value) : v(std::move(value)) {}

  Tensor& grad() {
    if (g.data.empty()) g = Tensor(v.shape);
    return g;
  }

  void zero_grad() { g = Tensor(); }
};

inline Val constant(Tensor t) { return std::make_shared<Node>(std::move(t)); }

inline Val parameter(Tensor t) {
  Val n = std::make_shared<Node>(std::move(t));
  n->needs_grad = true;
  return n;
}

/// Passes the value through and blocks all gradient flow; the detached
/// subgraph never even appears in the backward traversal.
inline Val stop_gradient(const Val& x) { return constant(x->v); }

namespace detail {
inline Val make_op(Tensor out, std::vector<Val> inputs, std::function<void(Node&)> back) {
  out.quantize();
  check_finite(out, "op output");
  Val n = std::make_shared<Node>(std::move(out));
  for (const Val& i : inputs)
    if (i->needs_grad) n->needs_grad = true;
  if (n->needs_grad) {
    n->in = std::move(inputs);
    n->back = std::move(back);
  }
  return n;
}
}  // namespace detail

/// Reverse-mode sweep from a scalar root. Deterministic: traversal order is
/// fixed by graph construction order, single-threaded.
inline void backward(const Val& root) {
  if (root->v.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->needs_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->in.size()) {
      Node* child = n->in[next++].get();
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->grad().data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->back) n->back(*n);
  }
}

}  // namespace facl
