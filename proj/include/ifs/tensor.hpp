#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ifs/error.hpp"
#include "ifs/rng.hpp"

namespace ifs {

namespace detail {
inline std::atomic<std::uint64_t>& node_sequence() {
  static std::atomic<std::uint64_t> seq{0};
  return seq;
}

// Graph recording can be suspended for inference-only passes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Suspends graph recording for the lifetime of the guard.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense N-D array participating in a reverse-mode gradient graph.
//
// A TensorT is a cheap handle onto a shared Node that owns the buffer, the
// optional gradient, and the recorded operator that produced it. Nodes carry
// a monotonically increasing sequence id; the backward pass replays the
// recorded operators in exact reverse order of the forward pass.
//
// S is float for training and double for gradient-check tests.
template <class S>
class TensorT {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until first needed; same length as data
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
  };

  TensorT() = default;

  bool defined() const { return node_ != nullptr; }

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static TensorT filled(std::vector<int> shape, S value, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(checked_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    t.node_->seq = ++detail::node_sequence();
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<S> data,
                           bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != checked_numel(shape)) {
      throw DimensionError("tensor: data length does not match shape product");
    }
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->seq = ++detail::node_sequence();
    return t;
  }

  static TensorT scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, S stddev = S(1),
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = static_cast<S>(rng.next_normal(0.0, stddev));
    return t;
  }

  const std::vector<int>& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  S* data() { return node_->data.data(); }
  const S* data() const { return node_->data.data(); }
  S item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), S(0)); }

  std::shared_ptr<Node> node() const { return node_; }

  // New leaf sharing no graph history with this tensor.
  TensorT detach() const {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    t.node_->requires_grad = false;
    t.node_->seq = ++detail::node_sequence();
    return t;
  }

  bool same_shape(const TensorT& other) const { return node_->shape == other.node_->shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < node_->shape.size(); ++i) {
      if (i) os << 'x';
      os << node_->shape[i];
    }
    os << ']';
    return os.str();
  }

  bool all_finite() const {
    for (S v : node_->data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // --- graph construction (used by the operator library) ---

  static TensorT make_result(std::vector<int> shape,
                             std::vector<std::shared_ptr<Node>> parents) {
    TensorT t = zeros(std::move(shape));
    bool needs = false;
    if (detail::grad_mode()) {
      for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
    }
    return t;
  }

  void set_backward(std::function<void(Node&)> fn) {
    if (node_->requires_grad && !node_->parents.empty()) {
      node_->backward_fn = std::move(fn);
    }
  }

 private:
  static std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw DimensionError("tensor: non-positive extent in shape");
      n *= e;
    }
    return n;
  }

  std::shared_ptr<Node> node_;
};

// Reverse accumulation from a scalar loss. Interior gradients are scratch
// buffers of this call; leaf gradients persist and accumulate, so a repeated
// call without a reset doubles them. The reset is explicit and caller-driven.
template <class S>
void backward(const TensorT<S>& loss) {
  using Node = typename TensorT<S>::Node;
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + loss.shape_str());
  }
  auto root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Collect the reachable subgraph.
  std::vector<Node*> order;
  std::vector<std::shared_ptr<Node>> keep_alive;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n.get());
    keep_alive.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }

  // Interior grads are zeroed each call; leaf grads accumulate across calls.
  for (Node* n : order) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), S(0));
    }
  }
  root->ensure_grad();
  root->grad[0] += S(1);

  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

using Tensor = TensorT<float>;

}  // namespace ifs
