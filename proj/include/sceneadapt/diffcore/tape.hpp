#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "sceneadapt/diffcore/tensor.hpp"

namespace sceneadapt {

template <class T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  // Gradient accumulated into this node by the last backward pass.
  const std::vector<T>& grad() const { return tape_->node_grad(*this); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeOptions {
#ifdef NDEBUG
  bool check_numerics = false;
#else
  bool check_numerics = true;
#endif
};

// Records a forward graph in topological order and replays it in reverse.
//
// Parameters enter the tape by reference (`param`), so the gradient computed
// for them is accumulated into the referenced tensor's own grad buffer at the
// end of backward(). A tape supports exactly one backward pass.
template <class T>
class Tape {
 public:
  // Receives the tape and the gradient flowing into the node being replayed.
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const TapeOptions& options() const { return options_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false, {}); }

  Var<T> input(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), nullptr, requires_grad, {});
  }

  // Trainable leaf referencing an external tensor. When `trainable` is false
  // the tensor is read as a constant and receives no gradient.
  Var<T> param(Tensor<T>& external, bool trainable = true) {
    return push(Tensor<T>{}, &external, trainable, {});
  }

  // Records an op result. The backward closure is kept only if at least one
  // input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const Var<T>& in : inputs) {
      check_owned(in);
      needs_grad = needs_grad || nodes_[in.id_].requires_grad;
    }
    if (options_.check_numerics) {
      for (const T v : value.data())
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by recorded op");
    }
    return push(std::move(value), nullptr, needs_grad, needs_grad ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owned(v);
    const Node& n = nodes_[v.id_];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id_].requires_grad;
  }

  const std::vector<T>& node_grad(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id_].grad;
  }

  // Gradient buffer of an input node, allocated on first use. Returns nullptr
  // for nodes that do not require gradients so ops can skip work.
  std::vector<T>* grad_sink(const Var<T>& v) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(value(v).size(), T{0});
    return &n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Handle to an already recorded node, e.g. an op's own output inside its
  // backward closure.
  Var<T> handle(std::size_t id) {
    if (id >= nodes_.size()) throw UsageError("no node " + std::to_string(id) + " on tape");
    return Var<T>(this, id);
  }
  bool backward_done() const { return backward_done_; }

  void backward(const Var<T>& loss) {
    if (loss.tape_ != this) throw UsageError("backward on a tensor not recorded on this tape");
    if (loss.id_ >= nodes_.size()) throw UsageError("backward on an unrecorded tensor");
    if (backward_done_) throw UsageError("backward already ran on this tape; re-record the graph");
    if (value(loss).size() != 1) throw UsageError("backward requires a scalar loss, got shape " +
                                                  to_string(value(loss).shape()));
    backward_done_ = true;
    Node& root = nodes_[loss.id_];
    if (!root.requires_grad) return;
    root.grad.assign(1, T{1});
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (Node& n : nodes_) {
      if (!n.external || !n.requires_grad || n.grad.empty()) continue;
      if (!n.external->has_grad()) n.external->zero_grad();
      auto g = n.external->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    Tensor<T>* external = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, Tensor<T>* external, bool requires_grad, BackwardFn fn) {
    if (backward_done_) throw UsageError("recording on a tape after backward");
    nodes_.push_back(Node{std::move(value), external, {}, requires_grad, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owned(const Var<T>& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size())
      throw UsageError("tensor handle does not belong to this tape");
  }

  TapeOptions options_;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace sceneadapt
