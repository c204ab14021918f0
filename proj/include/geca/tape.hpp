#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "geca/tensor.hpp"

namespace geca {

template <typename Scalar>
class Tape;

/// Handle to a tensor recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  Index id = -1;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  const Tensor<Scalar>& grad() const { return tape->grad(id); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order. `backward` seeds the output with
/// one and replays the recorded adjoint closures from the last node to the
/// first. Nodes whose inputs are all constants store no closure, so a tape
/// fed only constants doubles as a plain forward evaluator.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Backward = std::function<void(Tape&, Index self, const TensorT& out_grad)>;

  Var<Scalar> leaf(TensorT value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    ++leaves_;
    return {this, static_cast<Index>(nodes_.size()) - 1};
  }

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false); }

  Var<Scalar> record(TensorT value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("operands recorded on different tapes");
      needs = needs || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
    return {this, static_cast<Index>(nodes_.size()) - 1};
  }

  const TensorT& value(Index id) const { return node(id).value; }
  bool requires_grad(Index id) const { return node(id).requires_grad; }

  /// Gradient of a node; zeros when nothing has flowed into it.
  const TensorT& grad(Index id) const {
    const Node& n = node(id);
    if (n.grad.empty() && n.value.size() > 0) n.grad = TensorT::zeros(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient accumulator, allocated on first use.
  TensorT& grad_buffer(Index id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = TensorT::zeros(n.value.shape());
    return n.grad;
  }

  void backward(Var<Scalar> output) {
    if (output.value().size() != 1) throw DimensionError("backward expects a scalar output");
    grad_buffer(output.id).array().setOnes();
    for (Index id = output.id; id >= 0; --id) {
      Node& n = node(id);
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id, n.grad);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = TensorT{};
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_; }

 private:
  struct Node {
    TensorT value;
    mutable TensorT grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Index id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(Index id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Node> nodes_;
  std::size_t leaves_ = 0;
};

}  // namespace geca
