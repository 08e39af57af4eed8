#include "capsfield/numerics/tape.hpp"

#include "capsfield/errors.hpp"

namespace capsfield::numerics {

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, recording_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw Error("op mixes vars from different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
  }
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id()];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw Error("backward root belongs to another tape");
  if (!recording_) throw Error("backward on a tape that does not record gradients");
  if (root.value().size() != 1) {
    throw ShapeError("backward root must be scalar, got " + to_string(root.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    // Closures only touch buffers of earlier nodes; deque keeps this reference stable.
    node.backward(node.grad, node.value, *this);
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

}  // namespace capsfield::numerics
