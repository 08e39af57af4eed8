#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>

#include "capsfield/numerics/tensor.hpp"

namespace capsfield::numerics {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Every primitive op appends one node holding its output value and a
/// closure that, given the gradient of the output (and the output itself),
/// accumulates gradients into its inputs. backward() replays the closures in
/// reverse order.
/// A tape is single-writer; build one per forward/backward pass.
class Tape {
 public:
  using Backward =
      std::function<void(const Tensor& grad_out, const Tensor& output, Tape& tape)>;

  /// `record_gradients == false` gives an inference tape that keeps values only.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient (parameters, inputs under test).
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Output of a primitive. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every node. Root must hold one element.
  void backward(Var root);

  /// Gradient accumulated at `v`; zeros when nothing flowed there.
  Tensor gradient(Var v) const;

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Mutable gradient buffer of `v`, zero-initialised on first access.
  /// Backward closures accumulate into it.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace capsfield::numerics
