#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "icessm/nd/tensor.hpp"

namespace icessm::nd {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

/// Reverse-mode tape. Nodes are appended in forward execution order and
/// backward() visits them in exact reverse; gradients accumulate additively
/// when a value feeds several consumers.
///
/// A tape built with grad disabled records values only (inference mode).
class Tape {
 public:
  /// Called with the tape and the node's accumulated output gradient.
  using Backward = std::function<void(Tape&, const Tensor&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op output. It requires grad iff any input does; `backward`
  /// is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  /// Gradient of the last backward() root w.r.t. v; zeros if nothing reached v.
  Tensor grad(Var v) const;
  /// Mutable gradient slot, zero-initialised on first use. Only valid for
  /// values that require grad.
  Tensor& grad_slot(Var v);
  /// Adds g into v's gradient when v requires grad.
  void accumulate(Var v, const Tensor& g);

  /// Seeds d(root)/d(root) = 1 for a single-element root and runs the tape.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, Backward backward);

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace icessm::nd
