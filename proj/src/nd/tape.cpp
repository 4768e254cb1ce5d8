#include "icessm/nd/tape.hpp"

#include <algorithm>

#include "icessm/error.hpp"

namespace icessm::nd {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad && grad_enabled_, nullptr);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw ShapeError("tape: input recorded on a different tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  needs = needs && grad_enabled_;
  return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw ShapeError("tape: input recorded on a different tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  needs = needs && grad_enabled_;
  return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty() && !node.value.empty()) return Tensor(node.value.shape(), 0.0f);
  return node.grad;
}

Tensor& Tape::grad_slot(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.size() != node.value.size()) node.grad = Tensor(node.value.shape(), 0.0f);
  return node.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_.at(v.id).requires_grad) return;
  Tensor& slot = grad_slot(v);
  if (g.size() != slot.size()) {
    throw ShapeError("tape: gradient " + to_string(g.shape()) + " does not match value " +
                     to_string(slot.shape()));
  }
  float* dst = slot.data();
  const float* src = g.data();
  for (std::size_t i = 0; i < slot.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ShapeError("tape: backward root from another tape");
  Node& top = nodes_.at(root.id);
  if (top.value.size() != 1) {
    throw ShapeError("tape: backward root must be a single element, got " +
                     to_string(top.value.shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor{};
  if (!top.requires_grad) return;
  top.grad = Tensor(top.value.shape(), 1.0f);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

}  // namespace icessm::nd
