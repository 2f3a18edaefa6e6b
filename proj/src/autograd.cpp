// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/autograd.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "qatf/errors.hpp"

namespace qatf {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0f) {}

void Parameter::zero_grad() { std::fill(grad.data().begin(), grad.data().end(), 0.0f); }

const Tensor& Var::value() const { return graph->value(*this); }

bool Var::requires_grad() const { return graph->requires_grad(*this); }

Var Graph::push(Tensor value, bool requires_grad, BackwardFn backward) {
  if (backward_done_) throw SequencingError("graph already ran backward; call reset() before recording");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Graph::Node& Graph::node(Var v) {
  if (v.graph != this || v.id >= nodes_.size()) throw IndexError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw IndexError("variable does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  // Plain leaves have nothing to propagate to; a no-op rule marks them visited.
  return push(std::move(value), grad_enabled_ && requires_grad, [](Graph&, const Tensor&, const Tensor&) {});
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Parameter* target = &p;
  Var v = push(p.value, grad_enabled_ && p.receives_grad(), [target](Graph&, const Tensor&, const Tensor& g) {
    auto dst = target->grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, bool own_trainable) {
  bool needs = grad_enabled_ && own_trainable;
  if (grad_enabled_) {
    for (Var in : inputs) needs = needs || node(in).requires_grad;
  }
  return push(std::move(value), needs, std::move(backward));
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward, bool own_trainable) {
  bool needs = grad_enabled_ && own_trainable;
  if (grad_enabled_) {
    for (Var in : inputs) needs = needs || node(in).requires_grad;
  }
  return push(std::move(value), needs, std::move(backward));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

bool Graph::has_grad(Var v) const { return !node(v).grad.empty(); }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) throw PreconditionError("no gradient recorded for this variable");
  return n.grad;
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
  return n.grad;
}

void Graph::accumulate(Var v, const Tensor& g) {
  if (!node(v).requires_grad) return;
  Tensor& dst = grad_buffer(v);
  if (dst.size() != g.size()) {
    throw DimensionError(
        fmt::format("gradient shape {} does not match {}", shape_str(g.shape()), shape_str(dst.shape())));
  }
  auto d = dst.data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void Graph::backward(Var loss) {
  if (backward_done_) throw SequencingError("backward called twice without reset (gradients would double-accumulate)");
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw DimensionError(fmt::format("backward needs a scalar loss, got shape {}", shape_str(root.value.shape())));
  }
  backward_done_ = true;
  visits_ = 0;
  if (!root.requires_grad) return;
  grad_buffer(loss)[0] += 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    ++visits_;
    n.backward(*this, n.value, n.grad);
  }
}

void Graph::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
  visits_ = 0;
}

}  // namespace qatf
