// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation. A Graph is a tape: every op
// appends a node holding its output value and (when any input needs a
// gradient) a backward rule. backward() walks the tape once, in reverse.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "qatf/tensor.hpp"

namespace qatf {

struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value; accumulates until zero_grad()
  bool trainable = true;
  bool frozen = false;
  // Positive when the tensor already lies on a fixed integer grid (loaded from
  // an integer checkpoint); the range-preserving quantizer then reuses it.
  float pinned_scale = 0.0f;

  bool receives_grad() const { return trainable && !frozen; }
  void zero_grad();
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives and
// has not been reset.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Graph {
 public:
  // Receives the node's own output value and its accumulated gradient.
  using BackwardFn = std::function<void(Graph&, const Tensor& out, const Tensor& out_grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // One leaf per Parameter per graph; gradients are added into p.grad.
  Var param(Parameter& p);

  // Appends an op output. `backward` is dropped when no input needs a gradient
  // and the op owns no trainable state of its own (own_trainable).
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, bool own_trainable = false);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward, bool own_trainable = false);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool has_grad(Var v) const;
  const Tensor& grad(Var v) const;

  // Zero-initialised on first access. For use inside backward rules.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  // Populates gradients of every node reachable from `loss` (a 1-element
  // tensor). Throws SequencingError if called again before reset().
  void backward(Var loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  // Backward rules executed by the last backward() call.
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward);
  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::uint32_t> param_nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

}  // namespace qatf
