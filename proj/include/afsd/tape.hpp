// Copyright 2026 The AFSD Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/tensor.hpp"

namespace afsd {

// Misuse of the tape protocol, such as a second backward pass.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class Real>
class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives and has not been reset.
template <class Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Real>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor<Real>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tensor<Real> grad() const { return tape_->grad(id_); }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run record of a computation. Nodes are appended in evaluation
// order, so reverse index order is a reverse topological order.
template <class Real>
class Tape {
 public:
  // Receives the tape and the gradient flowing into the node's output and
  // accumulates into its inputs' gradients.
  using Backward = std::function<void(Tape&, const Tensor<Real>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value) {
    return push(std::move(value), false, nullptr);
  }

  Var<Real> variable(Tensor<Real> value) {
    return push(std::move(value), true, nullptr);
  }

  // Appends an op output. The backward closure is kept only when some input
  // requires a gradient.
  Var<Real> record(Tensor<Real> value, std::initializer_list<Var<Real>> inputs,
                   Backward backward) {
    return record(std::move(value), std::span<const Var<Real>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var<Real> record(Tensor<Real> value, std::span<const Var<Real>> inputs,
                   Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw TapeError("op inputs recorded on different tapes");
      if (in.requires_grad()) needs = true;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient of the last backward root with respect to node `id`; zeros when
  // the node did not influence the root.
  Tensor<Real> grad(std::size_t id) const {
    const auto& node = nodes_.at(id);
    if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
    return Tensor<Real>(node.value.shape());
  }

  // Whether any gradient reached node `id` in the last backward pass.
  bool reached(std::size_t id) const { return id < grads_.size() && !grads_[id].empty(); }

  // Accumulation buffer for node `id`, created on first use.
  Tensor<Real>& grad_buffer(std::size_t id) {
    auto& g = grads_.at(id);
    if (g.empty()) g = Tensor<Real>(nodes_[id].value.shape());
    return g;
  }

  // True when `id` participates in differentiation and should receive
  // accumulated gradient.
  bool wants_grad(const Var<Real>& v) const { return nodes_.at(v.id()).requires_grad; }

  void backward(const Var<Real>& root) {
    if (backward_done_) {
      throw TapeError("backward called twice on the same tape; record a new forward pass first");
    }
    if (&root.tape() != this) throw TapeError("root belongs to a different tape");
    if (root.value().size() != 1) {
      throw DimensionError("backward root must be a scalar, got shape " +
                           shape_string(root.shape()));
    }
    backward_done_ = true;
    grads_.assign(nodes_.size(), Tensor<Real>());
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] = Real(1);
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.requires_grad || !node.backward || grads_[id].empty()) continue;
      node.backward(*this, grads_[id]);
    }
  }

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    grads_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    Tensor<Real> value;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Real> push(Tensor<Real> value, bool requires_grad, Backward backward) {
    if (backward_done_) {
      throw TapeError("tape already differentiated; reset before recording");
    }
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward)});
    return Var<Real>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<Real>> grads_;
  bool backward_done_ = false;
};

}  // namespace afsd
