// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "deepmim/tensor.hpp"

namespace deepmim {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Wengert list for one forward pass. Nodes are appended in evaluation order,
/// so reverse iteration is a valid topological order for backward.
template <typename Scalar>
class Tape {
 public:
  /// Receives the gradient of the node's output and pushes contributions to
  /// its inputs through accumulate().
  using Backward = std::function<void(Tape&, const Tensor<Scalar>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr); }

  /// Records an op output. The node needs a gradient iff any input does; when
  /// none does, the backward rule is dropped.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                     Backward backward) {
    if (!value.all_finite()) throw NumericError("non-finite value in forward result");
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<Scalar>& value(const Var<Scalar>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient of the last backward root w.r.t. v; zeros if nothing reached it.
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.grad.defined() ? n.grad : Tensor<Scalar>(n.value.shape());
  }

  bool has_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).grad.defined(); }

  /// Adds a flat (storage-order) gradient contribution into v.
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::ArrayBase<Derived>& g) {
    if (Tensor<Scalar>* buf = grad_buffer(v)) buf->data() += g;
  }

  /// Adds a gradient contribution shaped like v's row-major matrix view.
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    if (Tensor<Scalar>* buf = grad_buffer(v)) {
      if (g.rows() != buf->leading_rows() || g.cols() != buf->last_dim())
        throw DimensionError("gradient block does not match " + shape_str(buf->shape()));
      buf->matrix() += g;
    }
  }

  void accumulate(const Var<Scalar>& v, const Tensor<Scalar>& g) { accumulate(v, g.data()); }

  /// Gradient buffer of v, created zeroed on first use; null when v needs no gradient.
  Tensor<Scalar>* grad_buffer(const Var<Scalar>& v) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return nullptr;
    if (!n.grad.defined()) n.grad = Tensor<Scalar>(n.value.shape());
    return &n.grad;
  }

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward rule in
  /// reverse order. root must be a single-element tensor.
  void backward(const Var<Scalar>& root) {
    Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) throw DimensionError("backward root must be a scalar, got shape " + shape_str(r.value.shape()));
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
    if (!r.requires_grad) return;
    r.grad = Tensor<Scalar>::constant(r.value.shape(), Scalar(1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.defined()) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>(), requires_grad, std::move(backward)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // deque keeps value references stable while the tape grows
  std::deque<Node> nodes_;
};

}  // namespace deepmim
