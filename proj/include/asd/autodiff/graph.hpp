// include/asd/autodiff/graph.hpp

// Copyright 2026  The asdloop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over an implicitly recorded DAG.
//
// Every op returns a Var whose node keeps its parents alive and a closure that
// pushes the node's gradient back into them. `backward(loss)` walks the DAG in
// reverse topological order. The engine is instantiated for float (training)
// and double (gradient checking); a single graph is single-writer.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "asd/autodiff/tensor.hpp"

namespace asd::ad {

/// Raised when a NaN/Inf shows up during backward; names the op and node.
class NumericError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::string op;
  std::uint64_t id = 0;
  bool requires_grad = false;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Leaf that never receives gradient.
template <typename T>
Var<T> constant(Tensor<T> value);

/// Leaf that accumulates gradient (a trainable parameter or a probe input).
template <typename T>
Var<T> leaf(Tensor<T> value, std::string name = "leaf");

// Elementwise; shapes must match exactly.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// a [m,k] x b [k,n] -> [m,n]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a [m,k] x b[n,k]^T -> [m,n]
template <typename T> Var<T> matmul_bt(const Var<T>& a, const Var<T>& b);
/// x [n,m] + bias [m] broadcast over rows.
template <typename T> Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias);

/// x [N,C,H,W], w [O,C,KH,KW] -> [N,O,OH,OW]; symmetric zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride,
              std::size_t pad);
/// x [N,C,L], w [O,C,K] -> [N,O,OL].
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride,
              std::size_t pad);

/// Running statistics of a batch-norm layer; updated in training mode.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;
  explicit BatchNormStats(std::size_t channels = 0)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

/// Normalizes over every axis except axis 1 (channels). In training mode the
/// batch statistics are used and `stats` is updated with `momentum`; in eval
/// mode `stats` is used as is.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& stats, bool training, T momentum = T(0.1),
                  T eps = T(1e-5));

/// [N,C,...] -> [N,C] mean over trailing axes.
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

/// Row-wise x / max(||x||, eps) on a [N,D] input.
template <typename T> Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));
/// [N,D],[N,D] -> [N] row-wise dot products.
template <typename T> Var<T> rowwise_dot(const Var<T>& a, const Var<T>& b);
/// [R,S] -> [R] stable log-sum-exp per row.
template <typename T> Var<T> logsumexp_rows(const Var<T>& x);
/// Mean over rows of -sum_c target[r,c] * log_softmax(logits)[r,c].
/// Targets may be soft (rows of mixup label vectors).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& targets);

/// Column concatenation of [N,Di] inputs.
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Column slice [begin, end) of a [N,D] input.
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);
/// Selects rows (first axis) by index; repeated indices accumulate gradient.
template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows);

/// Back-propagates from a single-element loss. Every reachable node with
/// requires_grad gets its gradient accumulated. Throws InvalidArgument for a
/// non-scalar loss and NumericError when a NaN/Inf appears.
template <typename T> void backward(const Var<T>& loss);

}  // namespace asd::ad
