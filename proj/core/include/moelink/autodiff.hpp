// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MOELINK_AUTODIFF_HPP_
#define MOELINK_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace moelink {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Row mask: true marks real content, false marks padding.
using Mask = std::vector<bool>;

namespace ad {

class Tape;

// Handle to one node on a Tape. Cheap to copy; valid while the tape lives
// and has not been rewound past it.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Convenience for 1x1 results.
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Linear recording of matrix operations for reverse-mode differentiation.
//
// When constructed with record_gradients = false the tape only stores
// forward values; Backward() is then unavailable. Rewind() drops nodes
// appended after a mark, which lets evaluation loops reuse one tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool record_gradients = true)
      : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);

  // Leaf whose gradient is added into *grad_sink by Backward(). The sink
  // must have the same shape as value and outlive the Backward() call.
  Var Parameter(const Matrix& value, Matrix* grad_sink);

  // Appends an op node. Ops call this; user code normally does not.
  Var Push(Matrix value, BackwardFn backward);

  // Seeds d(out)/d(out) = 1 for a 1x1 node and propagates to all leaves.
  void Backward(Var out);

  const Matrix& Value(int id) const { return nodes_[id].value; }
  // Accumulates into a node's gradient, allocating it lazily.
  void AddGrad(int id, const Matrix& g);
  template <typename Fn>
  void UpdateGrad(int id, Fn&& fn) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    fn(n.grad);
  }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void Rewind(std::size_t mark);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Matrix* sink = nullptr;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

// ---- Ops -------------------------------------------------------------------
// All binary ops require both operands on the same tape.

Var MatMul(Var a, Var b);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
// a (n x m) plus a 1 x m row broadcast over rows.
Var AddRow(Var a, Var row);
// Elementwise product.
Var Mul(Var a, Var b);
Var Scale(Var a, double s);
Var Tanh(Var a);
// GELU, tanh approximation.
Var Gelu(Var a);
Var Transpose(Var a);

Var SliceRows(Var a, Eigen::Index start, Eigen::Index count);
Var ConcatRows(Var top, Var bottom);
Var GatherRows(Var a, const std::vector<int>& rows);
// Places the rows of a at positions `rows` of an n-row zero matrix.
Var ScatterRows(Var a, const std::vector<int>& rows, Eigen::Index n);
Var Column(Var a, Eigen::Index j);
// a (n x m) with each row i scaled by w(i, 0); w is n x 1.
Var MulColumn(Var a, Var w);

// Sum of all entries, as 1x1.
Var Sum(Var a);
// Sum of a list of equally shaped nodes; the list must be non-empty.
Var AddN(const std::vector<Var>& terms);
// Dot product of two equally shaped nodes (usually 1 x d), as 1x1.
Var Dot(Var a, Var b);

// Row-wise softmax restricted to columns where column_mask is true.
// Masked columns get exactly 0; a row with no unmasked column is all 0.
Var MaskedSoftmaxRows(Var a, const Mask& column_mask);
// Mean of the rows where row_mask is true, as 1 x m (zero if none).
Var MaskedMeanRows(Var a, const Mask& row_mask);
// Per-row normalisation to zero mean, unit variance, then gamma * x + beta.
// gamma and beta are 1 x m.
Var LayerNormRows(Var a, Var gamma, Var beta, double eps);
// Given row-stochastic gates (n x K) and a selection matrix of the same
// shape (nonzero = selected), renormalises each row over its selected
// entries and zeroes the rest.
Var TopKRenormalize(Var gates, const Eigen::MatrixXi& selected);
// Arranges 1x1 nodes into a rows x cols matrix, row-major order.
Var Stack(const std::vector<Var>& scalars, Eigen::Index rows,
          Eigen::Index cols);
// -log softmax(row)[target] for a 1 x B row, as 1x1.
Var CrossEntropyRow(Var row, Eigen::Index target);

}  // namespace ad
}  // namespace moelink

#endif  // MOELINK_AUTODIFF_HPP_
