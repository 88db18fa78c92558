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

#ifndef MOELINK_NN_HPP_
#define MOELINK_NN_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>

#include "moelink/autodiff.hpp"
#include "moelink/random.hpp"

namespace moelink {

// A trainable tensor and its gradient accumulator.
struct Tensor {
  Matrix value;
  Matrix grad;

  Tensor() = default;
  explicit Tensor(Matrix v)
      : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void ZeroGrad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

// Binds Tensors to tape leaves, once per tape.
class Binder {
 public:
  explicit Binder(ad::Tape& tape) : tape_(tape) {}

  ad::Var operator()(Tensor& t);
  ad::Tape& tape() { return tape_; }

 private:
  ad::Tape& tape_;
  std::unordered_map<const Tensor*, ad::Var> bound_;
};

enum class Activation { kGelu, kIdentity };

// y = x W + b, with W stored as in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng, double scale = 1.0);
  static Linear Identity(int dim);

  ad::Var Forward(Binder& bind, ad::Var x);

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

// Two affine maps with an activation between them, applied row-wise.
struct Mlp {
  Linear first;
  Linear second;
  Activation activation = Activation::kGelu;

  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng, double scale = 1.0,
      Activation act = Activation::kGelu);
  // Identity activation with identity weights: an exact identity map.
  static Mlp Identity(int dim);
  // Identity scaled by `factor` (e.g. -1 for a negating expert).
  static Mlp ScaledIdentity(int dim, double factor);

  ad::Var Forward(Binder& bind, ad::Var x);
  // Plain evaluation of one row, for oracles and tests.
  RowVector Apply(const RowVector& x) const;

  Eigen::Index in_dim() const { return first.weight.value.rows(); }
  Eigen::Index hidden_dim() const { return first.weight.value.cols(); }

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    first.VisitParams(prefix + ".fc1", fn);
    second.VisitParams(prefix + ".fc2", fn);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  ad::Var Forward(Binder& bind, ad::Var x);

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

// N(0, scale^2 / fan_in) entries.
Matrix InitWeights(int rows, int cols, Rng& rng, double scale = 1.0);

}  // namespace moelink

#endif  // MOELINK_NN_HPP_
