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

#include "moelink/nn.hpp"

#include <cmath>
#include <numbers>

namespace moelink {

ad::Var Binder::operator()(Tensor& t) {
  auto it = bound_.find(&t);
  if (it != bound_.end()) return it->second;
  if (tape_.recording() &&
      (t.grad.rows() != t.value.rows() || t.grad.cols() != t.value.cols())) {
    t.ZeroGrad();
  }
  ad::Var v = tape_.Parameter(t.value, &t.grad);
  bound_.emplace(&t, v);
  return v;
}

Matrix InitWeights(int rows, int cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  const double sd = scale / std::sqrt(static_cast<double>(rows));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.Normal() * sd;
  }
  return m;
}

Linear::Linear(int in, int out, Rng& rng, double scale)
    : weight(InitWeights(in, out, rng, scale)), bias(Matrix::Zero(1, out)) {}

Linear Linear::Identity(int dim) {
  Linear l;
  l.weight = Tensor(Matrix::Identity(dim, dim));
  l.bias = Tensor(Matrix::Zero(1, dim));
  return l;
}

ad::Var Linear::Forward(Binder& bind, ad::Var x) {
  return ad::AddRow(ad::MatMul(x, bind(weight)), bind(bias));
}

Mlp::Mlp(int in, int hidden, int out, Rng& rng, double scale, Activation act)
    : first(in, hidden, rng, scale), second(hidden, out, rng, scale),
      activation(act) {}

Mlp Mlp::Identity(int dim) { return ScaledIdentity(dim, 1.0); }

Mlp Mlp::ScaledIdentity(int dim, double factor) {
  Mlp m;
  m.first = Linear::Identity(dim);
  m.second = Linear::Identity(dim);
  m.second.weight.value *= factor;
  m.activation = Activation::kIdentity;
  return m;
}

ad::Var Mlp::Forward(Binder& bind, ad::Var x) {
  ad::Var h = first.Forward(bind, x);
  if (activation == Activation::kGelu) h = ad::Gelu(h);
  return second.Forward(bind, h);
}

RowVector Mlp::Apply(const RowVector& x) const {
  RowVector h = x * first.weight.value + first.bias.value.row(0);
  if (activation == Activation::kGelu) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const double v = h(i);
      h(i) = 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v)));
    }
  }
  return h * second.weight.value + second.bias.value.row(0);
}

LayerNorm::LayerNorm(int dim)
    : gamma(Matrix::Ones(1, dim)), beta(Matrix::Zero(1, dim)) {}

ad::Var LayerNorm::Forward(Binder& bind, ad::Var x) {
  return ad::LayerNormRows(x, bind(gamma), bind(beta), eps);
}

}  // namespace moelink
