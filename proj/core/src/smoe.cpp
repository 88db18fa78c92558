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

#include "moelink/smoe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moelink/error.hpp"

namespace moelink::smoe {

SmoeLayer::SmoeLayer(int dim, int num_experts, int k, int hidden, Rng& rng,
                     double scale)
    : router(InitWeights(dim, num_experts, rng, scale)), top_k(k) {
  if (k < 1 || k > num_experts) {
    throw ArgumentError("top_k must be in [1, K]");
  }
  experts.reserve(static_cast<std::size_t>(num_experts));
  for (int i = 0; i < num_experts; ++i) {
    experts.emplace_back(dim, hidden, dim, rng, scale);
  }
}

SmoeBlock::SmoeBlock(int dim, int num_experts, int top_k, int num_layers,
                     int expert_hidden, int fuse_hidden, Rng& rng,
                     double scale)
    : fuse(dim, fuse_hidden, dim, rng, scale) {
  layers.reserve(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    layers.emplace_back(dim, num_experts, top_k, expert_hidden, rng, scale);
  }
}

std::vector<int> SelectTopK(const RowVector& weights, int k) {
  std::vector<int> idx(static_cast<std::size_t>(weights.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto take = static_cast<std::size_t>(
      std::min<Eigen::Index>(std::max(k, 0), weights.size()));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take),
                    idx.end(), [&](int a, int b) {
                      if (weights(a) != weights(b)) return weights(a) > weights(b);
                      return a < b;
                    });
  idx.resize(take);
  return idx;
}

GateVector Route(const RowVector& token, const SmoeLayer& layer) {
  if (token.size() != layer.dim()) {
    throw ShapeError("route: token width " + std::to_string(token.size()) +
                     " vs router " + std::to_string(layer.dim()));
  }
  if (!token.allFinite()) throw NumericError("route: non-finite token");
  RowVector logits = token * layer.router.value;
  const double mx = logits.maxCoeff();
  RowVector e = (logits.array() - mx).exp().matrix();
  GateVector g;
  g.weights = e / e.sum();
  g.selected = SelectTopK(g.weights, layer.top_k);
  return g;
}

Fused Fuse(Binder& bind, Mlp& mlp, ad::Var fine, const Mask& fine_mask,
           ad::Var coarse) {
  if (coarse.rows() != 1 || coarse.cols() != fine.cols()) {
    throw ShapeError("fuse: coarse is " + std::to_string(coarse.rows()) + "x" +
                     std::to_string(coarse.cols()) + ", fine width is " +
                     std::to_string(fine.cols()));
  }
  if (static_cast<Eigen::Index>(fine_mask.size()) != fine.rows()) {
    throw ShapeError("fuse: mask length does not match fine rows");
  }
  if (mlp.in_dim() != fine.cols()) {
    throw ShapeError("fuse: MLP input width does not match features");
  }
  Fused f;
  f.tokens = mlp.Forward(bind, ad::ConcatRows(fine, coarse));
  f.coarse_slot = fine.rows();
  f.mask = fine_mask;
  f.mask.push_back(true);
  return f;
}

namespace {

ad::Var LayerForward(Binder& bind, SmoeLayer& layer, ad::Var tokens,
                     const Mask& mask, const Eigen::MatrixXi* fixed,
                     Eigen::MatrixXi* used, std::vector<long>* rows_out,
                     std::vector<long>* calls_out) {
  const Eigen::Index n = tokens.rows();
  const int num_experts = layer.num_experts();
  if (tokens.cols() != layer.dim()) {
    throw ShapeError("smoe: token width " + std::to_string(tokens.cols()) +
                     " vs layer " + std::to_string(layer.dim()));
  }
  if (!tokens.value().allFinite()) {
    throw NumericError("smoe: non-finite token values");
  }

  std::vector<int> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) active.push_back(static_cast<int>(i));
  }
  ad::Var x = ad::GatherRows(tokens, active);
  ad::Var gates = ad::MaskedSoftmaxRows(
      ad::MatMul(x, bind(layer.router)),
      Mask(static_cast<std::size_t>(num_experts), true));

  Eigen::MatrixXi selected = Eigen::MatrixXi::Zero(x.rows(), num_experts);
  if (fixed != nullptr) {
    if (fixed->rows() != x.rows() || fixed->cols() != num_experts) {
      throw ShapeError("smoe: fixed routing does not match token count");
    }
    selected = *fixed;
  } else {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (int e : SelectTopK(gates.value().row(r), layer.top_k)) {
        selected(r, e) = 1;
      }
    }
  }
  if (used != nullptr) *used = selected;
  ad::Var weights = ad::TopKRenormalize(gates, selected);

  std::vector<ad::Var> parts;
  for (int e = 0; e < num_experts; ++e) {
    std::vector<int> rows;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (selected(r, e)) rows.push_back(static_cast<int>(r));
    }
    if (rows.empty()) continue;
    if (rows_out) (*rows_out)[static_cast<std::size_t>(e)] += static_cast<long>(rows.size());
    if (calls_out) (*calls_out)[static_cast<std::size_t>(e)] += 1;
    ad::Var out = layer.experts[static_cast<std::size_t>(e)].Forward(
        bind, ad::GatherRows(x, rows));
    ad::Var w = ad::GatherRows(ad::Column(weights, e), rows);
    parts.push_back(ad::ScatterRows(ad::MulColumn(out, w), rows, x.rows()));
  }
  ad::Var mixed = parts.empty() ? ad::Scale(x, 0.0) : ad::AddN(parts);
  return ad::ScatterRows(mixed, active, n);
}

}  // namespace

ad::Var Forward(Binder& bind, std::vector<SmoeLayer>& layers, ad::Var tokens,
                const Mask& mask, const Routing* fixed, Routing* used,
                SmoeStats* stats) {
  if (static_cast<Eigen::Index>(mask.size()) != tokens.rows()) {
    throw ShapeError("smoe: mask length does not match token rows");
  }
  if (fixed != nullptr && fixed->layers.size() != layers.size()) {
    throw ShapeError("smoe: fixed routing has wrong layer count");
  }
  if (used != nullptr) used->layers.assign(layers.size(), Eigen::MatrixXi());
  if (stats != nullptr) {
    stats->expert_rows.resize(layers.size());
    stats->expert_calls.resize(layers.size());
  }
  ad::Var h = tokens;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<long>* rows_out = nullptr;
    std::vector<long>* calls_out = nullptr;
    if (stats != nullptr) {
      stats->expert_rows[l].resize(layers[l].experts.size(), 0);
      stats->expert_calls[l].resize(layers[l].experts.size(), 0);
      rows_out = &stats->expert_rows[l];
      calls_out = &stats->expert_calls[l];
    }
    h = LayerForward(bind, layers[l], h, mask,
                     fixed ? &fixed->layers[l] : nullptr,
                     used ? &used->layers[l] : nullptr, rows_out, calls_out);
  }
  return h;
}

std::pair<ad::Var, ad::Var> Split(ad::Var tokens, Eigen::Index coarse_slot) {
  const Eigen::Index n = tokens.rows();
  if (coarse_slot < 0 || coarse_slot >= n) {
    throw ShapeError("split: slot " + std::to_string(coarse_slot) +
                     " out of range for " + std::to_string(n) + " rows");
  }
  ad::Var h = ad::SliceRows(tokens, coarse_slot, 1);
  ad::Var fine;
  if (coarse_slot == n - 1) {
    fine = ad::SliceRows(tokens, 0, n - 1);
  } else if (coarse_slot == 0) {
    fine = ad::SliceRows(tokens, 1, n - 1);
  } else {
    fine = ad::ConcatRows(ad::SliceRows(tokens, 0, coarse_slot),
                          ad::SliceRows(tokens, coarse_slot + 1,
                                        n - coarse_slot - 1));
  }
  return {h, fine};
}

Enhanced Apply(Binder& bind, SmoeBlock& block, ad::Var coarse, ad::Var fine,
               const Mask& mask, const Routing* fixed, Routing* used,
               SmoeStats* stats) {
  Fused fused = Fuse(bind, block.fuse, fine, mask, coarse);
  ad::Var q = Forward(bind, block.layers, fused.tokens, fused.mask, fixed,
                      used, stats);
  auto [h, rest] = Split(q, fused.coarse_slot);
  return {h, rest, mask};
}

}  // namespace moelink::smoe
