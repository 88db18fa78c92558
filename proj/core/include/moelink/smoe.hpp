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

#ifndef MOELINK_SMOE_HPP_
#define MOELINK_SMOE_HPP_

#include <string>
#include <utility>
#include <vector>

#include "moelink/autodiff.hpp"
#include "moelink/nn.hpp"

// Switch mixture-of-experts: fuse the coarse vector into the token matrix
// as one extra row, route every real row to its top-k experts, and split
// the coarse row back out.
namespace moelink::smoe {

// One routing layer: a d x K router and K independent expert FFNs.
struct SmoeLayer {
  Tensor router;
  std::vector<Mlp> experts;
  int top_k = 1;

  SmoeLayer() = default;
  SmoeLayer(int dim, int num_experts, int top_k, int hidden, Rng& rng,
            double scale = 1.0);

  int num_experts() const { return static_cast<int>(experts.size()); }
  Eigen::Index dim() const { return router.value.rows(); }

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".router", router);
    for (std::size_t i = 0; i < experts.size(); ++i) {
      experts[i].VisitParams(prefix + ".expert" + std::to_string(i), fn);
    }
  }
};

// Fuse MLP plus a stack of routing layers with independent parameters.
struct SmoeBlock {
  Mlp fuse;
  std::vector<SmoeLayer> layers;

  SmoeBlock() = default;
  SmoeBlock(int dim, int num_experts, int top_k, int num_layers,
            int expert_hidden, int fuse_hidden, Rng& rng, double scale = 1.0);

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    fuse.VisitParams(prefix + ".fuse", fn);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].VisitParams(prefix + ".layer" + std::to_string(i), fn);
    }
  }
};

// Full-K softmax gate of one token and its top-k selection.
struct GateVector {
  RowVector weights;
  std::vector<int> selected;  // by descending weight, ties to lower index
};

// Indices of the k largest entries; ties go to the lower index.
std::vector<int> SelectTopK(const RowVector& weights, int k);

// Throws NumericError for non-finite token values, ShapeError for a
// width mismatch.
GateVector Route(const RowVector& token, const SmoeLayer& layer);

// Per-layer selection matrices (rows x K, nonzero = selected). Passing a
// recorded Routing back into Forward() holds expert choice fixed, which is
// what finite-difference checks need.
struct Routing {
  std::vector<Eigen::MatrixXi> layers;
};

// Rows each expert evaluated, per layer, plus the number of expert calls.
struct SmoeStats {
  std::vector<std::vector<long>> expert_rows;
  std::vector<std::vector<long>> expert_calls;
};

struct Fused {
  ad::Var tokens;          // (rows + 1) x d
  Eigen::Index coarse_slot;  // always the last row
  Mask mask;               // fine mask with the coarse slot appended
};

// P = MLP([F; f]). Throws ShapeError when widths disagree.
Fused Fuse(Binder& bind, Mlp& mlp, ad::Var fine, const Mask& fine_mask,
           ad::Var coarse);

// Applies every layer of `layers`: for each unmasked row p,
// q = sum over selected i of w_i * FFN_i(p), with the selected gate mass
// renormalised to 1. Masked rows are not routed and come out as zero.
ad::Var Forward(Binder& bind, std::vector<SmoeLayer>& layers, ad::Var tokens,
                const Mask& mask, const Routing* fixed = nullptr,
                Routing* used = nullptr, SmoeStats* stats = nullptr);

// Splits row `coarse_slot` off a token matrix: (h, H) with H keeping the
// remaining rows in order.
std::pair<ad::Var, ad::Var> Split(ad::Var tokens, Eigen::Index coarse_slot);

struct Enhanced {
  ad::Var coarse;  // 1 x d
  ad::Var fine;    // rows x d
  Mask mask;
};

// Fuse -> Forward -> Split.
Enhanced Apply(Binder& bind, SmoeBlock& block, ad::Var coarse, ad::Var fine,
               const Mask& mask, const Routing* fixed = nullptr,
               Routing* used = nullptr, SmoeStats* stats = nullptr);

}  // namespace moelink::smoe

#endif  // MOELINK_SMOE_HPP_
