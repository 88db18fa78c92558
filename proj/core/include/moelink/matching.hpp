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

#ifndef MOELINK_MATCHING_HPP_
#define MOELINK_MATCHING_HPP_

#include <string>

#include "moelink/autodiff.hpp"
#include "moelink/encoders.hpp"
#include "moelink/nn.hpp"
#include "moelink/smoe.hpp"

namespace moelink::matching {

// Single-head attention projections, each d x d.
struct AttentionParams {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  AttentionParams() = default;
  AttentionParams(int dim, Rng& rng, double scale = 1.0);
  static AttentionParams Identity(int dim);

  template <typename Fn>
  void VisitParams(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
  }
};

// All per-pair scores. The aggregate fields always satisfy
// s_T = (cm_T + fm_T) / 2, s_V = (cm_V + fm_V) / 2, s_C = (tvm + vtm) / 2
// and s_O = sum of the enabled aggregates.
struct ScoreSet {
  double cm_T = 0, fm_T = 0, cm_V = 0, fm_V = 0, tvm = 0, vtm = 0;
  double s_T = 0, s_V = 0, s_C = 0, s_O = 0;
  // Set when a fine match had no unmasked key row and scored 0.
  bool degenerate_fine = false;

  bool operator==(const ScoreSet&) const = default;
};

// h_e . h_m.
ad::Var CoarseMatch(ad::Var h_e, ad::Var h_m);

// Mention-side half of the fine match: K = H_m Wk, V = H_m Wv.
struct FineKeys {
  ad::Var keys;
  ad::Var values;
  Mask mask;
};

// Entity-side half: M = H_e Wq, plus the coarse vector h_e.
struct FineQueries {
  ad::Var queries;
  ad::Var coarse;
  Mask mask;
};

FineKeys MakeKeys(Binder& bind, AttentionParams& params, ad::Var fine,
                  const Mask& mask);
FineQueries MakeQueries(Binder& bind, AttentionParams& params, ad::Var fine,
                        const Mask& mask, ad::Var coarse);

struct FineResult {
  ad::Var score;
  bool no_valid_keys = false;
};

// A = masked_softmax(M K^T / sqrt(d)) over mention rows,
// G = mean over unmasked entity rows of A V, score = h_e . G.
// With no unmasked mention row the score is 0 and no_valid_keys is set.
FineResult FineMatch(const FineQueries& q, const FineKeys& k);

FineResult FineMatch(Binder& bind, AttentionParams& params, ad::Var entity_fine,
                     const Mask& entity_mask, ad::Var mention_fine,
                     const Mask& mention_mask, ad::Var entity_coarse);

// E = LayerNorm(tanh(h) * h + sum_p softmax_p(h . H_p) H_p), the softmax
// restricted to unmasked rows of H.
ad::Var GatedFuse(Binder& bind, ad::Var coarse, ad::Var other_fine,
                  const Mask& other_mask, LayerNorm& norm);

struct IntraResult {
  double cm = 0, fm = 0, s = 0;
  bool no_valid_keys = false;
};

// Same-modality score (text or visual) of a mention/entity bundle pair
// already in model dimension. `block` may be null to skip SMoE.
IntraResult IntraScore(const FeatureBundle& mention, const FeatureBundle& entity,
                       smoe::SmoeBlock* block, AttentionParams& attn);

struct InterResult {
  double tvm = 0, vtm = 0, s = 0;
};

struct InterParams {
  smoe::SmoeBlock* tvm_block = nullptr;  // fuses coarse text + fine visual
  smoe::SmoeBlock* vtm_block = nullptr;  // fuses coarse visual + fine text
  LayerNorm* tvm_norm = nullptr;
  LayerNorm* vtm_norm = nullptr;
};

// Cross-modal score. Text-gated visual fusion on each side gives tvm,
// visual-gated text fusion gives vtm.
InterResult InterScore(const FeatureBundle& mention_text,
                       const FeatureBundle& mention_visual,
                       const FeatureBundle& entity_text,
                       const FeatureBundle& entity_visual,
                       const InterParams& params);

}  // namespace moelink::matching

#endif  // MOELINK_MATCHING_HPP_
