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

#include "moelink/matching.hpp"

#include <cmath>

#include "moelink/error.hpp"

namespace moelink::matching {

AttentionParams::AttentionParams(int dim, Rng& rng, double scale)
    : wq(InitWeights(dim, dim, rng, scale)),
      wk(InitWeights(dim, dim, rng, scale)),
      wv(InitWeights(dim, dim, rng, scale)) {}

AttentionParams AttentionParams::Identity(int dim) {
  AttentionParams p;
  p.wq = Tensor(Matrix::Identity(dim, dim));
  p.wk = Tensor(Matrix::Identity(dim, dim));
  p.wv = Tensor(Matrix::Identity(dim, dim));
  return p;
}

ad::Var CoarseMatch(ad::Var h_e, ad::Var h_m) {
  if (h_e.value().size() != h_m.value().size()) {
    throw ShapeError("coarse match: lengths " + std::to_string(h_e.cols()) +
                     " and " + std::to_string(h_m.cols()));
  }
  return ad::Dot(h_e, h_m);
}

FineKeys MakeKeys(Binder& bind, AttentionParams& params, ad::Var fine,
                  const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != fine.rows()) {
    throw ShapeError("fine match: mention mask length mismatch");
  }
  return {ad::MatMul(fine, bind(params.wk)), ad::MatMul(fine, bind(params.wv)),
          mask};
}

FineQueries MakeQueries(Binder& bind, AttentionParams& params, ad::Var fine,
                        const Mask& mask, ad::Var coarse) {
  if (static_cast<Eigen::Index>(mask.size()) != fine.rows()) {
    throw ShapeError("fine match: entity mask length mismatch");
  }
  if (coarse.cols() != fine.cols()) {
    throw ShapeError("fine match: coarse width does not match fine width");
  }
  return {ad::MatMul(fine, bind(params.wq)), coarse, mask};
}

FineResult FineMatch(const FineQueries& q, const FineKeys& k) {
  if (q.queries.cols() != k.keys.cols()) {
    throw ShapeError("fine match: query/key widths differ");
  }
  bool any_key = false;
  for (bool b : k.mask) any_key = any_key || b;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.queries.cols()));
  ad::Var logits =
      ad::Scale(ad::MatMul(q.queries, ad::Transpose(k.keys)), inv_sqrt_d);
  ad::Var attn = ad::MaskedSoftmaxRows(logits, k.mask);
  ad::Var g = ad::MaskedMeanRows(ad::MatMul(attn, k.values), q.mask);
  return {ad::Dot(q.coarse, g), !any_key};
}

FineResult FineMatch(Binder& bind, AttentionParams& params, ad::Var entity_fine,
                     const Mask& entity_mask, ad::Var mention_fine,
                     const Mask& mention_mask, ad::Var entity_coarse) {
  return FineMatch(
      MakeQueries(bind, params, entity_fine, entity_mask, entity_coarse),
      MakeKeys(bind, params, mention_fine, mention_mask));
}

ad::Var GatedFuse(Binder& bind, ad::Var coarse, ad::Var other_fine,
                  const Mask& other_mask, LayerNorm& norm) {
  if (coarse.rows() != 1 || coarse.cols() != other_fine.cols()) {
    throw ShapeError("gated fuse: coarse must be 1 x " +
                     std::to_string(other_fine.cols()));
  }
  if (static_cast<Eigen::Index>(other_mask.size()) != other_fine.rows()) {
    throw ShapeError("gated fuse: mask length mismatch");
  }
  ad::Var gated = ad::Mul(ad::Tanh(coarse), coarse);
  ad::Var attn = ad::MaskedSoftmaxRows(
      ad::MatMul(coarse, ad::Transpose(other_fine)), other_mask);
  ad::Var pooled = ad::MatMul(attn, other_fine);
  return norm.Forward(bind, ad::Add(gated, pooled));
}

namespace {

smoe::Enhanced Enhance(Binder& bind, smoe::SmoeBlock* block,
                       const RowVector& coarse, const Matrix& fine,
                       const Mask& mask) {
  ad::Tape& t = bind.tape();
  ad::Var c = t.Constant(coarse);
  ad::Var f = t.Constant(fine);
  if (block == nullptr) return {c, f, mask};
  return smoe::Apply(bind, *block, c, f, mask);
}

}  // namespace

IntraResult IntraScore(const FeatureBundle& mention, const FeatureBundle& entity,
                       smoe::SmoeBlock* block, AttentionParams& attn) {
  if (mention.modality != entity.modality) {
    throw ArgumentError("intra score: modality mismatch");
  }
  ad::Tape tape(false);
  Binder bind(tape);
  auto m = Enhance(bind, block, mention.coarse, mention.fine, mention.mask);
  auto e = Enhance(bind, block, entity.coarse, entity.fine, entity.mask);
  IntraResult r;
  r.cm = CoarseMatch(e.coarse, m.coarse).scalar();
  FineResult fm = FineMatch(bind, attn, e.fine, e.mask, m.fine, m.mask, e.coarse);
  r.fm = fm.score.scalar();
  r.no_valid_keys = fm.no_valid_keys;
  r.s = (r.cm + r.fm) / 2.0;
  return r;
}

InterResult InterScore(const FeatureBundle& mention_text,
                       const FeatureBundle& mention_visual,
                       const FeatureBundle& entity_text,
                       const FeatureBundle& entity_visual,
                       const InterParams& params) {
  if (params.tvm_norm == nullptr || params.vtm_norm == nullptr) {
    throw ArgumentError("inter score: layer norms are required");
  }
  if (mention_text.modality != Modality::kText ||
      entity_text.modality != Modality::kText ||
      mention_visual.modality != Modality::kVisual ||
      entity_visual.modality != Modality::kVisual) {
    throw ArgumentError("inter score: bundles in the wrong slots");
  }
  ad::Tape tape(false);
  Binder bind(tape);
  auto side = [&](const FeatureBundle& text, const FeatureBundle& visual,
                  smoe::SmoeBlock* block, LayerNorm& norm, bool text_gates) {
    const FeatureBundle& gate = text_gates ? text : visual;
    const FeatureBundle& other = text_gates ? visual : text;
    auto x = Enhance(bind, block, gate.coarse, other.fine, other.mask);
    return GatedFuse(bind, x.coarse, x.fine, x.mask, norm);
  };
  InterResult r;
  r.tvm = ad::Dot(side(entity_text, entity_visual, params.tvm_block,
                       *params.tvm_norm, true),
                  side(mention_text, mention_visual, params.tvm_block,
                       *params.tvm_norm, true))
              .scalar();
  r.vtm = ad::Dot(side(entity_text, entity_visual, params.vtm_block,
                       *params.vtm_norm, false),
                  side(mention_text, mention_visual, params.vtm_block,
                       *params.vtm_norm, false))
              .scalar();
  r.s = (r.tvm + r.vtm) / 2.0;
  return r;
}

}  // namespace moelink::matching
