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

#include "moelink/model.hpp"

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink {

ModelParams ModelParams::Initialize(const RunConfig& config) {
  config.Validate();
  Rng rng(MixSeed(config.seed, Fnv1a64("model-init")));
  const int d = config.embed_dim;
  const double s = config.init_scale;
  auto block = [&]() {
    return smoe::SmoeBlock(d, config.experts_K, config.top_k,
                           config.smoe_layers, config.expert_hidden_mult * d,
                           config.fuse_hidden_mult * d, rng, s);
  };
  ModelParams p;
  p.proj_text = Tensor(InitWeights(config.native_dim, d, rng, s));
  p.proj_visual = Tensor(InitWeights(config.native_dim, d, rng, s));
  if (config.use_intra_text) {
    if (config.use_smoe) p.intra_text = block();
    p.attn_text = matching::AttentionParams(d, rng, s);
  }
  if (config.use_intra_visual) {
    if (config.use_smoe) p.intra_visual = block();
    p.attn_visual = matching::AttentionParams(d, rng, s);
  }
  if (config.use_inter) {
    if (config.use_smoe) {
      p.inter_tvm = block();
      p.inter_vtm = block();
    }
    p.ln_tvm = LayerNorm(d);
    p.ln_vtm = LayerNorm(d);
  }
  return p;
}

std::int64_t ModelParams::ParamCount() {
  std::int64_t n = 0;
  VisitParams([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

void ModelParams::ZeroGrad() {
  VisitParams([](const std::string&, Tensor& t) { t.ZeroGrad(); });
}

bool ModelParams::AllFinite() {
  bool ok = true;
  VisitParams([&](const std::string&, Tensor& t) {
    ok = ok && t.value.allFinite();
  });
  return ok;
}

matching::ScoreSet ToScoreSet(const ScoreVars& v) {
  auto val = [](const ad::Var& x) { return x.valid() ? x.scalar() : 0.0; };
  matching::ScoreSet s;
  s.cm_T = val(v.cm_T);
  s.fm_T = val(v.fm_T);
  s.cm_V = val(v.cm_V);
  s.fm_V = val(v.fm_V);
  s.tvm = val(v.tvm);
  s.vtm = val(v.vtm);
  s.s_T = val(v.s_T);
  s.s_V = val(v.s_V);
  s.s_C = val(v.s_C);
  s.s_O = val(v.s_O);
  s.degenerate_fine = v.degenerate_fine;
  return s;
}

Model::Model(const RunConfig& config)
    : Model(config, ModelParams::Initialize(config)) {}

Model::Model(const RunConfig& config, ModelParams params)
    : config_(config), params_(std::move(params)), encoder_(MakeEncoder(config)) {
  config_.Validate();
  if (encoder_->native_dim() != config_.native_dim) {
    throw ArgumentError("encoder width does not match native_dim");
  }
}

EncodedObject Model::EncodeMention(const MentionRecord& m) const {
  const std::string text =
      m.mention_word + " " + config_.separator + " " + m.EffectiveContext();
  return {encoder_->EncodeText(text, config_.max_text_len, Side::kMention),
          encoder_->EncodeImage(m.image_ref, Side::kMention)};
}

EncodedObject Model::EncodeEntity(const EntityRecord& e) const {
  const std::string text = e.name + " " + config_.separator + " " + e.attributes;
  return {encoder_->EncodeText(text, config_.max_text_len, Side::kEntity),
          encoder_->EncodeImage(e.image_ref, Side::kEntity)};
}

void Model::BindParams(Binder& bind) {
  params_.VisitParams([&](const std::string&, Tensor& t) { bind(t); });
}

ad::Var Model::Project(Binder& bind, Tensor& weights, const Matrix& x) {
  ad::Var w = config_.train_projection ? bind(weights)
                                       : bind.tape().Constant(weights.value);
  return ad::MatMul(bind.tape().Constant(x), w);
}

namespace {

struct Projected {
  ad::Var text_coarse, text_fine, visual_coarse, visual_fine;
  Mask text_mask, visual_mask;
};

smoe::Enhanced MaybeSmoe(Binder& bind, std::optional<smoe::SmoeBlock>& block,
                         ad::Var coarse, ad::Var fine, const Mask& mask) {
  if (!block) return {coarse, fine, mask};
  return smoe::Apply(bind, *block, coarse, fine, mask);
}

}  // namespace

MentionSide Model::BuildMentionSide(Binder& bind, const EncodedObject& m) {
  m.text.CheckShape(config_.max_text_len);
  m.visual.CheckShape(config_.num_patches);
  Projected p{Project(bind, params_.proj_text, m.text.coarse),
              Project(bind, params_.proj_text, m.text.fine),
              Project(bind, params_.proj_visual, m.visual.coarse),
              Project(bind, params_.proj_visual, m.visual.fine),
              m.text.mask, m.visual.mask};
  MentionSide side;
  if (config_.use_intra_text) {
    auto x = MaybeSmoe(bind, params_.intra_text, p.text_coarse, p.text_fine,
                       p.text_mask);
    side.text_coarse = x.coarse;
    side.text_keys = matching::MakeKeys(bind, *params_.attn_text, x.fine, x.mask);
  }
  if (config_.use_intra_visual) {
    auto x = MaybeSmoe(bind, params_.intra_visual, p.visual_coarse,
                       p.visual_fine, p.visual_mask);
    side.visual_coarse = x.coarse;
    side.visual_keys =
        matching::MakeKeys(bind, *params_.attn_visual, x.fine, x.mask);
  }
  if (config_.use_inter) {
    auto t = MaybeSmoe(bind, params_.inter_tvm, p.text_coarse, p.visual_fine,
                       p.visual_mask);
    side.tvm = matching::GatedFuse(bind, t.coarse, t.fine, t.mask,
                                   *params_.ln_tvm);
    auto v = MaybeSmoe(bind, params_.inter_vtm, p.visual_coarse, p.text_fine,
                       p.text_mask);
    side.vtm = matching::GatedFuse(bind, v.coarse, v.fine, v.mask,
                                   *params_.ln_vtm);
  }
  return side;
}

EntitySide Model::BuildEntitySide(Binder& bind, const EncodedObject& e) {
  e.text.CheckShape(config_.max_text_len);
  e.visual.CheckShape(config_.num_patches);
  Projected p{Project(bind, params_.proj_text, e.text.coarse),
              Project(bind, params_.proj_text, e.text.fine),
              Project(bind, params_.proj_visual, e.visual.coarse),
              Project(bind, params_.proj_visual, e.visual.fine),
              e.text.mask, e.visual.mask};
  EntitySide side;
  if (config_.use_intra_text) {
    auto x = MaybeSmoe(bind, params_.intra_text, p.text_coarse, p.text_fine,
                       p.text_mask);
    side.text_coarse = x.coarse;
    side.text_queries = matching::MakeQueries(bind, *params_.attn_text, x.fine,
                                              x.mask, x.coarse);
  }
  if (config_.use_intra_visual) {
    auto x = MaybeSmoe(bind, params_.intra_visual, p.visual_coarse,
                       p.visual_fine, p.visual_mask);
    side.visual_coarse = x.coarse;
    side.visual_queries = matching::MakeQueries(
        bind, *params_.attn_visual, x.fine, x.mask, x.coarse);
  }
  if (config_.use_inter) {
    auto t = MaybeSmoe(bind, params_.inter_tvm, p.text_coarse, p.visual_fine,
                       p.visual_mask);
    side.tvm = matching::GatedFuse(bind, t.coarse, t.fine, t.mask,
                                   *params_.ln_tvm);
    auto v = MaybeSmoe(bind, params_.inter_vtm, p.visual_coarse, p.text_fine,
                       p.text_mask);
    side.vtm = matching::GatedFuse(bind, v.coarse, v.fine, v.mask,
                                   *params_.ln_vtm);
  }
  return side;
}

ScoreVars Model::ScorePairVars(const MentionSide& m, const EntitySide& e) const {
  ScoreVars s;
  std::vector<ad::Var> total;
  if (config_.use_intra_text) {
    s.cm_T = matching::CoarseMatch(e.text_coarse, m.text_coarse);
    auto fm = matching::FineMatch(e.text_queries, m.text_keys);
    s.fm_T = fm.score;
    s.degenerate_fine = s.degenerate_fine || fm.no_valid_keys;
    s.s_T = ad::Scale(ad::Add(s.cm_T, s.fm_T), 0.5);
    total.push_back(s.s_T);
  }
  if (config_.use_intra_visual) {
    s.cm_V = matching::CoarseMatch(e.visual_coarse, m.visual_coarse);
    auto fm = matching::FineMatch(e.visual_queries, m.visual_keys);
    s.fm_V = fm.score;
    s.degenerate_fine = s.degenerate_fine || fm.no_valid_keys;
    s.s_V = ad::Scale(ad::Add(s.cm_V, s.fm_V), 0.5);
    total.push_back(s.s_V);
  }
  if (config_.use_inter) {
    s.tvm = ad::Dot(e.tvm, m.tvm);
    s.vtm = ad::Dot(e.vtm, m.vtm);
    s.s_C = ad::Scale(ad::Add(s.tvm, s.vtm), 0.5);
    total.push_back(s.s_C);
  }
  s.s_O = ad::AddN(total);
  return s;
}

matching::ScoreSet Model::ScorePair(const MentionRecord& m,
                                    const EntityRecord& e) {
  ad::Tape tape(false);
  Binder bind(tape);
  EncodedObject me = EncodeMention(m);
  EncodedObject ee = EncodeEntity(e);
  MentionSide ms = BuildMentionSide(bind, me);
  EntitySide es = BuildEntitySide(bind, ee);
  return ToScoreSet(ScorePairVars(ms, es));
}

std::vector<matching::ScoreSet> Model::ScoreMatrix(
    std::span<const MentionRecord> mentions,
    std::span<const EntityRecord> entities) {
  if (mentions.empty() || entities.empty()) {
    throw ArgumentError("score matrix needs non-empty batches");
  }
  ad::Tape tape(false);
  Binder bind(tape);
  BindParams(bind);
  std::vector<EntitySide> es;
  es.reserve(entities.size());
  for (const auto& e : entities) es.push_back(BuildEntitySide(bind, EncodeEntity(e)));
  std::vector<matching::ScoreSet> out;
  out.reserve(mentions.size() * entities.size());
  for (const auto& m : mentions) {
    const std::size_t mark = tape.size();
    MentionSide ms = BuildMentionSide(bind, EncodeMention(m));
    for (const auto& e : es) out.push_back(ToScoreSet(ScorePairVars(ms, e)));
    tape.Rewind(mark);
  }
  return out;
}

}  // namespace moelink
