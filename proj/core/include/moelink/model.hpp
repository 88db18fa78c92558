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

#ifndef MOELINK_MODEL_HPP_
#define MOELINK_MODEL_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelink/config.hpp"
#include "moelink/data.hpp"
#include "moelink/encoders.hpp"
#include "moelink/matching.hpp"
#include "moelink/nn.hpp"
#include "moelink/smoe.hpp"

namespace moelink {

// Frozen encoder output for one mention or entity, in native width.
struct EncodedObject {
  FeatureBundle text;
  FeatureBundle visual;
};

// The trainable parameter set. Components of disabled modules are absent.
struct ModelParams {
  Tensor proj_text;    // native_dim x d
  Tensor proj_visual;  // native_dim x d
  std::optional<smoe::SmoeBlock> intra_text;
  std::optional<smoe::SmoeBlock> intra_visual;
  std::optional<smoe::SmoeBlock> inter_tvm;
  std::optional<smoe::SmoeBlock> inter_vtm;
  std::optional<matching::AttentionParams> attn_text;
  std::optional<matching::AttentionParams> attn_visual;
  std::optional<LayerNorm> ln_tvm;
  std::optional<LayerNorm> ln_vtm;

  // Deterministic in config.seed.
  static ModelParams Initialize(const RunConfig& config);

  // Calls fn(name, Tensor&) for every tensor in a fixed order.
  template <typename Fn>
  void VisitParams(Fn&& fn) {
    fn(std::string("proj_text"), proj_text);
    fn(std::string("proj_visual"), proj_visual);
    if (intra_text) intra_text->VisitParams("intra_text", fn);
    if (attn_text) attn_text->VisitParams("attn_text", fn);
    if (intra_visual) intra_visual->VisitParams("intra_visual", fn);
    if (attn_visual) attn_visual->VisitParams("attn_visual", fn);
    if (inter_tvm) inter_tvm->VisitParams("inter_tvm", fn);
    if (inter_vtm) inter_vtm->VisitParams("inter_vtm", fn);
    if (ln_tvm) ln_tvm->VisitParams("ln_tvm", fn);
    if (ln_vtm) ln_vtm->VisitParams("ln_vtm", fn);
  }

  std::int64_t ParamCount();
  void ZeroGrad();
  bool AllFinite();
};

// Mention-side quantities that do not depend on the entity.
struct MentionSide {
  ad::Var text_coarse;
  matching::FineKeys text_keys;
  ad::Var visual_coarse;
  matching::FineKeys visual_keys;
  ad::Var tvm;
  ad::Var vtm;
};

// Entity-side counterpart.
struct EntitySide {
  ad::Var text_coarse;
  matching::FineQueries text_queries;
  ad::Var visual_coarse;
  matching::FineQueries visual_queries;
  ad::Var tvm;
  ad::Var vtm;
};

// Tape nodes of one pair's scores. Fields of disabled modules are invalid.
struct ScoreVars {
  ad::Var cm_T, fm_T, cm_V, fm_V, tvm, vtm;
  ad::Var s_T, s_V, s_C, s_O;
  bool degenerate_fine = false;
};

matching::ScoreSet ToScoreSet(const ScoreVars& v);

class Model {
 public:
  explicit Model(const RunConfig& config);
  Model(const RunConfig& config, ModelParams params);

  const RunConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const EncoderAdapter& encoder() const { return *encoder_; }

  // Text inputs follow "<word> <sep> <context>" and "<name> <sep> <attrs>".
  EncodedObject EncodeMention(const MentionRecord& m) const;
  EncodedObject EncodeEntity(const EntityRecord& e) const;

  // Binds every parameter up front. Required before Tape::Rewind() is
  // used, so that no cached binding points past a rewind mark.
  void BindParams(Binder& bind);

  MentionSide BuildMentionSide(Binder& bind, const EncodedObject& m);
  EntitySide BuildEntitySide(Binder& bind, const EncodedObject& e);
  ScoreVars ScorePairVars(const MentionSide& m, const EntitySide& e) const;

  matching::ScoreSet ScorePair(const MentionRecord& m, const EntityRecord& e);
  // Row-major |mentions| x |entities|.
  std::vector<matching::ScoreSet> ScoreMatrix(
      std::span<const MentionRecord> mentions,
      std::span<const EntityRecord> entities);

 private:
  ad::Var Project(Binder& bind, Tensor& weights, const Matrix& x);

  RunConfig config_;
  ModelParams params_;
  std::unique_ptr<EncoderAdapter> encoder_;
};

}  // namespace moelink

#endif  // MOELINK_MODEL_HPP_
