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

#include "moelink/config.hpp"

#include <fstream>
#include <sstream>

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink {

namespace {

// Field table shared by ToJson and FromJson so the two cannot drift.
template <typename Visitor>
void VisitFields(RunConfig& c, Visitor&& v) {
  v("experts_K", c.experts_K);
  v("top_k", c.top_k);
  v("embed_dim", c.embed_dim);
  v("max_text_len", c.max_text_len);
  v("num_patches", c.num_patches);
  v("smoe_layers", c.smoe_layers);
  v("expert_hidden_mult", c.expert_hidden_mult);
  v("fuse_hidden_mult", c.fuse_hidden_mult);
  v("encoder", c.encoder);
  v("native_dim", c.native_dim);
  v("train_projection", c.train_projection);
  v("init_scale", c.init_scale);
  v("use_intra_text", c.use_intra_text);
  v("use_intra_visual", c.use_intra_visual);
  v("use_inter", c.use_inter);
  v("use_smoe", c.use_smoe);
  v("loss_O", c.loss_O);
  v("loss_T", c.loss_T);
  v("loss_V", c.loss_V);
  v("loss_C", c.loss_C);
  v("learning_rate", c.learning_rate);
  v("weight_decay", c.weight_decay);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("adam_eps", c.adam_eps);
  v("batch_size", c.batch_size);
  v("epochs", c.epochs);
  v("patience", c.patience);
  v("seed", c.seed);
  v("train_path", c.train_path);
  v("valid_path", c.valid_path);
  v("test_path", c.test_path);
  v("catalog_path", c.catalog_path);
  v("image_root", c.image_root);
  v("out_dir", c.out_dir);
  v("kb_path", c.kb_path);
  v("cache_path", c.cache_path);
  v("separator", c.separator);
  v("backend", c.backend);
  v("endpoint", c.endpoint);
  v("model", c.model);
  v("backend_seed", c.backend_seed);
  v("max_inflight", c.max_inflight);
  v("retry_attempts", c.retry_attempts);
  v("retry_base_ms", c.retry_base_ms);
  v("max_error_fraction", c.max_error_fraction);
  v("prng", c.prng);
  v("context_hash", c.context_hash);
  v("jobs", c.jobs);
}

void Require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError("config: " + what);
}

}  // namespace

RunConfig::RunConfig()
    : prng(std::string(kPrngName)), context_hash(std::string(kHashName)) {}

void RunConfig::Validate() const {
  Require(experts_K >= 1, "experts_K must be >= 1");
  Require(top_k >= 1 && top_k <= experts_K, "top_k must be in [1, experts_K]");
  Require(embed_dim >= 1, "embed_dim must be >= 1");
  Require(max_text_len >= 1, "max_text_len must be >= 1");
  Require(num_patches >= 1, "num_patches must be >= 1");
  Require(smoe_layers >= 1, "smoe_layers must be >= 1");
  Require(expert_hidden_mult >= 1, "expert_hidden_mult must be >= 1");
  Require(fuse_hidden_mult >= 1, "fuse_hidden_mult must be >= 1");
  Require(native_dim >= 1, "native_dim must be >= 1");
  Require(encoder == "toy" || encoder == "pretrained",
          "encoder must be toy|pretrained");
  Require(learning_rate > 0.0, "learning_rate must be > 0");
  Require(weight_decay >= 0.0, "weight_decay must be >= 0");
  Require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must be in [0,1)");
  Require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must be in [0,1)");
  Require(batch_size >= 1, "batch_size must be >= 1");
  Require(epochs >= 0, "epochs must be >= 0");
  Require(patience >= 0, "patience must be >= 0");
  Require(use_intra_text || use_intra_visual || use_inter,
          "at least one matching module must be enabled");
  Require(backend == "mock" || backend == "http", "backend must be mock|http");
  Require(max_inflight >= 1, "max_inflight must be >= 1");
  Require(retry_attempts >= 1, "retry_attempts must be >= 1");
  Require(max_error_fraction >= 0.0 && max_error_fraction <= 1.0,
          "max_error_fraction must be in [0,1]");
  Require(prng == kPrngName, "prng must be " + std::string(kPrngName));
  Require(context_hash == kHashName,
          "context_hash must be " + std::string(kHashName));
  Require(jobs >= 1, "jobs must be >= 1");
}

std::string RunConfig::ArchitectureString() const {
  std::ostringstream os;
  os << "K=" << experts_K << ";k=" << top_k << ";d=" << embed_dim
     << ";L=" << max_text_len << ";P=" << num_patches
     << ";layers=" << smoe_layers << ";hid=" << expert_hidden_mult
     << ";fuse=" << fuse_hidden_mult << ";enc=" << encoder
     << ";native=" << native_dim << ";T=" << use_intra_text
     << ";V=" << use_intra_visual << ";C=" << use_inter
     << ";S=" << use_smoe;
  return os.str();
}

std::string RunConfig::Fingerprint() const {
  return HexDigest(Fnv1a64(ArchitectureString()));
}

nlohmann::json RunConfig::ToJson() const {
  nlohmann::json doc = nlohmann::json::object();
  RunConfig copy = *this;
  VisitFields(copy, [&](const char* key, auto& field) { doc[key] = field; });
  return doc;
}

RunConfig RunConfig::FromJson(const nlohmann::json& doc,
                              const RunConfig& base) {
  if (!doc.is_object()) throw ParseError("config: document is not an object");
  RunConfig c = base;
  std::size_t seen = 0;
  VisitFields(c, [&](const char* key, auto& field) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    ++seen;
    try {
      it->get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("config: bad value for '") + key +
                       "': " + e.what());
    }
  });
  if (seen != doc.size()) {
    RunConfig probe;
    nlohmann::json known = probe.ToJson();
    for (const auto& [key, _] : doc.items()) {
      if (!known.contains(key)) {
        throw ParseError("config: unknown key '" + key + "'");
      }
    }
  }
  return c;
}

RunConfig RunConfig::LoadFile(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw LoadError("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config: " + path + ": " + e.what());
  }
  return FromJson(doc, base);
}

void RunConfig::SaveFile(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path);
  out << ToJson().dump(2) << "\n";
  if (!out) throw IoError("config: write failed for " + path);
}

const char* ChannelName(Channel c) {
  switch (c) {
    case Channel::kOverall:
      return "L_O";
    case Channel::kText:
      return "L_T";
    case Channel::kVisual:
      return "L_V";
    case Channel::kCross:
      return "L_C";
  }
  return "?";
}

std::vector<std::string> KnownToggles() {
  return {"L_O", "L_T", "L_V", "L_C", "IntraMoE-T", "IntraMoE-V",
          "InterMoE", "SMoE"};
}

RunConfig ApplyToggle(const RunConfig& cfg, const std::string& toggle) {
  RunConfig c = cfg;
  if (toggle == "L_O") {
    c.loss_O = false;
  } else if (toggle == "L_T") {
    c.loss_T = false;
  } else if (toggle == "L_V") {
    c.loss_V = false;
  } else if (toggle == "L_C") {
    c.loss_C = false;
  } else if (toggle == "IntraMoE-T") {
    c.use_intra_text = false;
  } else if (toggle == "IntraMoE-V") {
    c.use_intra_visual = false;
  } else if (toggle == "InterMoE") {
    c.use_inter = false;
  } else if (toggle == "SMoE") {
    c.use_smoe = false;
  } else {
    throw ArgumentError("unknown toggle '" + toggle + "'");
  }
  return c;
}

}  // namespace moelink
