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

#ifndef MOELINK_CONFIG_HPP_
#define MOELINK_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace moelink {

// Every tunable of a run. Serialised as a flat JSON object whose keys are
// the field names below; unknown keys are rejected on load.
struct RunConfig {
  // Architecture.
  int experts_K = 4;
  int top_k = 2;
  int embed_dim = 48;
  int max_text_len = 20;
  int num_patches = 32;
  int smoe_layers = 1;
  int expert_hidden_mult = 4;
  int fuse_hidden_mult = 1;
  std::string encoder = "toy";
  int native_dim = 64;
  bool train_projection = true;
  double init_scale = 1.0;

  // Module and loss toggles.
  bool use_intra_text = true;
  bool use_intra_visual = true;
  bool use_inter = true;
  bool use_smoe = true;
  bool loss_O = true;
  bool loss_T = true;
  bool loss_V = true;
  bool loss_C = true;

  // Optimisation.
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 10;
  int patience = 0;  // 0 disables early stopping
  std::uint64_t seed = 0;

  // Data.
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string catalog_path;
  std::string image_root;
  std::string out_dir = ".";

  // Mention enhancement.
  std::string kb_path;
  std::string cache_path;
  std::string separator = "[SEP]";
  std::string backend = "mock";
  std::string endpoint;
  std::string model;
  std::uint64_t backend_seed = 0;
  int max_inflight = 4;
  int retry_attempts = 3;
  int retry_base_ms = 200;
  double max_error_fraction = 0.0;

  // Reproducibility labels; fixed values, recorded for auditing.
  std::string prng;
  std::string context_hash;

  int jobs = 1;

  RunConfig();

  // Throws ArgumentError when a value is outside its domain.
  void Validate() const;

  // Canonical text of the fields that determine tensor shapes and wiring.
  std::string ArchitectureString() const;
  // Hex digest of ArchitectureString().
  std::string Fingerprint() const;

  nlohmann::json ToJson() const;
  // Starts from `base` and overrides every key present in `doc`.
  static RunConfig FromJson(const nlohmann::json& doc,
                            const RunConfig& base = RunConfig());
  static RunConfig LoadFile(const std::string& path,
                            const RunConfig& base = RunConfig());
  void SaveFile(const std::string& path) const;
};

// Loss channels of the contrastive objective.
enum class Channel { kOverall = 0, kText = 1, kVisual = 2, kCross = 3 };
inline constexpr int kNumChannels = 4;
const char* ChannelName(Channel c);

// Ablation toggle names accepted by ApplyToggle(): "L_O", "L_T", "L_V",
// "L_C", "IntraMoE-T", "IntraMoE-V", "InterMoE", "SMoE".
std::vector<std::string> KnownToggles();
// Returns a copy of cfg with the named component removed.
RunConfig ApplyToggle(const RunConfig& cfg, const std::string& toggle);

}  // namespace moelink

#endif  // MOELINK_CONFIG_HPP_
