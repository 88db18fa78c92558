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

#ifndef MOELINK_CHECKPOINT_HPP_
#define MOELINK_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "moelink/config.hpp"
#include "moelink/model.hpp"

namespace moelink {

// Layout (little-endian):
//   "MOELINK\0" | u32 version | str fingerprint | str config-json |
//   u32 n | n x (str name | u64 rows | u64 cols | f64[rows*cols]) |
//   u64 fnv1a64 of all preceding bytes
// where str = u32 length + bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string fingerprint;
  RunConfig config;
  std::vector<CheckpointTensor> tensors;

  std::int64_t ElementCount() const;
};

// Writes to a sibling temp file and renames it into place.
void SaveCheckpoint(ModelParams& params, const RunConfig& config,
                    const std::string& path);

// Whole-file parse with checksum verification; ParseError on any damage.
Checkpoint ReadCheckpoint(const std::string& path);

// CompatibilityError when the stored fingerprint differs from `active`'s.
ModelParams LoadCheckpoint(const std::string& path, const RunConfig& active);

}  // namespace moelink

#endif  // MOELINK_CHECKPOINT_HPP_
