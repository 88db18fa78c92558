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

#ifndef MOELINK_ENCODERS_HPP_
#define MOELINK_ENCODERS_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "moelink/autodiff.hpp"
#include "moelink/config.hpp"

namespace moelink {

enum class Modality { kText, kVisual };
enum class Side { kMention, kEntity };

// Coarse summary vector plus fine token/patch matrix for one modality of
// one object. mask[i] marks row i of `fine` as real content.
struct FeatureBundle {
  RowVector coarse;
  Matrix fine;
  Mask mask;
  Modality modality = Modality::kText;
  Side side = Side::kMention;

  Eigen::Index dim() const { return coarse.size(); }
  Eigen::Index rows() const { return fine.rows(); }
  int valid_rows() const;
  // Throws ShapeError when coarse/fine/mask disagree or rows > max_rows.
  void CheckShape(Eigen::Index max_rows) const;
};

// Native output width the pretrained adapter contract assumes.
inline constexpr int kPretrainedNativeDim = 512;

class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;
  virtual int native_dim() const = 0;
  // Coarse vector is the encoder's sequence-summary output.
  virtual FeatureBundle EncodeText(const std::string& text, int max_len,
                                   Side side) const = 0;
  // nullopt encodes the missing-image placeholder.
  virtual FeatureBundle EncodeImage(const std::optional<std::string>& image_ref,
                                    Side side) const = 0;
};

// Whitespace tokens mapped to seeded Gaussian embeddings; coarse is the
// masked mean of the token rows.
FeatureBundle ToyEncodeText(const std::string& text, int max_len,
                            std::uint64_t seed, int native_dim);

// Present image: num_patches seeded rows keyed by the file's byte digest.
// Absent image: one seeded placeholder row, remaining rows masked out.
// Throws EncodingError when the file cannot be read.
FeatureBundle ToyEncodeImage(const std::optional<std::string>& image_ref,
                             int num_patches, std::uint64_t seed,
                             int native_dim);

class ToyEncoder : public EncoderAdapter {
 public:
  ToyEncoder(int native_dim, int num_patches, std::uint64_t seed,
             std::string image_root = {});

  int native_dim() const override { return native_dim_; }
  FeatureBundle EncodeText(const std::string& text, int max_len,
                           Side side) const override;
  FeatureBundle EncodeImage(const std::optional<std::string>& image_ref,
                            Side side) const override;

 private:
  int native_dim_;
  int num_patches_;
  std::uint64_t seed_;
  std::string image_root_;
};

// Applies `weights` (native_dim x d) to coarse and every fine row.
FeatureBundle ProjectToModelDim(const FeatureBundle& bundle,
                                const Matrix& weights);

// Plug-in point for a pretrained vision-language encoder.
using AdapterFactory =
    std::function<std::unique_ptr<EncoderAdapter>(const RunConfig&)>;
void RegisterPretrainedAdapter(AdapterFactory factory);

// "toy" builds a ToyEncoder; "pretrained" needs a registered factory.
std::unique_ptr<EncoderAdapter> MakeEncoder(const RunConfig& config);

}  // namespace moelink

#endif  // MOELINK_ENCODERS_HPP_
