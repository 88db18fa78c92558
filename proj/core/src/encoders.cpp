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

#include "moelink/encoders.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <vector>

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink {

namespace {

RowVector SeededRow(std::uint64_t seed, int dim) {
  Rng rng(seed);
  RowVector row(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) row(i) = rng.Normal() * scale;
  return row;
}

RowVector MaskedMean(const Matrix& fine, const Mask& mask) {
  RowVector out = RowVector::Zero(fine.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < fine.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    out += fine.row(i);
    ++count;
  }
  if (count > 0) out /= count;
  return out;
}

std::mutex& RegistryMutex() {
  static std::mutex mu;
  return mu;
}

AdapterFactory& Registry() {
  static AdapterFactory factory;
  return factory;
}

constexpr std::string_view kPlaceholderKey = "<missing-image>";

}  // namespace

int FeatureBundle::valid_rows() const {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

void FeatureBundle::CheckShape(Eigen::Index max_rows) const {
  if (fine.cols() != coarse.size()) {
    throw ShapeError("bundle: coarse length " + std::to_string(coarse.size()) +
                     " vs fine width " + std::to_string(fine.cols()));
  }
  if (static_cast<Eigen::Index>(mask.size()) != fine.rows()) {
    throw ShapeError("bundle: mask length does not match fine rows");
  }
  if (fine.rows() > max_rows) {
    throw ShapeError("bundle: " + std::to_string(fine.rows()) +
                     " rows exceeds limit " + std::to_string(max_rows));
  }
}

FeatureBundle ToyEncodeText(const std::string& text, int max_len,
                            std::uint64_t seed, int native_dim) {
  if (max_len < 1) throw ArgumentError("max_len must be >= 1");
  std::istringstream in(text);
  std::vector<std::string> tokens{std::istream_iterator<std::string>(in),
                                  std::istream_iterator<std::string>()};
  if (static_cast<int>(tokens.size()) > max_len) tokens.resize(max_len);

  FeatureBundle b;
  b.modality = Modality::kText;
  b.fine = Matrix::Zero(max_len, native_dim);
  b.mask.assign(static_cast<std::size_t>(max_len), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    b.fine.row(static_cast<Eigen::Index>(i)) =
        SeededRow(MixSeed(seed, Fnv1a64(tokens[i])), native_dim);
    b.mask[i] = true;
  }
  b.coarse = MaskedMean(b.fine, b.mask);
  return b;
}

FeatureBundle ToyEncodeImage(const std::optional<std::string>& image_ref,
                             int num_patches, std::uint64_t seed,
                             int native_dim) {
  if (num_patches < 1) throw ArgumentError("num_patches must be >= 1");
  FeatureBundle b;
  b.modality = Modality::kVisual;
  b.fine = Matrix::Zero(num_patches, native_dim);
  b.mask.assign(static_cast<std::size_t>(num_patches), false);
  if (!image_ref) {
    b.fine.row(0) = SeededRow(MixSeed(seed, Fnv1a64(kPlaceholderKey)), native_dim);
    b.mask[0] = true;
  } else {
    std::ifstream in(*image_ref, std::ios::binary);
    if (!in) throw EncodingError("cannot read image " + *image_ref);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    if (in.bad()) throw EncodingError("read failed for image " + *image_ref);
    const std::uint64_t key = MixSeed(seed, Fnv1a64(bytes));
    for (int p = 0; p < num_patches; ++p) {
      b.fine.row(p) = SeededRow(MixSeed(key, static_cast<std::uint64_t>(p)),
                                native_dim);
      b.mask[static_cast<std::size_t>(p)] = true;
    }
  }
  b.coarse = MaskedMean(b.fine, b.mask);
  return b;
}

ToyEncoder::ToyEncoder(int native_dim, int num_patches, std::uint64_t seed,
                       std::string image_root)
    : native_dim_(native_dim),
      num_patches_(num_patches),
      seed_(seed),
      image_root_(std::move(image_root)) {
  if (native_dim < 1) throw ArgumentError("native_dim must be >= 1");
}

FeatureBundle ToyEncoder::EncodeText(const std::string& text, int max_len,
                                     Side side) const {
  FeatureBundle b = ToyEncodeText(text, max_len, seed_, native_dim_);
  b.side = side;
  return b;
}

FeatureBundle ToyEncoder::EncodeImage(
    const std::optional<std::string>& image_ref, Side side) const {
  std::optional<std::string> path = image_ref;
  if (path && !image_root_.empty() &&
      std::filesystem::path(*path).is_relative()) {
    path = (std::filesystem::path(image_root_) / *path).string();
  }
  FeatureBundle b = ToyEncodeImage(path, num_patches_, seed_, native_dim_);
  b.side = side;
  return b;
}

FeatureBundle ProjectToModelDim(const FeatureBundle& bundle,
                                const Matrix& weights) {
  if (weights.rows() != bundle.dim() || bundle.fine.cols() != bundle.dim()) {
    throw ShapeError("projection: weights are " +
                     std::to_string(weights.rows()) + "x" +
                     std::to_string(weights.cols()) + ", features have width " +
                     std::to_string(bundle.dim()));
  }
  FeatureBundle out;
  out.modality = bundle.modality;
  out.side = bundle.side;
  out.mask = bundle.mask;
  out.coarse = bundle.coarse * weights;
  out.fine = bundle.fine * weights;
  return out;
}

void RegisterPretrainedAdapter(AdapterFactory factory) {
  std::lock_guard<std::mutex> lock(RegistryMutex());
  Registry() = std::move(factory);
}

std::unique_ptr<EncoderAdapter> MakeEncoder(const RunConfig& config) {
  if (config.encoder == "toy") {
    return std::make_unique<ToyEncoder>(config.native_dim, config.num_patches,
                                        config.seed, config.image_root);
  }
  if (config.encoder == "pretrained") {
    std::lock_guard<std::mutex> lock(RegistryMutex());
    if (!Registry()) {
      throw ArgumentError(
          "encoder 'pretrained' requested but no adapter is registered");
    }
    auto adapter = Registry()(config);
    if (adapter->native_dim() != config.native_dim) {
      throw ArgumentError("pretrained adapter native_dim " +
                          std::to_string(adapter->native_dim()) +
                          " does not match config native_dim " +
                          std::to_string(config.native_dim));
    }
    return adapter;
  }
  throw ArgumentError("unknown encoder '" + config.encoder + "'");
}

}  // namespace moelink
