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

#ifndef MOELINK_TRAINING_HPP_
#define MOELINK_TRAINING_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moelink/autodiff.hpp"
#include "moelink/config.hpp"
#include "moelink/data.hpp"
#include "moelink/model.hpp"

namespace moelink::training {

// -log softmax(row)[positive], via log-sum-exp. Throws ArgumentError on a
// bad index, NumericError on non-finite scores.
double ContrastiveLoss(std::span<const double> row, int positive);
ad::Var ContrastiveLoss(ad::Var row, int positive);

// Which of the four channels contribute to the total.
struct LossToggles {
  std::array<bool, kNumChannels> enabled{true, true, true, true};
  static LossToggles FromConfig(const RunConfig& config);
};

struct LossBreakdown {
  double total = 0;
  std::array<std::optional<double>, kNumChannels> channel;

  nlohmann::json ToJson() const;
};

// Per channel: mean over rows of ContrastiveLoss(row, positives[row]).
// With empty `positives` the matrices must be square and the diagonal is
// positive. Disabled channels may be empty matrices.
LossBreakdown TotalLoss(const std::array<Matrix, kNumChannels>& scores,
                        const LossToggles& toggles,
                        std::span<const int> positives = {});

struct LossVars {
  ad::Var total;
  std::array<ad::Var, kNumChannels> channel;  // invalid when disabled
};
LossVars TotalLoss(const std::array<ad::Var, kNumChannels>& scores,
                   const LossToggles& toggles, std::span<const int> positives);

// Decoupled weight decay Adam.
class AdamW {
 public:
  explicit AdamW(const RunConfig& config);

  // Applies one update from the accumulated gradients. Tensors whose name
  // is in `frozen` are left untouched.
  void Step(ModelParams& params, const std::vector<std::string>& frozen = {});
  std::int64_t steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  std::array<std::optional<double>, kNumChannels> channel;
  std::optional<double> val_mrr;
  double wall_seconds = 0;

  nlohmann::ordered_json ToJson() const;
};

struct TrainResult {
  Model model;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0: initial parameters
  std::optional<double> best_val_mrr;
};

struct TrainHooks {
  // Called after each epoch's record is complete.
  std::function<void(const EpochRecord&)> on_epoch;
};

// Mini-batch training on in-batch negatives. Each batch scores its B
// mentions against the distinct gold entities of the batch. An empty
// validation split keeps the last epoch's parameters.
TrainResult Train(const RunConfig& config, const DatasetSplit& train,
                  const DatasetSplit& valid, const EntityCatalog& catalog,
                  const TrainHooks& hooks = {});

// One gradient evaluation on a batch, for tests and line searches.
LossBreakdown BatchLoss(Model& model, std::span<const MentionRecord> batch,
                        const EntityCatalog& catalog, bool accumulate_grads);

// --- grid search ----------------------------------------------------------

struct GridSpace {
  std::vector<int> experts_K;
  std::vector<int> top_k;
  std::vector<int> embed_dim;
  std::vector<int> max_text_len;
  std::vector<double> learning_rate;

  // The full published lattice crossed with `learning_rates`.
  static GridSpace Full(std::vector<double> learning_rates);
  // {"experts_K": [...], "top_k": [...], "embed_dim": [...],
  //  "max_text_len": [...], "learning_rate": [...]}; absent keys take the
  // full lattice (learning_rate defaults to the base config's value).
  static GridSpace FromJson(const nlohmann::json& doc, double base_lr);
  static GridSpace LoadFile(const std::string& path, double base_lr);

  // Throws ArgumentError for values outside the lattice.
  void Validate() const;
  std::size_t size() const;
  // Serialization order: K, k, d, max_text_len, learning_rate, with the
  // last varying fastest.
  std::vector<RunConfig> Expand(const RunConfig& base) const;
};

inline constexpr std::array<int, 5> kLatticeK{2, 4, 6, 8, 10};
inline constexpr std::array<int, 4> kLatticeTopK{1, 2, 3, 4};
inline constexpr std::array<int, 5> kLatticeDim{48, 64, 80, 96, 112};
inline constexpr std::array<int, 5> kLatticeLen{20, 30, 40, 50, 60};

struct GridEntry {
  std::size_t order = 0;  // position in serialization order
  RunConfig config;
  std::optional<double> val_mrr;
  std::string error;
};

struct GridResult {
  std::vector<GridEntry> leaderboard;  // successes by MRR, then failures
  std::optional<RunConfig> best;

  nlohmann::json ToJson() const;
};

// `budget` caps the number of candidates tried (0 = all).
GridResult GridSearch(const RunConfig& base, const GridSpace& space,
                      const DatasetSplit& train, const DatasetSplit& valid,
                      const EntityCatalog& catalog, std::size_t budget = 0);

}  // namespace moelink::training

#endif  // MOELINK_TRAINING_HPP_
