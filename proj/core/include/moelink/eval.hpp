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

#ifndef MOELINK_EVAL_HPP_
#define MOELINK_EVAL_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moelink/config.hpp"
#include "moelink/data.hpp"
#include "moelink/model.hpp"

namespace moelink::eval {

// Catalog entities ordered by descending overall score, ties broken by
// ascending entity id.
struct RankedResult {
  std::string mention_id;
  std::string gold_entity_id;
  std::vector<std::string> entity_ids;
  std::vector<double> scores;
  int gold_rank = 0;  // 1-based
};

// Sorts (id, score) pairs and locates the gold id. Throws IntegrityError
// when the gold id is not among `ids`, NumericError on non-finite scores.
RankedResult RankByScores(const std::string& mention_id,
                          const std::string& gold_id,
                          std::vector<std::string> ids,
                          std::vector<double> scores);

// Scores every catalog entity (or only `candidates` when given).
RankedResult RankEntities(Model& model, const MentionRecord& mention,
                          const EntityCatalog& catalog,
                          const std::vector<std::string>* candidates = nullptr);

struct MentionDetail {
  std::string mention_id;
  int gold_rank = 0;
  double reciprocal_rank = 0;
};

struct MetricsReport {
  double mrr = 0, hits1 = 0, hits3 = 0, hits5 = 0;
  std::size_t n_mentions = 0;
  std::vector<MentionDetail> details;
  std::string config_fingerprint;
  std::vector<std::string> toggles;

  nlohmann::json ToJson() const;
};

// mrr = mean(1 / gold_rank); hits@n = fraction with gold_rank <= n.
// Throws ArgumentError on an empty list.
MetricsReport ComputeMetrics(std::span<const RankedResult> results);

// Per-mention candidate restriction, keyed by mention id.
using CandidateMap = std::map<std::string, std::vector<std::string>>;
// One {"mention_id": str, "candidates": [str]} record per line.
CandidateMap LoadCandidates(const std::string& path);

struct EvalOptions {
  int jobs = 1;
  const CandidateMap* candidates = nullptr;
  std::vector<std::string> toggles;
};

struct Evaluation {
  MetricsReport report;
  std::vector<RankedResult> results;
};

Evaluation EvaluateSplit(Model& model, const DatasetSplit& split,
                         const EntityCatalog& catalog,
                         const EvalOptions& options = EvalOptions());

// {"mrr", "hits": {"1","3","5"}, "n_mentions", "config_fingerprint"} plus
// the toggle set.
void WriteMetrics(const MetricsReport& report, const std::string& path);
// One {"mention_id","gold","gold_rank","top":[{"entity_id","score"}]}
// record per line.
void WritePredictions(std::span<const RankedResult> results,
                      const std::string& path, int top = 3);

struct AblationRow {
  std::string variant;  // "base" or the toggle name
  std::optional<MetricsReport> metrics;
  std::string error;
  double delta_mrr = 0, delta_hits1 = 0, delta_hits3 = 0, delta_hits5 = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  nlohmann::json ToJson() const;
  std::string ToText() const;
};

// Trains and evaluates the base config and one variant per toggle;
// deltas are variant minus base. Variant failures are recorded.
AblationTable AblationSweep(const RunConfig& base,
                            const std::vector<std::string>& toggles,
                            const DatasetSplit& train,
                            const DatasetSplit& valid,
                            const DatasetSplit& eval_split,
                            const EntityCatalog& catalog);

// Analytic floating-point operation count for scoring one mention-entity
// pair from encoder outputs, both sides included, at full sequence
// lengths. A multiply-add counts 2; elementwise and transcendental ops 1.
std::int64_t FlopsPerPair(const RunConfig& config);

struct ComplexityRow {
  std::string variant;
  std::int64_t params = 0;
  std::int64_t flops_per_pair = 0;
};

struct ComplexityReport {
  std::int64_t param_count = 0;
  std::int64_t flops_per_pair = 0;
  std::string convention;
  std::vector<ComplexityRow> rows;  // module-removal breakdown

  nlohmann::json ToJson() const;
  std::string ToText() const;
};

ComplexityReport MakeComplexityReport(ModelParams& params,
                                      const RunConfig& config);

}  // namespace moelink::eval

#endif  // MOELINK_EVAL_HPP_
