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

#ifndef MOELINK_DATA_HPP_
#define MOELINK_DATA_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace moelink {

// One mention with its multimodal context. Absent images are nullopt,
// never an empty string.
struct MentionRecord {
  std::string id;
  std::string mention_word;
  std::string context;
  std::optional<std::string> image_ref;
  std::string gold_entity_id;
  std::optional<std::string> enhanced_context;

  // Text fed to the mention-side encoder: the enhanced context when
  // present, the raw context otherwise.
  const std::string& EffectiveContext() const {
    return enhanced_context ? *enhanced_context : context;
  }

  bool operator==(const MentionRecord&) const = default;
};

struct EntityRecord {
  std::string entity_id;
  std::string name;
  std::string attributes;
  std::optional<std::string> image_ref;
  std::optional<std::string> kb_qid;

  bool operator==(const EntityRecord&) const = default;
};

enum class SplitName { kTrain, kValid, kTest };
const char* ToString(SplitName s);
SplitName ParseSplitName(std::string_view s);

class DatasetSplit {
 public:
  // Throws IntegrityError on duplicate mention ids.
  DatasetSplit(SplitName name, std::vector<MentionRecord> mentions);

  SplitName name() const { return name_; }
  const std::vector<MentionRecord>& mentions() const { return mentions_; }
  std::size_t size() const { return mentions_.size(); }
  bool empty() const { return mentions_.empty(); }

 private:
  SplitName name_;
  std::vector<MentionRecord> mentions_;
};

class EntityCatalog {
 public:
  EntityCatalog() = default;
  // Throws IntegrityError on duplicate ids, ArgumentError on empty names.
  explicit EntityCatalog(std::vector<EntityRecord> entities);

  // Entities in insertion (file) order.
  const std::vector<EntityRecord>& entities() const { return entities_; }
  std::size_t size() const { return entities_.size(); }
  bool empty() const { return entities_.empty(); }

  const EntityRecord* Find(const std::string& id) const;
  // Position in entities(), or -1.
  int IndexOf(const std::string& id) const;

  // (#entities with image) / (#entities); 0 for an empty catalog.
  double image_coverage() const { return image_coverage_; }
  std::size_t with_image() const { return with_image_; }

 private:
  std::vector<EntityRecord> entities_;
  std::unordered_map<std::string, int> index_;
  std::size_t with_image_ = 0;
  double image_coverage_ = 0.0;
};

// Expected counts for one split; absent fields are not checked.
struct StatsSpec {
  std::optional<std::int64_t> mentions;
  std::optional<std::int64_t> mentions_with_image;

  static StatsSpec FromJson(const nlohmann::json& doc);
};

struct StatsReport {
  std::int64_t mentions = 0;
  std::int64_t mentions_with_image = 0;
  std::int64_t unresolved_gold = 0;
  bool pass = true;
  std::vector<std::string> failures;

  double image_fraction() const {
    return mentions == 0 ? 0.0
                         : static_cast<double>(mentions_with_image) /
                               static_cast<double>(mentions);
  }
  nlohmann::json ToJson() const;
};

// Published statistics of one benchmark: per-split mention counts plus
// dataset-wide totals.
struct DatasetManifest {
  std::string name;
  std::map<std::string, StatsSpec> splits;
  std::optional<std::int64_t> mentions_with_image;
  std::optional<std::int64_t> entities;
  std::optional<std::int64_t> entities_with_image;

  static DatasetManifest Load(const std::string& path);
};

MentionRecord ParseMentionLine(std::string_view line, std::size_t line_no);
nlohmann::ordered_json MentionToJson(const MentionRecord& m);
EntityRecord ParseEntityLine(std::string_view line, std::size_t line_no);
nlohmann::ordered_json EntityToJson(const EntityRecord& e);

// Newline-delimited mention file. Records keep file order.
DatasetSplit LoadDataset(const std::string& path, SplitName split);
void SaveDataset(const DatasetSplit& split, const std::string& path);

EntityCatalog BuildEntityCatalog(const std::string& path);
void SaveCatalog(const EntityCatalog& catalog, const std::string& path);

// Counts mentions, mentions with image and unresolved gold ids, and
// compares against `expected`. Never throws for count mismatches.
StatsReport ValidateDataset(const DatasetSplit& split,
                            const EntityCatalog& catalog,
                            const StatsSpec& expected);

// Uniform sample without replacement of floor(fraction * |train|)
// mentions, returned in their original order.
DatasetSplit SubsampleLowResource(const DatasetSplit& train, double fraction,
                                  std::uint64_t seed);

}  // namespace moelink

#endif  // MOELINK_DATA_HPP_
