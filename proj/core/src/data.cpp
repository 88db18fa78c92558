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

#include "moelink/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink {

namespace {

using Json = nlohmann::json;

std::string Where(std::size_t line_no) {
  return "line " + std::to_string(line_no);
}

std::string RequiredString(const Json& doc, const char* key,
                           std::size_t line_no, bool allow_empty) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw ParseError(Where(line_no) + ": missing string field '" + key + "'");
  }
  std::string value = it->get<std::string>();
  if (!allow_empty && value.empty()) {
    throw ParseError(Where(line_no) + ": field '" + key + "' is empty");
  }
  return value;
}

std::optional<std::string> OptionalString(const Json& doc, const char* key,
                                          std::size_t line_no,
                                          bool allow_empty) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw ParseError(Where(line_no) + ": field '" + key +
                     "' must be a string or null");
  }
  std::string value = it->get<std::string>();
  if (!allow_empty && value.empty()) {
    throw ParseError(Where(line_no) + ": field '" + key +
                     "' is empty; use null for absent values");
  }
  return value;
}

Json ParseObject(std::string_view line, std::size_t line_no) {
  Json doc;
  try {
    doc = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ParseError(Where(line_no) + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError(Where(line_no) + ": not an object");
  return doc;
}

bool IsBlank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

template <typename Fn>
void ForEachLine(const std::string& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (IsBlank(line)) continue;
    try {
      fn(line, line_no);
    } catch (const ParseError& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
}

template <typename Range, typename ToJson>
void WriteLines(const std::string& path, const Range& records, ToJson&& fn) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) out << fn(r).dump() << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

std::optional<std::int64_t> OptionalInt(const Json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) {
    throw ParseError(std::string("stats: '") + key + "' must be an integer");
  }
  return it->get<std::int64_t>();
}

}  // namespace

const char* ToString(SplitName s) {
  switch (s) {
    case SplitName::kTrain:
      return "train";
    case SplitName::kValid:
      return "valid";
    case SplitName::kTest:
      return "test";
  }
  return "?";
}

SplitName ParseSplitName(std::string_view s) {
  if (s == "train") return SplitName::kTrain;
  if (s == "valid") return SplitName::kValid;
  if (s == "test") return SplitName::kTest;
  throw ArgumentError("unknown split '" + std::string(s) + "'");
}

DatasetSplit::DatasetSplit(SplitName name, std::vector<MentionRecord> mentions)
    : name_(name), mentions_(std::move(mentions)) {
  std::unordered_set<std::string> ids;
  ids.reserve(mentions_.size());
  for (const auto& m : mentions_) {
    if (!ids.insert(m.id).second) {
      throw IntegrityError("duplicate mention id '" + m.id + "'");
    }
  }
}

EntityCatalog::EntityCatalog(std::vector<EntityRecord> entities)
    : entities_(std::move(entities)) {
  index_.reserve(entities_.size());
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const auto& e = entities_[i];
    if (e.name.empty()) {
      throw ArgumentError("entity '" + e.entity_id + "' has an empty name");
    }
    if (!index_.emplace(e.entity_id, static_cast<int>(i)).second) {
      throw IntegrityError("duplicate entity id '" + e.entity_id + "'");
    }
    if (e.image_ref) ++with_image_;
  }
  image_coverage_ = entities_.empty()
                        ? 0.0
                        : static_cast<double>(with_image_) /
                              static_cast<double>(entities_.size());
}

const EntityRecord* EntityCatalog::Find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entities_[it->second];
}

int EntityCatalog::IndexOf(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

StatsSpec StatsSpec::FromJson(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("stats: spec is not an object");
  StatsSpec s;
  s.mentions = OptionalInt(doc, "mentions");
  s.mentions_with_image = OptionalInt(doc, "mentions_with_image");
  return s;
}

nlohmann::json StatsReport::ToJson() const {
  return {{"mentions", mentions},
          {"mentions_with_image", mentions_with_image},
          {"unresolved_gold", unresolved_gold},
          {"pass", pass},
          {"failures", failures}};
}

DatasetManifest DatasetManifest::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  Json doc;
  try {
    in >> doc;
  } catch (const Json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError(path + ": not an object");
  DatasetManifest m;
  m.name = doc.value("name", std::string());
  m.mentions_with_image = OptionalInt(doc, "mentions_with_image");
  m.entities = OptionalInt(doc, "entities");
  m.entities_with_image = OptionalInt(doc, "entities_with_image");
  if (auto it = doc.find("splits"); it != doc.end()) {
    if (!it->is_object()) throw ParseError(path + ": 'splits' not an object");
    for (const auto& [name, spec] : it->items()) {
      ParseSplitName(name);
      m.splits[name] = StatsSpec::FromJson(spec);
    }
  }
  return m;
}

MentionRecord ParseMentionLine(std::string_view line, std::size_t line_no) {
  const Json doc = ParseObject(line, line_no);
  MentionRecord m;
  m.id = RequiredString(doc, "id", line_no, false);
  m.mention_word = RequiredString(doc, "mention_word", line_no, false);
  m.context = RequiredString(doc, "context", line_no, true);
  m.image_ref = OptionalString(doc, "image", line_no, false);
  m.gold_entity_id = RequiredString(doc, "gold_entity", line_no, false);
  m.enhanced_context = OptionalString(doc, "enhanced_context", line_no, true);
  if (m.enhanced_context &&
      m.enhanced_context->compare(0, m.context.size(), m.context) != 0) {
    throw ParseError(Where(line_no) +
                     ": enhanced_context does not start with context");
  }
  return m;
}

nlohmann::ordered_json MentionToJson(const MentionRecord& m) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["mention_word"] = m.mention_word;
  j["context"] = m.context;
  j["image"] = m.image_ref ? nlohmann::ordered_json(*m.image_ref) : nlohmann::ordered_json(nullptr);
  j["gold_entity"] = m.gold_entity_id;
  j["enhanced_context"] = m.enhanced_context
                              ? nlohmann::ordered_json(*m.enhanced_context)
                              : nlohmann::ordered_json(nullptr);
  return j;
}

EntityRecord ParseEntityLine(std::string_view line, std::size_t line_no) {
  const Json doc = ParseObject(line, line_no);
  EntityRecord e;
  e.entity_id = RequiredString(doc, "entity_id", line_no, false);
  e.name = RequiredString(doc, "name", line_no, false);
  e.attributes = RequiredString(doc, "attributes", line_no, true);
  e.image_ref = OptionalString(doc, "image", line_no, false);
  e.kb_qid = OptionalString(doc, "qid", line_no, false);
  return e;
}

nlohmann::ordered_json EntityToJson(const EntityRecord& e) {
  nlohmann::ordered_json j;
  j["entity_id"] = e.entity_id;
  j["name"] = e.name;
  j["attributes"] = e.attributes;
  j["image"] = e.image_ref ? nlohmann::ordered_json(*e.image_ref) : nlohmann::ordered_json(nullptr);
  j["qid"] = e.kb_qid ? nlohmann::ordered_json(*e.kb_qid) : nlohmann::ordered_json(nullptr);
  return j;
}

DatasetSplit LoadDataset(const std::string& path, SplitName split) {
  std::vector<MentionRecord> mentions;
  ForEachLine(path, [&](const std::string& line, std::size_t line_no) {
    mentions.push_back(ParseMentionLine(line, line_no));
  });
  return DatasetSplit(split, std::move(mentions));
}

void SaveDataset(const DatasetSplit& split, const std::string& path) {
  WriteLines(path, split.mentions(), MentionToJson);
}

EntityCatalog BuildEntityCatalog(const std::string& path) {
  std::vector<EntityRecord> entities;
  ForEachLine(path, [&](const std::string& line, std::size_t line_no) {
    entities.push_back(ParseEntityLine(line, line_no));
  });
  return EntityCatalog(std::move(entities));
}

void SaveCatalog(const EntityCatalog& catalog, const std::string& path) {
  WriteLines(path, catalog.entities(), EntityToJson);
}

StatsReport ValidateDataset(const DatasetSplit& split,
                            const EntityCatalog& catalog,
                            const StatsSpec& expected) {
  StatsReport r;
  for (const auto& m : split.mentions()) {
    ++r.mentions;
    if (m.image_ref) ++r.mentions_with_image;
    if (catalog.Find(m.gold_entity_id) == nullptr) ++r.unresolved_gold;
  }
  auto check = [&](const char* what, std::int64_t got,
                   const std::optional<std::int64_t>& want) {
    if (want && *want != got) {
      r.failures.push_back(std::string(what) + ": expected " +
                           std::to_string(*want) + ", got " +
                           std::to_string(got));
    }
  };
  check("mentions", r.mentions, expected.mentions);
  check("mentions_with_image", r.mentions_with_image,
        expected.mentions_with_image);
  if (r.unresolved_gold > 0) {
    r.failures.push_back("unresolved gold ids: " +
                         std::to_string(r.unresolved_gold));
  }
  r.pass = r.failures.empty();
  return r;
}

DatasetSplit SubsampleLowResource(const DatasetSplit& train, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("fraction must be in (0, 1], got " +
                        std::to_string(fraction));
  }
  const std::size_t n = train.size();
  // The small slack keeps e.g. 0.29 * 100 from flooring to 28.
  const auto keep = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(MixSeed(seed, Fnv1a64("subsample")));
  // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.Below(n - i));
    std::swap(order[i], order[j]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<MentionRecord> out;
  out.reserve(keep);
  for (std::size_t i : order) out.push_back(train.mentions()[i]);
  return DatasetSplit(train.name(), std::move(out));
}

}  // namespace moelink
