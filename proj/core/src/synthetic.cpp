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

#include "moelink/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink::synthetic {

namespace {

std::string Words(Rng& rng, int n, const std::string& prefix, int vocab) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += prefix + std::to_string(rng.Below(static_cast<std::uint64_t>(vocab)));
  }
  return out;
}

}  // namespace

ToyTask MakeToyTask(const std::string& dir, std::uint64_t seed,
                    int num_entities) {
  if (num_entities < 1) throw ArgumentError("toy task needs >= 1 entity");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  Rng rng(MixSeed(seed, Fnv1a64("toy-task")));
  std::vector<EntityRecord> entities;
  std::vector<MentionRecord> train, valid;
  for (int i = 0; i < num_entities; ++i) {
    const std::string id = "E" + std::to_string(i);
    EntityRecord e;
    e.entity_id = id;
    e.name = "name" + std::to_string(i);
    e.attributes = Words(rng, 3, "attr", 40);
    if (i % 2 == 0) {
      const std::string rel = "images/" + id + ".bin";
      std::ofstream out(fs::path(dir) / rel, std::ios::binary | std::ios::trunc);
      for (int b = 0; b < 64; ++b) out.put(static_cast<char>(rng.Below(256)));
      if (!out) throw IoError("cannot write toy image " + rel);
      e.image_ref = rel;
    }
    for (auto* split : {&train, &valid}) {
      MentionRecord m;
      m.id = (split == &train ? "t" : "v") + std::to_string(i);
      m.mention_word = e.name;
      // Context words come from one small shared pool, so they carry no
      // information about the gold entity.
      m.context = Words(rng, 1, "ctx", 4);
      m.image_ref = e.image_ref;
      m.gold_entity_id = id;
      split->push_back(std::move(m));
    }
    entities.push_back(std::move(e));
  }
  return {EntityCatalog(std::move(entities)),
          DatasetSplit(SplitName::kTrain, std::move(train)),
          DatasetSplit(SplitName::kValid, std::move(valid)), dir};
}

RunConfig ToyConfig(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.experts_K = 4;
  c.top_k = 2;
  c.embed_dim = 48;
  c.max_text_len = 20;
  c.native_dim = 64;
  c.encoder = "toy";
  c.batch_size = 20;
  c.epochs = 50;
  c.learning_rate = 1e-3;
  return c;
}

DatasetSplit MakeCountSplit(SplitName name, std::int64_t mentions,
                            std::int64_t with_image, std::int64_t entities) {
  if (mentions < 0 || with_image < 0 || with_image > mentions || entities < 1) {
    throw ArgumentError("count split: inconsistent counts");
  }
  std::vector<MentionRecord> out;
  out.reserve(static_cast<std::size_t>(mentions));
  const std::string prefix = std::string(ToString(name)) + "-";
  for (std::int64_t i = 0; i < mentions; ++i) {
    MentionRecord m;
    m.id = prefix + std::to_string(i);
    m.mention_word = "w" + std::to_string(i % 997);
    m.context = "context " + std::to_string(i);
    if (i < with_image) m.image_ref = "img/" + m.id + ".jpg";
    m.gold_entity_id = "Q" + std::to_string(i % entities);
    out.push_back(std::move(m));
  }
  return DatasetSplit(name, std::move(out));
}

EntityCatalog MakeCountCatalog(std::int64_t entities, std::int64_t with_image) {
  if (entities < 0 || with_image < 0 || with_image > entities) {
    throw ArgumentError("count catalog: inconsistent counts");
  }
  std::vector<EntityRecord> out;
  out.reserve(static_cast<std::size_t>(entities));
  for (std::int64_t i = 0; i < entities; ++i) {
    EntityRecord e;
    e.entity_id = "Q" + std::to_string(i);
    e.name = "entity " + std::to_string(i);
    if (i < with_image) e.image_ref = "img/" + e.entity_id + ".jpg";
    out.push_back(std::move(e));
  }
  return EntityCatalog(std::move(out));
}

}  // namespace moelink::synthetic
