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

#ifndef MOELINK_SYNTHETIC_HPP_
#define MOELINK_SYNTHETIC_HPP_

#include <cstdint>
#include <string>

#include "moelink/config.hpp"
#include "moelink/data.hpp"

namespace moelink::synthetic {

// A small linking task where every mention shares a unique name token with
// its gold entity and nothing else distinguishes the pairs. Training and
// validation mentions draw independent contexts from one shared word pool. Even-numbered entities
// (and their mentions) carry an image file written under `dir`.
struct ToyTask {
  EntityCatalog catalog;
  DatasetSplit train;
  DatasetSplit valid;
  std::string image_root;
};

ToyTask MakeToyTask(const std::string& dir, std::uint64_t seed,
                    int num_entities = 20);

// Toy-encoder configuration used for the convergence check.
RunConfig ToyConfig(std::uint64_t seed);

// Record sets with exact counts, for validating the statistics pipeline
// at benchmark scale without the real corpora. Images are path strings
// only; nothing is written for them.
DatasetSplit MakeCountSplit(SplitName name, std::int64_t mentions,
                            std::int64_t with_image, std::int64_t entities);
EntityCatalog MakeCountCatalog(std::int64_t entities, std::int64_t with_image);

}  // namespace moelink::synthetic

#endif  // MOELINK_SYNTHETIC_HPP_
