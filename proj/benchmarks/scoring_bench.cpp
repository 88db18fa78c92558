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

#include <filesystem>

#include <benchmark/benchmark.h>

#include "moelink/model.hpp"
#include "moelink/random.hpp"
#include "moelink/smoe.hpp"
#include "moelink/synthetic.hpp"

namespace moelink {
namespace {

void BM_SmoeForward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int experts = static_cast<int>(state.range(1));
  Rng rng(1);
  std::vector<smoe::SmoeLayer> layers{smoe::SmoeLayer(d, experts, 2, 2 * d, rng)};
  Matrix p(21, d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.Normal();
  for (auto _ : state) {
    ad::Tape t(false);
    Binder bind(t);
    benchmark::DoNotOptimize(
        smoe::Forward(bind, layers, t.Constant(p), Mask(21, true)).value());
  }
}
BENCHMARK(BM_SmoeForward)->Args({48, 4})->Args({96, 4})->Args({96, 8});

// Pair scoring on the toy task: encode once, score every entity.
void BM_ScoreRow(benchmark::State& state) {
  const auto root = std::filesystem::temp_directory_path() / "moelink_bench";
  synthetic::ToyTask task = synthetic::MakeToyTask(root.string(), 1);
  RunConfig cfg = synthetic::ToyConfig(1);
  cfg.image_root = task.image_root;
  Model model(cfg);
  const auto& mention = task.valid.mentions()[0];
  for (auto _ : state) {
    for (const auto& e : task.catalog.entities()) {
      benchmark::DoNotOptimize(model.ScorePair(mention, e));
    }
  }
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(task.catalog.size()));
  std::filesystem::remove_all(root);
}
BENCHMARK(BM_ScoreRow)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace moelink

BENCHMARK_MAIN();
