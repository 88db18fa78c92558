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

#include "moelink/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "moelink/error.hpp"
#include "moelink/training.hpp"

namespace moelink::eval {

RankedResult RankByScores(const std::string& mention_id,
                          const std::string& gold_id,
                          std::vector<std::string> ids,
                          std::vector<double> scores) {
  if (ids.size() != scores.size()) {
    throw ShapeError("rank: " + std::to_string(ids.size()) + " ids vs " +
                     std::to_string(scores.size()) + " scores");
  }
  if (ids.empty()) throw ArgumentError("rank: empty candidate set");
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw NumericError("rank: non-finite score for mention " + mention_id);
    }
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  RankedResult r;
  r.mention_id = mention_id;
  r.gold_entity_id = gold_id;
  r.entity_ids.reserve(ids.size());
  r.scores.reserve(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    r.entity_ids.push_back(std::move(ids[order[i]]));
    r.scores.push_back(scores[order[i]]);
    if (r.entity_ids.back() == gold_id) r.gold_rank = static_cast<int>(i) + 1;
  }
  if (r.gold_rank == 0) {
    throw IntegrityError("mention " + mention_id + ": gold entity " + gold_id +
                         " is not among the ranked entities");
  }
  return r;
}

namespace {

// One thread's view of the model: a tape holding parameter bindings and
// entity sides, rewound after every mention.
class Scorer {
 public:
  Scorer(Model& model, const EntityCatalog& catalog)
      : model_(model), catalog_(catalog), tape_(false), bind_(tape_) {
    model_.BindParams(bind_);
  }

  RankedResult Rank(const MentionRecord& m,
                    const std::vector<std::string>* candidates) {
    if (catalog_.Find(m.gold_entity_id) == nullptr) {
      throw IntegrityError("mention " + m.id + ": gold entity " +
                           m.gold_entity_id + " not in catalog");
    }
    std::vector<int> rows;
    if (candidates != nullptr) {
      for (const auto& id : *candidates) {
        const int i = catalog_.IndexOf(id);
        if (i < 0) {
          throw IntegrityError("mention " + m.id + ": candidate " + id +
                               " not in catalog");
        }
        rows.push_back(i);
      }
    } else {
      rows.resize(catalog_.size());
      std::iota(rows.begin(), rows.end(), 0);
    }
    const std::size_t mark = EnsureEntities(rows);
    MentionSide ms = model_.BuildMentionSide(bind_, model_.EncodeMention(m));
    std::vector<std::string> ids;
    std::vector<double> scores;
    ids.reserve(rows.size());
    scores.reserve(rows.size());
    for (int i : rows) {
      ids.push_back(catalog_.entities()[static_cast<std::size_t>(i)].entity_id);
      scores.push_back(
          model_.ScorePairVars(ms, *sides_[static_cast<std::size_t>(i)])
              .s_O.scalar());
    }
    tape_.Rewind(mark);
    return RankByScores(m.id, m.gold_entity_id, std::move(ids),
                        std::move(scores));
  }

 private:
  // Entity sides are built lazily and kept below the rewind mark.
  std::size_t EnsureEntities(const std::vector<int>& rows) {
    if (sides_.empty()) sides_.resize(catalog_.size());
    for (int i : rows) {
      auto& slot = sides_[static_cast<std::size_t>(i)];
      if (!slot) {
        slot = model_.BuildEntitySide(
            bind_, model_.EncodeEntity(catalog_.entities()[static_cast<std::size_t>(i)]));
      }
    }
    return tape_.size();
  }

  Model& model_;
  const EntityCatalog& catalog_;
  ad::Tape tape_;
  Binder bind_;
  std::vector<std::optional<EntitySide>> sides_;
};

}  // namespace

RankedResult RankEntities(Model& model, const MentionRecord& mention,
                          const EntityCatalog& catalog,
                          const std::vector<std::string>* candidates) {
  if (catalog.empty()) throw ArgumentError("rank: empty catalog");
  Scorer scorer(model, catalog);
  return scorer.Rank(mention, candidates);
}

MetricsReport ComputeMetrics(std::span<const RankedResult> results) {
  if (results.empty()) throw ArgumentError("metrics: no ranked results");
  MetricsReport r;
  r.n_mentions = results.size();
  double rr = 0;
  std::size_t h1 = 0, h3 = 0, h5 = 0;
  for (const auto& x : results) {
    if (x.gold_rank < 1) {
      throw ArgumentError("metrics: mention " + x.mention_id +
                          " has no gold rank");
    }
    const double v = 1.0 / static_cast<double>(x.gold_rank);
    rr += v;
    h1 += x.gold_rank <= 1;
    h3 += x.gold_rank <= 3;
    h5 += x.gold_rank <= 5;
    r.details.push_back({x.mention_id, x.gold_rank, v});
  }
  const double n = static_cast<double>(results.size());
  r.mrr = rr / n;
  r.hits1 = static_cast<double>(h1) / n;
  r.hits3 = static_cast<double>(h3) / n;
  r.hits5 = static_cast<double>(h5) / n;
  return r;
}

nlohmann::json MetricsReport::ToJson() const {
  nlohmann::json j;
  j["mrr"] = mrr;
  j["hits"] = {{"1", hits1}, {"3", hits3}, {"5", hits5}};
  j["n_mentions"] = n_mentions;
  j["config_fingerprint"] = config_fingerprint;
  j["toggles"] = toggles;
  return j;
}

CandidateMap LoadCandidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open candidate file " + path);
  CandidateMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out[j.at("mention_id").get<std::string>()] =
          j.at("candidates").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Evaluation EvaluateSplit(Model& model, const DatasetSplit& split,
                         const EntityCatalog& catalog,
                         const EvalOptions& options) {
  if (split.empty()) throw ArgumentError("evaluate: empty split");
  if (catalog.empty()) throw ArgumentError("evaluate: empty catalog");
  const auto& mentions = split.mentions();
  const std::size_t n = mentions.size();
  const std::size_t jobs = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::max(options.jobs, 1)), 1, n);

  std::vector<RankedResult> results(n);
  std::vector<std::exception_ptr> errors(jobs);
  auto work = [&](std::size_t w) {
    try {
      Scorer scorer(model, catalog);
      for (std::size_t i = w; i < n; i += jobs) {
        const std::vector<std::string>* cands = nullptr;
        if (options.candidates != nullptr) {
          auto it = options.candidates->find(mentions[i].id);
          if (it != options.candidates->end()) cands = &it->second;
        }
        results[i] = scorer.Rank(mentions[i], cands);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  Evaluation ev;
  ev.report = ComputeMetrics(results);
  ev.report.config_fingerprint = model.config().Fingerprint();
  ev.report.toggles = options.toggles;
  ev.results = std::move(results);
  return ev;
}

namespace {

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void WriteMetrics(const MetricsReport& report, const std::string& path) {
  WriteText(path, report.ToJson().dump(2) + "\n");
}

void WritePredictions(std::span<const RankedResult> results,
                      const std::string& path, int top) {
  std::string text;
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["mention_id"] = r.mention_id;
    j["gold"] = r.gold_entity_id;
    j["gold_rank"] = r.gold_rank;
    auto arr = nlohmann::ordered_json::array();
    const std::size_t k =
        std::min(r.entity_ids.size(), static_cast<std::size_t>(std::max(top, 0)));
    for (std::size_t i = 0; i < k; ++i) {
      arr.push_back({{"entity_id", r.entity_ids[i]}, {"score", r.scores[i]}});
    }
    j["top"] = std::move(arr);
    text += j.dump() + "\n";
  }
  WriteText(path, text);
}

AblationTable AblationSweep(const RunConfig& base,
                            const std::vector<std::string>& toggles,
                            const DatasetSplit& train,
                            const DatasetSplit& valid,
                            const DatasetSplit& eval_split,
                            const EntityCatalog& catalog) {
  auto run = [&](const std::string& variant,
                 const RunConfig& cfg) -> AblationRow {
    AblationRow row;
    row.variant = variant;
    try {
      auto trained = training::Train(cfg, train, valid, catalog);
      EvalOptions opts;
      opts.jobs = cfg.jobs;
      if (variant != "base") opts.toggles = {variant};
      row.metrics =
          EvaluateSplit(trained.model, eval_split, catalog, opts).report;
    } catch (const Error& e) {
      row.error = e.what();
    }
    return row;
  };

  AblationTable table;
  table.rows.push_back(run("base", base));
  for (const auto& t : toggles) {
    AblationRow row;
    try {
      row = run(t, ApplyToggle(base, t));
    } catch (const Error& e) {
      row.variant = t;
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  const auto& b = table.rows.front().metrics;
  for (auto& row : table.rows) {
    if (!b || !row.metrics) continue;
    row.delta_mrr = row.metrics->mrr - b->mrr;
    row.delta_hits1 = row.metrics->hits1 - b->hits1;
    row.delta_hits3 = row.metrics->hits3 - b->hits3;
    row.delta_hits5 = row.metrics->hits5 - b->hits5;
  }
  return table;
}

nlohmann::json AblationTable::ToJson() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["variant"] = r.variant;
    if (r.metrics) {
      j["metrics"] = r.metrics->ToJson();
      j["delta"] = {{"mrr", r.delta_mrr},
                    {"hits1", r.delta_hits1},
                    {"hits3", r.delta_hits3},
                    {"hits5", r.delta_hits5}};
    } else {
      j["error"] = r.error;
    }
    arr.push_back(std::move(j));
  }
  return {{"rows", arr}};
}

namespace {

std::string Signed(double v) {
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

std::string Pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

}  // namespace

std::string AblationTable::ToText() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "variant" << std::setw(18) << "MRR"
     << std::setw(18) << "H@1" << std::setw(18) << "H@3" << "H@5\n";
  for (const auto& r : rows) {
    const std::string name = r.variant == "base" ? "base" : "w/o " + r.variant;
    os << std::setw(14) << name;
    if (!r.metrics) {
      os << "FAILED: " << r.error << "\n";
      continue;
    }
    auto cell = [&](double v, double d) {
      std::string s = Pct(v);
      if (r.variant != "base") s += " (" + Signed(d) + ")";
      return s;
    };
    os << std::setw(18) << cell(r.metrics->mrr, r.delta_mrr) << std::setw(18)
       << cell(r.metrics->hits1, r.delta_hits1) << std::setw(18)
       << cell(r.metrics->hits3, r.delta_hits3)
       << cell(r.metrics->hits5, r.delta_hits5) << "\n";
  }
  return os.str();
}

// --- FLOP accounting -------------------------------------------------------

namespace {

using I = std::int64_t;

// Affine map with bias over `rows` rows.
I LinearFlops(I rows, I in, I out) { return rows * (2 * in * out + out); }

I MlpFlops(I rows, I in, I hidden, I out) {
  return LinearFlops(rows, in, hidden) + rows * hidden +
         LinearFlops(rows, hidden, out);
}

// Softmax over a row of n: exp, sum, divide (max-shift ignored).
I SoftmaxFlops(I rows, I n) { return rows * 3 * n; }

// SMoE block over `fine_rows` fine rows plus the fused coarse row.
I SmoeFlops(const RunConfig& c, I fine_rows) {
  const I d = c.embed_dim, K = c.experts_K, k = c.top_k;
  const I rows = fine_rows + 1;
  I f = MlpFlops(rows, d, I{c.fuse_hidden_mult} * d, d);
  const I per_layer =
      rows * 2 * d * K + SoftmaxFlops(rows, K) + rows * 2 * k +
      k * MlpFlops(rows, d, I{c.expert_hidden_mult} * d, d) + rows * k * 2 * d;
  return f + I{c.smoe_layers} * per_layer;
}

I LayerNormFlops(I d) { return 7 * d; }

}  // namespace

std::int64_t FlopsPerPair(const RunConfig& c) {
  const I d = c.embed_dim, n = c.native_dim;
  const I L = c.max_text_len, P = c.num_patches;
  I total = 0;
  // Projections of coarse + fine rows, both objects.
  const I proj = 2 * n * d * ((L + 1) + (P + 1));
  total += 2 * proj;

  auto intra = [&](I rows) {
    I t = 0;
    if (c.use_smoe) t += 2 * SmoeFlops(c, rows);
    t += 2 * rows * 2 * d * d;  // mention keys and values
    t += rows * 2 * d * d;      // entity queries
    t += 2 * d;                 // coarse dot
    t += rows * rows * 2 * d + 2 * rows * rows + SoftmaxFlops(rows, rows) +
         rows * rows * 2 * d;   // logits, scale, softmax, A.V
    t += rows * d + 2 * d;      // mean over entity rows, dot with coarse
    t += 2;                     // (cm + fm) / 2
    return t;
  };
  if (c.use_intra_text) total += intra(L);
  if (c.use_intra_visual) total += intra(P);

  if (c.use_inter) {
    auto fuse = [&](I other_rows) {
      I t = 0;
      if (c.use_smoe) t += SmoeFlops(c, other_rows);
      t += 2 * d;                                // tanh, gate product
      t += other_rows * 2 * d + SoftmaxFlops(1, other_rows) +
           other_rows * 2 * d;                   // attention pool
      t += d + LayerNormFlops(d);
      return t;
    };
    // Each direction: both objects fused, then a dot.
    total += 2 * fuse(P) + 2 * d;  // tvm: text coarse over visual patches
    total += 2 * fuse(L) + 2 * d;  // vtm: visual coarse over text tokens
    total += 2;
  }
  const int terms = int{c.use_intra_text} + int{c.use_intra_visual} +
                    int{c.use_inter};
  total += std::max(terms - 1, 0);
  return total;
}

ComplexityReport MakeComplexityReport(ModelParams& params,
                                      const RunConfig& config) {
  ComplexityReport r;
  r.param_count = params.ParamCount();
  r.flops_per_pair = FlopsPerPair(config);
  r.convention =
      "multiply-add = 2 FLOPs; elementwise and transcendental ops = 1 FLOP "
      "per element; full padded lengths; both objects of the pair included; "
      "encoder backbone excluded";
  r.rows.push_back({"full", r.param_count, r.flops_per_pair});
  for (const char* t : {"IntraMoE-T", "IntraMoE-V", "InterMoE", "SMoE"}) {
    RunConfig v = ApplyToggle(config, t);
    try {
      v.Validate();
    } catch (const ArgumentError&) {
      continue;  // removing this module would leave no scorer
    }
    ComplexityRow row;
    row.variant = std::string("w/o ") + t;
    row.params = ModelParams::Initialize(v).ParamCount();
    row.flops_per_pair = FlopsPerPair(v);
    r.rows.push_back(std::move(row));
  }
  return r;
}

nlohmann::json ComplexityReport::ToJson() const {
  nlohmann::json j;
  j["param_count"] = param_count;
  j["flops_per_pair"] = flops_per_pair;
  j["convention"] = convention;
  auto arr = nlohmann::json::array();
  for (const auto& row : rows) {
    arr.push_back({{"variant", row.variant},
                   {"params", row.params},
                   {"flops_per_pair", row.flops_per_pair}});
  }
  j["rows"] = arr;
  return j;
}

std::string ComplexityReport::ToText() const {
  std::ostringstream os;
  os << "# FLOP convention: " << convention << "\n";
  os << std::left << std::setw(18) << "variant" << std::setw(14) << "params"
     << "flops/pair\n";
  for (const auto& row : rows) {
    os << std::setw(18) << row.variant << std::setw(14) << row.params
       << row.flops_per_pair << "\n";
  }
  return os.str();
}

}  // namespace moelink::eval
