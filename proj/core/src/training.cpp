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

#include "moelink/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "moelink/error.hpp"
#include "moelink/eval.hpp"
#include "moelink/random.hpp"

namespace moelink::training {

double ContrastiveLoss(std::span<const double> row, int positive) {
  if (positive < 0 || static_cast<std::size_t>(positive) >= row.size()) {
    throw ArgumentError("contrastive loss: positive index " +
                        std::to_string(positive) + " outside [0, " +
                        std::to_string(row.size()) + ")");
  }
  double mx = -INFINITY;
  for (double x : row) {
    if (!std::isfinite(x)) throw NumericError("contrastive loss: non-finite score");
    mx = std::max(mx, x);
  }
  double total = 0;
  for (double x : row) total += std::exp(x - mx);
  return std::max(0.0, (mx - row[static_cast<std::size_t>(positive)]) +
                           std::log(total));
}

ad::Var ContrastiveLoss(ad::Var row, int positive) {
  if (positive < 0 || positive >= row.cols()) {
    throw ArgumentError("contrastive loss: positive index out of range");
  }
  return ad::CrossEntropyRow(row, positive);
}

LossToggles LossToggles::FromConfig(const RunConfig& c) {
  LossToggles t;
  t.enabled = {c.loss_O, c.loss_T && c.use_intra_text,
               c.loss_V && c.use_intra_visual, c.loss_C && c.use_inter};
  return t;
}

nlohmann::json LossBreakdown::ToJson() const {
  nlohmann::json j;
  j["total"] = total;
  for (int c = 0; c < kNumChannels; ++c) {
    if (channel[static_cast<std::size_t>(c)]) {
      j[ChannelName(static_cast<Channel>(c))] =
          *channel[static_cast<std::size_t>(c)];
    }
  }
  return j;
}

namespace {

std::vector<int> Positives(Eigen::Index rows, Eigen::Index cols,
                           std::span<const int> given) {
  std::vector<int> p;
  if (given.empty()) {
    if (rows != cols) {
      throw ShapeError("total loss: " + std::to_string(rows) + "x" +
                       std::to_string(cols) +
                       " matrix is not square and no positives were given");
    }
    p.resize(static_cast<std::size_t>(rows));
    std::iota(p.begin(), p.end(), 0);
    return p;
  }
  if (static_cast<Eigen::Index>(given.size()) != rows) {
    throw ShapeError("total loss: positives length does not match rows");
  }
  return {given.begin(), given.end()};
}

}  // namespace

LossBreakdown TotalLoss(const std::array<Matrix, kNumChannels>& scores,
                        const LossToggles& toggles,
                        std::span<const int> positives) {
  LossBreakdown out;
  Eigen::Index rows = -1, cols = -1;
  for (int c = 0; c < kNumChannels; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!toggles.enabled[ci]) continue;
    const Matrix& m = scores[ci];
    if (rows < 0) {
      rows = m.rows();
      cols = m.cols();
    } else if (m.rows() != rows || m.cols() != cols) {
      throw ShapeError("total loss: channel matrices differ in shape");
    }
    if (m.rows() == 0) throw ShapeError("total loss: empty score matrix");
    const auto pos = Positives(m.rows(), m.cols(), positives);
    double sum = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const Eigen::RowVectorXd row = m.row(r);
      sum += ContrastiveLoss(std::span<const double>(row.data(), row.size()),
                             pos[static_cast<std::size_t>(r)]);
    }
    out.channel[ci] = sum / static_cast<double>(m.rows());
    out.total += *out.channel[ci];
  }
  return out;
}

LossVars TotalLoss(const std::array<ad::Var, kNumChannels>& scores,
                   const LossToggles& toggles, std::span<const int> positives) {
  LossVars out;
  std::vector<ad::Var> terms;
  for (int c = 0; c < kNumChannels; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!toggles.enabled[ci]) continue;
    const ad::Var& m = scores[ci];
    if (!m.valid()) throw ArgumentError("total loss: enabled channel has no scores");
    const auto pos = Positives(m.rows(), m.cols(), positives);
    std::vector<ad::Var> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      rows.push_back(ContrastiveLoss(ad::SliceRows(m, r, 1),
                                     pos[static_cast<std::size_t>(r)]));
    }
    out.channel[ci] =
        ad::Scale(ad::AddN(rows), 1.0 / static_cast<double>(m.rows()));
    terms.push_back(out.channel[ci]);
  }
  if (terms.empty()) throw ArgumentError("total loss: every channel is disabled");
  out.total = ad::AddN(terms);
  return out;
}

// --- optimiser --------------------------------------------------------------

AdamW::AdamW(const RunConfig& c)
    : lr_(c.learning_rate),
      wd_(c.weight_decay),
      b1_(c.beta1),
      b2_(c.beta2),
      eps_(c.adam_eps) {}

void AdamW::Step(ModelParams& params, const std::vector<std::string>& frozen) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  std::size_t i = 0;
  params.VisitParams([&](const std::string& name, Tensor& p) {
    if (m_.size() <= i) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    ++i;
    if (std::find(frozen.begin(), frozen.end(), name) != frozen.end()) return;
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw ShapeError("adamw: parameter " + name + " changed shape");
    }
    m = b1_ * m + (1.0 - b1_) * p.grad;
    v = b2_ * v + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
    const Matrix update =
        ((m / c1).array() / ((v / c2).array().sqrt() + eps_)).matrix();
    p.value -= lr_ * (update + wd_ * p.value);
  });
}

// --- training loop -----------------------------------------------------------

nlohmann::ordered_json EpochRecord::ToJson() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  for (int c = 0; c < kNumChannels; ++c) {
    const auto& v = channel[static_cast<std::size_t>(c)];
    const std::string key = ChannelName(static_cast<Channel>(c));
    if (v) {
      j[key] = *v;
    } else {
      j[key] = nullptr;
    }
  }
  if (val_mrr) {
    j["val_mrr"] = *val_mrr;
  } else {
    j["val_mrr"] = nullptr;
  }
  j["wall_seconds"] = wall_seconds;
  return j;
}

namespace {

// Scores B mentions against U entities on one tape and returns the loss.
LossBreakdown RunBatch(Model& model,
                       const std::vector<const EncodedObject*>& mentions,
                       const std::vector<const EncodedObject*>& entities,
                       const std::vector<int>& positives,
                       const LossToggles& toggles, bool grads) {
  const RunConfig& cfg = model.config();
  ad::Tape tape(grads);
  Binder bind(tape);
  std::vector<EntitySide> es;
  es.reserve(entities.size());
  for (const auto* e : entities) es.push_back(model.BuildEntitySide(bind, *e));

  const auto B = static_cast<Eigen::Index>(mentions.size());
  const auto U = static_cast<Eigen::Index>(entities.size());
  std::array<std::vector<ad::Var>, kNumChannels> cells;
  for (const auto* m : mentions) {
    MentionSide ms = model.BuildMentionSide(bind, *m);
    for (const auto& e : es) {
      ScoreVars s = model.ScorePairVars(ms, e);
      cells[0].push_back(s.s_O);
      if (cfg.use_intra_text) cells[1].push_back(s.s_T);
      if (cfg.use_intra_visual) cells[2].push_back(s.s_V);
      if (cfg.use_inter) cells[3].push_back(s.s_C);
    }
  }
  std::array<ad::Var, kNumChannels> mats;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!cells[c].empty()) mats[c] = ad::Stack(cells[c], B, U);
  }
  LossVars loss = TotalLoss(mats, toggles, positives);

  LossBreakdown out;
  out.total = loss.total.scalar();
  for (std::size_t c = 0; c < loss.channel.size(); ++c) {
    if (loss.channel[c].valid()) out.channel[c] = loss.channel[c].scalar();
  }
  if (!std::isfinite(out.total)) {
    throw NumericError("training loss is not finite");
  }
  if (grads) {
    model.params().ZeroGrad();
    tape.Backward(loss.total);
  }
  return out;
}

// Distinct gold entities in order of first appearance; positives index
// into that list.
void CollectGolds(std::span<const MentionRecord> batch,
                  const EntityCatalog& catalog, std::vector<int>* entity_rows,
                  std::vector<int>* positives) {
  std::unordered_map<int, int> slot;
  for (const auto& m : batch) {
    const int row = catalog.IndexOf(m.gold_entity_id);
    if (row < 0) {
      throw IntegrityError("mention " + m.id + ": gold entity " +
                           m.gold_entity_id + " not in catalog");
    }
    auto [it, inserted] =
        slot.emplace(row, static_cast<int>(entity_rows->size()));
    if (inserted) entity_rows->push_back(row);
    positives->push_back(it->second);
  }
}

std::vector<std::string> FrozenNames(const RunConfig& c) {
  if (c.train_projection) return {};
  return {"proj_text", "proj_visual"};
}

}  // namespace

LossBreakdown BatchLoss(Model& model, std::span<const MentionRecord> batch,
                        const EntityCatalog& catalog, bool accumulate_grads) {
  if (batch.empty()) throw ArgumentError("batch loss: empty batch");
  std::vector<int> rows, positives;
  CollectGolds(batch, catalog, &rows, &positives);
  std::vector<EncodedObject> me, ee;
  for (const auto& m : batch) me.push_back(model.EncodeMention(m));
  for (int r : rows) {
    ee.push_back(model.EncodeEntity(catalog.entities()[static_cast<std::size_t>(r)]));
  }
  std::vector<const EncodedObject*> mp, ep;
  for (const auto& x : me) mp.push_back(&x);
  for (const auto& x : ee) ep.push_back(&x);
  return RunBatch(model, mp, ep, positives,
                  LossToggles::FromConfig(model.config()), accumulate_grads);
}

TrainResult Train(const RunConfig& config, const DatasetSplit& train,
                  const DatasetSplit& valid, const EntityCatalog& catalog,
                  const TrainHooks& hooks) {
  config.Validate();
  const LossToggles toggles = LossToggles::FromConfig(config);
  if (std::none_of(toggles.enabled.begin(), toggles.enabled.end(),
                   [](bool b) { return b; })) {
    throw ArgumentError("train: every loss channel is disabled");
  }
  Model model(config);
  TrainResult result{Model(config, model.params()), {}, 0, std::nullopt};
  if (config.epochs == 0) return result;
  if (train.empty()) throw ArgumentError("train: empty training split");

  // Encoder outputs are fixed, so every object is encoded once.
  const auto& mentions = train.mentions();
  std::vector<EncodedObject> mention_enc;
  mention_enc.reserve(mentions.size());
  for (const auto& m : mentions) mention_enc.push_back(model.EncodeMention(m));
  std::vector<std::optional<EncodedObject>> entity_enc(catalog.size());

  AdamW opt(config);
  const auto frozen = FrozenNames(config);
  const std::uint64_t shuffle_seed = MixSeed(config.seed, Fnv1a64("epoch-order"));
  std::optional<ModelParams> best;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(mentions.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(MixSeed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.Shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    std::array<double, kNumChannels> sums{};
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<MentionRecord> batch;
      std::vector<const EncodedObject*> mp;
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(mentions[order[i]]);
        mp.push_back(&mention_enc[order[i]]);
      }
      std::vector<int> rows, positives;
      CollectGolds(batch, catalog, &rows, &positives);
      std::vector<const EncodedObject*> ep;
      for (int r : rows) {
        auto& slot = entity_enc[static_cast<std::size_t>(r)];
        if (!slot) {
          slot = model.EncodeEntity(catalog.entities()[static_cast<std::size_t>(r)]);
        }
        ep.push_back(&*slot);
      }
      LossBreakdown loss;
      try {
        loss = RunBatch(model, mp, ep, positives, toggles, true);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " +
                           std::to_string(epoch) + ", batch starting at " +
                           std::to_string(lo) + ")");
      }
      opt.Step(model.params(), frozen);
      if (!model.params().AllFinite()) {
        throw NumericError("non-finite parameter after update (epoch " +
                           std::to_string(epoch) + ")");
      }
      const double w = static_cast<double>(hi - lo);
      rec.train_loss += w * loss.total;
      for (std::size_t c = 0; c < sums.size(); ++c) {
        if (loss.channel[c]) sums[c] += w * *loss.channel[c];
      }
    }
    const double n = static_cast<double>(mentions.size());
    rec.train_loss /= n;
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (toggles.enabled[c]) rec.channel[c] = sums[c] / n;
    }

    bool improved = valid.empty();
    if (!valid.empty()) {
      eval::EvalOptions opts;
      opts.jobs = config.jobs;
      rec.val_mrr = eval::EvaluateSplit(model, valid, catalog, opts).report.mrr;
      improved = !result.best_val_mrr || *rec.val_mrr > *result.best_val_mrr;
    }
    rec.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    if (improved) {
      best = model.params();
      result.best_epoch = epoch;
      result.best_val_mrr = rec.val_mrr;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (config.patience > 0 && since_best >= config.patience) break;
  }
  result.model = Model(config, best ? std::move(*best) : model.params());
  return result;
}

// --- grid search ---------------------------------------------------------------

GridSpace GridSpace::Full(std::vector<double> learning_rates) {
  GridSpace s;
  s.experts_K.assign(kLatticeK.begin(), kLatticeK.end());
  s.top_k.assign(kLatticeTopK.begin(), kLatticeTopK.end());
  s.embed_dim.assign(kLatticeDim.begin(), kLatticeDim.end());
  s.max_text_len.assign(kLatticeLen.begin(), kLatticeLen.end());
  s.learning_rate = std::move(learning_rates);
  return s;
}

GridSpace GridSpace::FromJson(const nlohmann::json& doc, double base_lr) {
  GridSpace s = Full({base_lr});
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "experts_K") {
        s.experts_K = value.get<std::vector<int>>();
      } else if (key == "top_k") {
        s.top_k = value.get<std::vector<int>>();
      } else if (key == "embed_dim") {
        s.embed_dim = value.get<std::vector<int>>();
      } else if (key == "max_text_len") {
        s.max_text_len = value.get<std::vector<int>>();
      } else if (key == "learning_rate") {
        s.learning_rate = value.get<std::vector<double>>();
      } else {
        throw ArgumentError("grid space: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("grid space: ") + e.what());
  }
  s.Validate();
  return s;
}

GridSpace GridSpace::LoadFile(const std::string& path, double base_lr) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open grid space " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return FromJson(doc, base_lr);
}

namespace {

template <typename T, std::size_t N>
void RequireIn(const std::vector<T>& values, const std::array<T, N>& lattice,
               const char* what) {
  if (values.empty()) throw ArgumentError(std::string("grid space: empty ") + what);
  for (const T& v : values) {
    if (std::find(lattice.begin(), lattice.end(), v) == lattice.end()) {
      throw ArgumentError(std::string("grid space: ") + what + "=" +
                          std::to_string(v) + " is outside the lattice");
    }
  }
}

}  // namespace

void GridSpace::Validate() const {
  RequireIn(experts_K, kLatticeK, "experts_K");
  RequireIn(top_k, kLatticeTopK, "top_k");
  RequireIn(embed_dim, kLatticeDim, "embed_dim");
  RequireIn(max_text_len, kLatticeLen, "max_text_len");
  if (learning_rate.empty()) throw ArgumentError("grid space: empty learning_rate");
  for (double lr : learning_rate) {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ArgumentError("grid space: learning rates must be positive");
    }
  }
}

std::size_t GridSpace::size() const {
  return experts_K.size() * top_k.size() * embed_dim.size() *
         max_text_len.size() * learning_rate.size();
}

std::vector<RunConfig> GridSpace::Expand(const RunConfig& base) const {
  std::vector<RunConfig> out;
  out.reserve(size());
  for (int K : experts_K) {
    for (int k : top_k) {
      for (int d : embed_dim) {
        for (int L : max_text_len) {
          for (double lr : learning_rate) {
            RunConfig c = base;
            c.experts_K = K;
            c.top_k = k;
            c.embed_dim = d;
            c.max_text_len = L;
            c.learning_rate = lr;
            out.push_back(std::move(c));
          }
        }
      }
    }
  }
  return out;
}

GridResult GridSearch(const RunConfig& base, const GridSpace& space,
                      const DatasetSplit& train, const DatasetSplit& valid,
                      const EntityCatalog& catalog, std::size_t budget) {
  space.Validate();
  if (valid.empty()) throw ArgumentError("grid search needs a validation split");
  auto candidates = space.Expand(base);
  if (budget > 0 && candidates.size() > budget) candidates.resize(budget);

  std::vector<GridEntry> entries;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    GridEntry e;
    e.order = i;
    e.config = candidates[i];
    try {
      auto r = Train(e.config, train, valid, catalog);
      if (r.best_val_mrr) {
        e.val_mrr = r.best_val_mrr;
      } else {
        eval::EvalOptions opts;
        opts.jobs = e.config.jobs;
        e.val_mrr = eval::EvaluateSplit(r.model, valid, catalog, opts).report.mrr;
      }
    } catch (const Error& err) {
      e.error = err.what();
    }
    entries.push_back(std::move(e));
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const GridEntry& a, const GridEntry& b) {
                     if (a.val_mrr.has_value() != b.val_mrr.has_value()) {
                       return a.val_mrr.has_value();
                     }
                     if (!a.val_mrr) return false;
                     return *a.val_mrr > *b.val_mrr;
                   });
  GridResult out;
  out.leaderboard = std::move(entries);
  if (!out.leaderboard.empty() && out.leaderboard.front().val_mrr) {
    out.best = out.leaderboard.front().config;
  }
  return out;
}

nlohmann::json GridResult::ToJson() const {
  auto arr = nlohmann::json::array();
  for (const auto& e : leaderboard) {
    nlohmann::json j;
    j["order"] = e.order;
    j["experts_K"] = e.config.experts_K;
    j["top_k"] = e.config.top_k;
    j["embed_dim"] = e.config.embed_dim;
    j["max_text_len"] = e.config.max_text_len;
    j["learning_rate"] = e.config.learning_rate;
    if (e.val_mrr) {
      j["val_mrr"] = *e.val_mrr;
    } else {
      j["error"] = e.error;
    }
    arr.push_back(std::move(j));
  }
  nlohmann::json out;
  out["leaderboard"] = arr;
  out["best"] = best ? best->ToJson() : nlohmann::json(nullptr);
  return out;
}

}  // namespace moelink::training
