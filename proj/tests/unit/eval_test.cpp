#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "moelink/checkpoint.hpp"
#include "moelink/error.hpp"
#include "moelink/eval.hpp"
#include "moelink/random.hpp"
#include "moelink/synthetic.hpp"
#include "test_support.hpp"

namespace moelink::eval {
namespace {

RankedResult WithRank(int rank) {
  RankedResult r;
  r.gold_rank = rank;
  return r;
}

TEST(Metrics, HandCases) {
  std::vector<RankedResult> perfect{WithRank(1), WithRank(1), WithRank(1)};
  MetricsReport p = ComputeMetrics(perfect);
  EXPECT_EQ(p.mrr, 1.0);
  EXPECT_EQ(p.hits1, 1.0);
  EXPECT_EQ(p.hits5, 1.0);

  std::vector<RankedResult> two{WithRank(2)};
  MetricsReport t = ComputeMetrics(two);
  EXPECT_DOUBLE_EQ(t.mrr, 0.5);
  EXPECT_EQ(t.hits1, 0.0);
  EXPECT_EQ(t.hits3, 1.0);
  EXPECT_EQ(t.hits5, 1.0);

  std::vector<RankedResult> mixed{WithRank(1), WithRank(4)};
  MetricsReport m = ComputeMetrics(mixed);
  EXPECT_DOUBLE_EQ(m.mrr, 0.625);
  EXPECT_DOUBLE_EQ(m.hits3, 0.5);
  EXPECT_DOUBLE_EQ(m.hits5, 1.0);
  EXPECT_EQ(m.n_mentions, 2u);
}

TEST(Metrics, EmptyIsArgumentError) {
  EXPECT_THROW(ComputeMetrics({}), ArgumentError);
}

TEST(Metrics, JsonShape) {
  std::vector<RankedResult> two{WithRank(2)};
  MetricsReport r = ComputeMetrics(two);
  r.config_fingerprint = "abc";
  nlohmann::json j = r.ToJson();
  EXPECT_DOUBLE_EQ(j["mrr"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["hits"]["3"].get<double>(), 1.0);
  EXPECT_EQ(j["n_mentions"], 1);
  EXPECT_EQ(j["config_fingerprint"], "abc");
}

TEST(Rank, OrderingAndTies) {
  RankedResult r = RankByScores("m", "b", {"c", "a", "b"}, {0.5, 0.5, 0.9});
  EXPECT_EQ(r.entity_ids, (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(r.gold_rank, 1);
  RankedResult low = RankByScores("m", "a", {"a", "b"}, {0.1, 0.2});
  EXPECT_EQ(low.gold_rank, 2);
  RankedResult one = RankByScores("m", "a", {"a"}, {-3.0});
  EXPECT_EQ(one.gold_rank, 1);
}

TEST(Rank, Errors) {
  EXPECT_THROW(RankByScores("m", "z", {"a", "b"}, {0.1, 0.2}), IntegrityError);
  EXPECT_THROW(RankByScores("m", "a", {"a", "b"}, {NAN, 0.2}), NumericError);
}

// Brute-force reference: count entities that beat the gold.
int ReferenceRank(const std::vector<std::string>& ids,
                  const std::vector<double>& s, std::size_t gold) {
  int rank = 1;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (j == gold) continue;
    if (s[j] > s[gold] || (s[j] == s[gold] && ids[j] < ids[gold])) ++rank;
  }
  return rank;
}

TEST(Rank, MatchesBruteForceAndMonotoneTransforms) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.Below(12);
    std::vector<std::string> ids(n);
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      ids[j] = "e" + std::to_string(rng.Below(1000)) + "_" + std::to_string(j);
      s[j] = static_cast<double>(rng.Below(5));  // many ties
    }
    const std::size_t gold = rng.Below(n);
    RankedResult r = RankByScores("m", ids[gold], ids, s);
    EXPECT_EQ(r.gold_rank, ReferenceRank(ids, s, gold));
    std::vector<double> t(n);
    for (std::size_t j = 0; j < n; ++j) t[j] = 3.0 * s[j] + 2.0;
    EXPECT_EQ(RankByScores("m", ids[gold], ids, t).entity_ids, r.entity_ids);
  }
}

TEST(Complexity, SeventySixParameterFfn) {
  Rng rng(1);
  Mlp ffn(4, 8, 4, rng);
  std::int64_t n = 0;
  ffn.VisitParams("ffn", [&](const std::string&, Tensor& t) { n += t.size(); });
  EXPECT_EQ(n, (4 * 8 + 8) + (8 * 4 + 4));
  EXPECT_EQ(n, 76);
}

TEST(Complexity, ParamCountEqualsCheckpointElements) {
  testing::TempDir dir;
  RunConfig c;
  c.seed = 2;
  c.embed_dim = 16;
  c.native_dim = 24;
  ModelParams p = ModelParams::Initialize(c);
  SaveCheckpoint(p, c, dir.File("m.ckpt"));
  ComplexityReport r = MakeComplexityReport(p, c);
  EXPECT_EQ(r.param_count, ReadCheckpoint(dir.File("m.ckpt")).ElementCount());
}

TEST(Complexity, DoublingExpertsOnlyAddsRouterFlops) {
  RunConfig a;
  a.experts_K = 4;
  a.top_k = 2;
  RunConfig b = a;
  b.experts_K = 8;
  auto expert_params = [](const RunConfig& c) {
    ModelParams p = ModelParams::Initialize(c);
    std::int64_t n = 0;
    p.VisitParams([&](const std::string& name, Tensor& t) {
      if (name.find(".expert") != std::string::npos) n += t.size();
    });
    return n;
  };
  EXPECT_EQ(expert_params(b), 2 * expert_params(a));
  // Router: rows x (d x K matmul + 3-op softmax) per SMoE pass; text-side
  // passes see L+1 rows, visual-side passes P+1 rows, four of each.
  const std::int64_t d = a.embed_dim, L = a.max_text_len, P = a.num_patches;
  const std::int64_t rows = 4 * (L + 1) + 4 * (P + 1);
  const std::int64_t router = rows * (2 * d + 3) * (b.experts_K - a.experts_K);
  EXPECT_EQ(FlopsPerPair(b) - FlopsPerPair(a), router * a.smoe_layers);
}

TEST(Complexity, ModuleRowsAndConvention) {
  RunConfig c;
  c.embed_dim = 16;
  ModelParams p = ModelParams::Initialize(c);
  ComplexityReport r = MakeComplexityReport(p, c);
  std::vector<std::string> names;
  for (const auto& row : r.rows) names.push_back(row.variant);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "w/o IntraMoE-T", "w/o IntraMoE-V",
                                             "w/o InterMoE", "w/o SMoE"}));
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    EXPECT_LT(r.rows[i].params, r.param_count);
    EXPECT_LT(r.rows[i].flops_per_pair, r.flops_per_pair);
  }
  EXPECT_NE(r.ToText().find("multiply-add = 2 FLOPs"), std::string::npos);
}

class ToyEval : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = synthetic::ToyConfig(9);
    cfg.image_root = task.image_root;
    cfg.embed_dim = 16;
    cfg.max_text_len = 8;
  }
  testing::TempDir dir;
  synthetic::ToyTask task = synthetic::MakeToyTask(dir.path().string(), 9, 6);
  RunConfig cfg;
};

TEST_F(ToyEval, RankEntitiesUsesOverallScore) {
  Model model(cfg);
  const auto& m = task.valid.mentions()[0];
  RankedResult r = RankEntities(model, m, task.catalog);
  ASSERT_EQ(r.entity_ids.size(), task.catalog.size());
  for (std::size_t i = 0; i < r.entity_ids.size(); ++i) {
    const EntityRecord* e = task.catalog.Find(r.entity_ids[i]);
    EXPECT_NEAR(r.scores[i], model.ScorePair(m, *e).s_O, 1e-12);
  }
  std::vector<std::string> only_gold{m.gold_entity_id};
  EXPECT_EQ(RankEntities(model, m, task.catalog, &only_gold).gold_rank, 1);
}

TEST_F(ToyEval, SplitEvaluationIsDeterministicAcrossJobs) {
  Model model(cfg);
  Evaluation a = EvaluateSplit(model, task.valid, task.catalog);
  EvalOptions four;
  four.jobs = 4;
  four.toggles = {"L_V"};
  Evaluation b = EvaluateSplit(model, task.valid, task.catalog, four);
  EXPECT_EQ(a.report.mrr, b.report.mrr);
  ASSERT_EQ(a.results.size(), b.results.size());
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    EXPECT_EQ(a.results[i].entity_ids, b.results[i].entity_ids);
    EXPECT_EQ(a.results[i].scores, b.results[i].scores);
  }
  EXPECT_EQ(b.report.ToJson()["toggles"], nlohmann::json::array({"L_V"}));
  EXPECT_EQ(a.report.config_fingerprint, cfg.Fingerprint());
  EXPECT_LE(a.report.hits1, a.report.hits3);
  EXPECT_LE(a.report.hits3, a.report.hits5);
  EXPECT_GE(a.report.mrr, a.report.hits1);
}

TEST_F(ToyEval, PredictionsDumpTopThree) {
  Model model(cfg);
  Evaluation ev = EvaluateSplit(model, task.valid, task.catalog);
  WritePredictions(ev.results, dir.File("pred.jsonl"));
  std::istringstream in(testing::ReadFile(dir.File("pred.jsonl")));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    EXPECT_EQ(j["top"].size(), 3u);
    EXPECT_TRUE(j.contains("mention_id"));
    ++lines;
  }
  EXPECT_EQ(lines, task.valid.size());
}

TEST_F(ToyEval, CandidateFileOverride) {
  testing::WriteFile(dir.File("cands.jsonl"),
                     "{\"mention_id\": \"v0\", \"candidates\": [\"E0\", \"E1\"]}\n");
  CandidateMap cands = LoadCandidates(dir.File("cands.jsonl"));
  ASSERT_EQ(cands.at("v0").size(), 2u);
  Model model(cfg);
  EvalOptions opts;
  opts.candidates = &cands;
  Evaluation ev = EvaluateSplit(model, task.valid, task.catalog, opts);
  EXPECT_EQ(ev.results[0].entity_ids.size(), 2u);
  EXPECT_EQ(ev.results[1].entity_ids.size(), task.catalog.size());
}

TEST_F(ToyEval, EmptyAblationHasBaseRowOnly) {
  cfg.epochs = 0;
  AblationTable t = AblationSweep(cfg, {}, task.train, task.valid, task.valid, task.catalog);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].variant, "base");
  EXPECT_TRUE(t.rows[0].metrics.has_value());
}

TEST_F(ToyEval, AblationDeltasAreVariantMinusBase) {
  cfg.epochs = 0;
  AblationTable t = AblationSweep(cfg, {"InterMoE", "L_Q"}, task.train, task.valid,
                                  task.valid, task.catalog);
  ASSERT_EQ(t.rows.size(), 3u);
  const auto& base = *t.rows[0].metrics;
  const auto& inter = t.rows[1];
  ASSERT_TRUE(inter.metrics.has_value());
  EXPECT_DOUBLE_EQ(inter.delta_mrr, inter.metrics->mrr - base.mrr);
  EXPECT_FALSE(t.rows[2].error.empty());
  EXPECT_NE(t.ToText().find("w/o InterMoE"), std::string::npos);
}

}  // namespace
}  // namespace moelink::eval
