#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "moelink/data.hpp"
#include "moelink/error.hpp"
#include "moelink/synthetic.hpp"
#include "test_support.hpp"

namespace moelink {
namespace {

using testing::TempDir;
using testing::WriteFile;

std::string Mention(const std::string& id, const std::string& gold,
                    bool image = false) {
  return R"({"id": ")" + id + R"(", "mention_word": "w", "context": "c )" + id +
         R"(", "image": )" + (image ? "\"img/" + id + ".jpg\"" : "null") +
         R"(, "gold_entity": ")" + gold + R"(", "enhanced_context": null})";
}

TEST(LoadDataset, PreservesOrder) {
  TempDir dir;
  WriteFile(dir.File("m.jsonl"),
            Mention("c", "E1") + "\n" + Mention("a", "E1") + "\n" +
                Mention("b", "E2") + "\n");
  DatasetSplit s = LoadDataset(dir.File("m.jsonl"), SplitName::kTrain);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.mentions()[0].id, "c");
  EXPECT_EQ(s.mentions()[1].id, "a");
  EXPECT_EQ(s.mentions()[2].id, "b");
  EXPECT_FALSE(s.mentions()[0].enhanced_context.has_value());
}

TEST(LoadDataset, MissingMentionWordNamesTheLine) {
  TempDir dir;
  WriteFile(dir.File("m.jsonl"),
            Mention("a", "E1") + "\n" +
                R"({"id": "b", "context": "x", "image": null, "gold_entity": "E1"})" +
                "\n");
  try {
    LoadDataset(dir.File("m.jsonl"), SplitName::kTrain);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MissingFileIsLoadError) {
  EXPECT_THROW(LoadDataset("/nonexistent/x.jsonl", SplitName::kTest), LoadError);
}

TEST(LoadDataset, DuplicateIdIsIntegrityError) {
  TempDir dir;
  WriteFile(dir.File("m.jsonl"), Mention("a", "E1") + "\n" + Mention("a", "E2") + "\n");
  EXPECT_THROW(LoadDataset(dir.File("m.jsonl"), SplitName::kTrain), IntegrityError);
}

TEST(LoadDataset, EmptyImageStringRejected) {
  TempDir dir;
  WriteFile(dir.File("m.jsonl"),
            R"({"id": "a", "mention_word": "w", "context": "c", "image": "", "gold_entity": "E"})"
            "\n");
  EXPECT_THROW(LoadDataset(dir.File("m.jsonl"), SplitName::kTrain), ParseError);
}

TEST(LoadDataset, EnhancedContextMustExtendContext) {
  TempDir dir;
  WriteFile(dir.File("m.jsonl"),
            R"({"id": "a", "mention_word": "w", "context": "abc", "image": null, "gold_entity": "E", "enhanced_context": "xyz"})"
            "\n");
  EXPECT_THROW(LoadDataset(dir.File("m.jsonl"), SplitName::kTrain), ParseError);
}

TEST(Dataset, SerializeRoundTripsStrings) {
  TempDir dir;
  std::vector<MentionRecord> ms(2);
  ms[0] = {"x1", "Black Panther", "quote \" and unicode é ✓", "a/b.png", "Q1",
           std::string("quote \" and unicode é ✓ [SEP] d")};
  ms[1] = {"x2", "w", "", std::nullopt, "Q2", std::nullopt};
  DatasetSplit s(SplitName::kValid, ms);
  SaveDataset(s, dir.File("a.jsonl"));
  DatasetSplit t = LoadDataset(dir.File("a.jsonl"), SplitName::kValid);
  EXPECT_EQ(t.mentions(), s.mentions());
  SaveDataset(t, dir.File("b.jsonl"));
  EXPECT_EQ(testing::ReadFile(dir.File("a.jsonl")), testing::ReadFile(dir.File("b.jsonl")));
}

TEST(EntityCatalog, CoverageIsExactRatio) {
  TempDir dir;
  WriteFile(dir.File("e.jsonl"),
            R"({"entity_id": "E1", "name": "a", "attributes": "", "image": "x.jpg", "qid": null})"
            "\n"
            R"({"entity_id": "E2", "name": "b", "attributes": "", "image": null, "qid": "Q2"})"
            "\n");
  EntityCatalog c = BuildEntityCatalog(dir.File("e.jsonl"));
  EXPECT_EQ(c.size(), 2u);
  EXPECT_DOUBLE_EQ(c.image_coverage(), 0.5);
  EXPECT_EQ(c.Find("E2")->kb_qid, std::optional<std::string>("Q2"));
}

TEST(EntityCatalog, EmptyCatalogHasZeroCoverage) {
  TempDir dir;
  WriteFile(dir.File("e.jsonl"), "");
  EntityCatalog c = BuildEntityCatalog(dir.File("e.jsonl"));
  EXPECT_TRUE(c.empty());
  EXPECT_EQ(c.image_coverage(), 0.0);
}

TEST(EntityCatalog, DuplicateIdRejected) {
  TempDir dir;
  WriteFile(dir.File("e.jsonl"),
            R"({"entity_id": "E1", "name": "a", "attributes": "", "image": null, "qid": null})"
            "\n"
            R"({"entity_id": "E1", "name": "b", "attributes": "", "image": null, "qid": null})"
            "\n");
  EXPECT_THROW(BuildEntityCatalog(dir.File("e.jsonl")), IntegrityError);
}

TEST(EntityCatalog, RichpediaScaleCoverage) {
  EntityCatalog c = synthetic::MakeCountCatalog(160935, 86769);
  EXPECT_DOUBLE_EQ(c.image_coverage(), 86769.0 / 160935.0);
  EXPECT_NEAR(c.image_coverage(), 0.5392, 5e-5);
}

TEST(ValidateDataset, EmptySplitPasses) {
  DatasetSplit s(SplitName::kTest, {});
  StatsReport r = ValidateDataset(s, EntityCatalog(), StatsSpec());
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.mentions, 0);
  EXPECT_EQ(r.mentions_with_image, 0);
  EXPECT_EQ(r.unresolved_gold, 0);
}

TEST(ValidateDataset, UnresolvedGoldFails) {
  EntityCatalog cat({{"E1", "a", "", std::nullopt, std::nullopt}});
  DatasetSplit s(SplitName::kTrain,
                 {{"m1", "w", "c", std::nullopt, "E1", std::nullopt},
                  {"m2", "w", "c", std::nullopt, "E9", std::nullopt}});
  StatsReport r = ValidateDataset(s, cat, StatsSpec());
  EXPECT_EQ(r.unresolved_gold, 1);
  EXPECT_FALSE(r.pass);
}

TEST(ValidateDataset, CountMismatchReported) {
  EntityCatalog cat({{"E1", "a", "", std::nullopt, std::nullopt}});
  DatasetSplit s(SplitName::kTrain, {{"m1", "w", "c", std::nullopt, "E1", std::nullopt}});
  StatsSpec spec;
  spec.mentions = 2;
  StatsReport r = ValidateDataset(s, cat, spec);
  EXPECT_FALSE(r.pass);
  EXPECT_FALSE(r.failures.empty());
}

TEST(ValidateDataset, WikiDiverseImageFraction) {
  DatasetManifest m = DatasetManifest::Load(testing::DataPath("manifests/wikidiverse.json"));
  std::int64_t total = 0;
  for (const auto& [name, spec] : m.splits) total += *spec.mentions;
  ASSERT_EQ(total, 15093);
  DatasetSplit all = synthetic::MakeCountSplit(SplitName::kTest, total,
                                               *m.mentions_with_image, 1000);
  EntityCatalog cat = synthetic::MakeCountCatalog(1000, 0);
  StatsSpec spec;
  spec.mentions = total;
  spec.mentions_with_image = *m.mentions_with_image;
  StatsReport r = ValidateDataset(all, cat, spec);
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.image_fraction(), 0.4437, 5e-5);
}

TEST(ValidateDataset, DoesNotMutateInputs) {
  DatasetSplit s = synthetic::MakeCountSplit(SplitName::kTrain, 50, 10, 5);
  EntityCatalog c = synthetic::MakeCountCatalog(5, 2);
  auto before = s.mentions();
  ValidateDataset(s, c, StatsSpec());
  EXPECT_EQ(s.mentions(), before);
}

TEST(Subsample, RichpediaTenPercent) {
  DatasetSplit s = synthetic::MakeCountSplit(SplitName::kTrain, 12463, 0, 100);
  EXPECT_EQ(SubsampleLowResource(s, 0.1, 1).size(), 1246u);
  EXPECT_EQ(SubsampleLowResource(s, 0.2, 1).size(),
            static_cast<std::size_t>(std::floor(0.2 * 12463)));
}

TEST(Subsample, FullFractionIsPermutationEqual) {
  DatasetSplit s = synthetic::MakeCountSplit(SplitName::kTrain, 97, 3, 10);
  DatasetSplit t = SubsampleLowResource(s, 1.0, 4);
  std::set<std::string> a, b;
  for (const auto& m : s.mentions()) a.insert(m.id);
  for (const auto& m : t.mentions()) b.insert(m.id);
  EXPECT_EQ(a, b);
}

TEST(Subsample, DeterministicSubsetOfInput) {
  DatasetSplit s = synthetic::MakeCountSplit(SplitName::kTrain, 500, 0, 10);
  DatasetSplit a = SubsampleLowResource(s, 0.3, 77);
  DatasetSplit b = SubsampleLowResource(s, 0.3, 77);
  EXPECT_EQ(a.mentions(), b.mentions());
  EXPECT_EQ(a.size(), 150u);
  std::set<std::string> ids;
  for (const auto& m : s.mentions()) ids.insert(m.id);
  for (const auto& m : a.mentions()) EXPECT_TRUE(ids.count(m.id));
  DatasetSplit c = SubsampleLowResource(s, 0.3, 78);
  EXPECT_NE(a.mentions(), c.mentions());
}

TEST(Subsample, FractionOutOfRange) {
  DatasetSplit s = synthetic::MakeCountSplit(SplitName::kTrain, 10, 0, 2);
  EXPECT_THROW(SubsampleLowResource(s, 0.0, 1), ArgumentError);
  EXPECT_THROW(SubsampleLowResource(s, 1.5, 1), ArgumentError);
}

TEST(Manifests, PackagedCountsLoad) {
  DatasetManifest w = DatasetManifest::Load(testing::DataPath("manifests/wikimel.json"));
  EXPECT_EQ(*w.splits.at("train").mentions, 18092);
  EXPECT_EQ(*w.entities, 109976);
  DatasetManifest r = DatasetManifest::Load(testing::DataPath("manifests/richpediamel.json"));
  EXPECT_EQ(*r.splits.at("train").mentions, 12463);
  EXPECT_EQ(*r.entities_with_image, 86769);
}

TEST(Manifests, WikiMelTrainFileLoadsAt18092) {
  TempDir dir;
  DatasetManifest w = DatasetManifest::Load(testing::DataPath("manifests/wikimel.json"));
  SaveDataset(synthetic::MakeCountSplit(SplitName::kTrain,
                                        *w.splits.at("train").mentions, 0, 100),
              dir.File("train.jsonl"));
  EXPECT_EQ(LoadDataset(dir.File("train.jsonl"), SplitName::kTrain).size(), 18092u);
}

}  // namespace
}  // namespace moelink
