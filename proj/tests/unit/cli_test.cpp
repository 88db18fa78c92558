#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "moelink/cli.hpp"
#include "moelink/data.hpp"
#include "moelink/synthetic.hpp"
#include "test_support.hpp"

namespace moelink::cli {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result Invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "moelink");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = Run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, HelpListsFlagsForEveryCommand) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"prepare", {"--manifest", "--fraction"}},
      {"enhance", {"--in", "--out", "--kb", "--cache"}},
      {"train", {"--epochs", "--learning-rate", "--batch-size", "--patience"}},
      {"eval", {"--checkpoint", "--split", "--candidates"}},
      {"ablate", {"--toggles"}},
      {"grid", {"--space", "--budget"}},
      {"report", {"--checkpoint"}},
      {"gradcheck", {"--component", "--dim", "--eps"}},
  };
  for (const auto& [cmd, own] : flags) {
    Result r = Invoke({cmd, "--help"});
    EXPECT_EQ(r.code, kExitOk) << cmd;
    for (const std::string& f : own) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << f;
    for (const char* f : {"--config", "--seed", "--out-dir", "--jobs"}) {
      EXPECT_NE(r.out.find(f), std::string::npos) << cmd << f;
    }
  }
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(Invoke({"gradcheck", "--seed", "1", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(Invoke({"gradcheck", "--component", "smoe"}).code, kExitUsage);  // no seed
  EXPECT_EQ(Invoke({"gradcheck", "--seed", "1", "--eps", "1"}).code, kExitUsage);
}

TEST(Cli, GradcheckSmoe) {
  testing::TempDir dir;
  Result r = Invoke({"gradcheck", "--seed", "1", "--component", "smoe", "--dim", "4",
                     "--out-dir", dir.path().string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("smoe"), std::string::npos);
  auto j = nlohmann::json::parse(testing::ReadFile(dir.File("gradcheck.json")));
  EXPECT_LT(j[0]["max_rel_error"].get<double>(), 1e-4);
}

TEST(Cli, DomainErrorExitsOne) {
  testing::TempDir dir;
  // Config with no catalog path: train cannot start.
  testing::WriteFile(dir.File("c.json"), "{\"seed\": 3}");
  Result r = Invoke({"train", "--config", dir.File("c.json"), "--out-dir", dir.path().string()});
  EXPECT_EQ(r.code, kExitDomain);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, ToyPipeline) {
  testing::TempDir dir;
  auto task = synthetic::MakeToyTask(dir.path().string(), 5, 6);
  SaveDataset(task.train, dir.File("train.jsonl"));
  SaveDataset(task.valid, dir.File("valid.jsonl"));
  SaveCatalog(task.catalog, dir.File("kb.jsonl"));
  RunConfig cfg = synthetic::ToyConfig(5);
  cfg.embed_dim = 16;
  cfg.max_text_len = 8;
  cfg.epochs = 2;
  cfg.train_path = dir.File("train.jsonl");
  cfg.valid_path = dir.File("valid.jsonl");
  cfg.test_path = dir.File("valid.jsonl");
  cfg.catalog_path = dir.File("kb.jsonl");
  cfg.image_root = task.image_root;
  cfg.SaveFile(dir.File("config.json"));
  const std::string out = dir.File("out");

  Result p = Invoke({"prepare", "--config", dir.File("config.json"), "--out-dir", out,
                     "--fraction", "0.5"});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  EXPECT_TRUE(std::filesystem::exists(out + "/prepare_report.json"));
  EXPECT_EQ(LoadDataset(out + "/train.lowres.jsonl", SplitName::kTrain).size(), 3u);

  Result t = Invoke({"train", "--config", dir.File("config.json"), "--out-dir", out});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  std::istringstream log(testing::ReadFile(out + "/train_log.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    if (line.empty() || line[0] != '{') continue;
    auto j = nlohmann::json::parse(line);
    if (j.contains("epoch")) ++epochs;
  }
  EXPECT_EQ(epochs, 2);

  Result e = Invoke({"eval", "--config", dir.File("config.json"), "--out-dir", out,
                     "--checkpoint", out + "/model.ckpt", "--split", "test"});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  auto metrics = nlohmann::json::parse(testing::ReadFile(out + "/metrics_test.json"));
  EXPECT_EQ(metrics["n_mentions"], 6);
  EXPECT_TRUE(std::filesystem::exists(out + "/predictions_test.jsonl"));

  // Same inputs, same seed: byte-identical metrics.
  const std::string first = testing::ReadFile(out + "/metrics_test.json");
  ASSERT_EQ(Invoke({"eval", "--seed", "5", "--out-dir", out, "--checkpoint",
                    out + "/model.ckpt", "--split", "test"})
                .code,
            kExitOk);
  EXPECT_EQ(testing::ReadFile(out + "/metrics_test.json"), first);

  Result r = Invoke({"report", "--config", dir.File("config.json"), "--out-dir", out,
                     "--checkpoint", out + "/model.ckpt"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto cx = nlohmann::json::parse(testing::ReadFile(out + "/complexity.json"));
  EXPECT_EQ(cx["param_count"], cx["checkpoint_elements"]);

  // Checkpoint from a different architecture is refused.
  RunConfig wide = cfg;
  wide.experts_K = 6;
  wide.SaveFile(dir.File("wide.json"));
  EXPECT_EQ(Invoke({"eval", "--config", dir.File("wide.json"), "--out-dir", out,
                    "--checkpoint", out + "/model.ckpt"})
                .code,
            kExitDomain);
}

}  // namespace
}  // namespace moelink::cli
