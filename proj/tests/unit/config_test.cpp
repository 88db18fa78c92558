#include <gtest/gtest.h>

#include "moelink/config.hpp"
#include "moelink/error.hpp"
#include "test_support.hpp"

namespace moelink {
namespace {

TEST(RunConfig, DefaultsValidate) { EXPECT_NO_THROW(RunConfig().Validate()); }

TEST(RunConfig, TopKAboveExpertsRejected) {
  RunConfig c;
  c.experts_K = 2;
  c.top_k = 3;
  EXPECT_THROW(c.Validate(), ArgumentError);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.experts_K = 6;
  c.learning_rate = 3e-4;
  c.use_inter = false;
  RunConfig d = RunConfig::FromJson(c.ToJson());
  EXPECT_EQ(d.ToJson(), c.ToJson());
}

TEST(RunConfig, UnknownKeyRejected) {
  nlohmann::json j = {{"experts_k", 4}};
  EXPECT_THROW(RunConfig::FromJson(j), ParseError);
}

TEST(RunConfig, FingerprintTracksArchitectureOnly) {
  RunConfig a, b;
  b.learning_rate = 0.5;
  b.seed = 1234;
  EXPECT_EQ(a.Fingerprint(), b.Fingerprint());
  b.experts_K = 8;
  EXPECT_NE(a.Fingerprint(), b.Fingerprint());
}

TEST(RunConfig, FileRoundTrip) {
  testing::TempDir dir;
  RunConfig c;
  c.seed = 5;
  c.embed_dim = 64;
  c.SaveFile(dir.File("c.json"));
  EXPECT_EQ(RunConfig::LoadFile(dir.File("c.json")).ToJson(), c.ToJson());
}

TEST(Toggles, EachKnownToggleFlipsOneSwitch) {
  RunConfig base;
  for (const auto& t : KnownToggles()) {
    RunConfig v = ApplyToggle(base, t);
    EXPECT_NE(v.ToJson(), base.ToJson()) << t;
  }
  EXPECT_FALSE(ApplyToggle(base, "L_V").loss_V);
  EXPECT_FALSE(ApplyToggle(base, "InterMoE").use_inter);
  EXPECT_THROW(ApplyToggle(base, "L_X"), ArgumentError);
}

}  // namespace
}  // namespace moelink
