#include <gtest/gtest.h>

#include <set>

#include "dst/config.hpp"
#include "dst/errors.hpp"
#include "test_util.hpp"

using namespace dst;

TEST(RunConfig, ProfilesDifferInSizeOnly) {
  auto desk = RunConfig::for_profile("desk");
  auto paper = RunConfig::for_profile("paper");
  EXPECT_EQ(desk.d, 32u);
  EXPECT_EQ(paper.d, 128u);
  EXPECT_EQ(paper.epochs_spatial, 5000u);
  EXPECT_EQ(paper.epochs_temporal, 100u);
  EXPECT_DOUBLE_EQ(paper.lr, 1e-3);
  EXPECT_EQ(paper.temperature, desk.temperature);
  EXPECT_EQ(paper.fusion, desk.fusion);
  EXPECT_NO_THROW(desk.validate());
  EXPECT_NO_THROW(paper.validate());
  EXPECT_THROW(RunConfig::for_profile("laptop"), ConfigError);
}

TEST(RunConfig, UnknownKeysAndSectionsRejected) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "dimension", "8"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[dims]\nwidth = 8\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[model]\nd = 8\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "d = 8\n"), ConfigError);
  // A key in a section it does not belong to.
  EXPECT_THROW(apply_config_text(cfg, "[training]\nd = 8\n"), ConfigError);
}

TEST(RunConfig, BadValuesRejected) {
  RunConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "d", "eight"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "d", "8x"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "lr", "fast"), ConfigError);
  EXPECT_THROW(set_config_value(cfg, "no_tm", "maybe"), ConfigError);
  try {
    apply_config_text(cfg, "[dims]\n\nd = -1\n", "run.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.ini:3"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, ValidateCatchesInconsistentSettings) {
  auto bad = [](auto edit) {
    RunConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](RunConfig& c) { c.d = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.d = 6; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.d_t = 10; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.fusion = "max"; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.temperature = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.lambda_reg = c.lambda_cls = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.no_hg1 = c.no_hg2 = c.no_hg3 = true; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& c) { c.batch_contrastive = 1; }).validate(), ConfigError);
}

TEST(RunConfig, IniRoundTrip) {
  RunConfig cfg;
  cfg.d = 16;
  cfg.lr = 0.1 + 0.2;
  cfg.no_hg2 = true;
  cfg.fusion = "gated";
  cfg.seed = 123456789012345ull;
  RunConfig back;
  apply_config_text(back, cfg.to_ini());
  EXPECT_EQ(back.to_ini(), cfg.to_ini());
  EXPECT_EQ(back.lr, cfg.lr);
  EXPECT_EQ(back.seed, cfg.seed);

  test::TempDir dir;
  dir.write("c.ini", "# comment\n[dims]\nd = 64\n; another\n[ablation]\nno_tm = yes\n");
  RunConfig f;
  apply_config_file(f, dir / "c.ini");
  EXPECT_EQ(f.d, 64u);
  EXPECT_TRUE(f.no_tm);
  EXPECT_THROW(apply_config_file(f, dir / "absent.ini"), ConfigError);
}

TEST(RunConfig, HashTracksEverythingButWorkdir) {
  RunConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  b.workdir = "/elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  RunConfig c;
  c.no_hg3 = true;
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(RunConfig, EveryFieldIsAddressable) {
  RunConfig cfg;
  auto fields = config_fields(cfg);
  std::set<std::string> keys;
  for (const auto& f : fields) {
    EXPECT_TRUE(keys.insert(f.key).second) << "duplicate key " << f.key;
    EXPECT_FALSE(f.section.empty());
  }
  for (const char* k : {"d", "lr", "temperature", "no_mixhop", "fusion", "seed", "profile", "lenient", "k_zones"})
    EXPECT_TRUE(keys.count(k)) << k;
}
