#include <gtest/gtest.h>

#include <fstream>

#include "dst/errors.hpp"
#include "dst/io.hpp"
#include "dst/pipeline.hpp"
#include "test_util.hpp"

using namespace dst;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const fs::path& workdir) {
  RunConfig c;
  c.workdir = workdir.string();
  c.synth_rows = c.synth_cols = 4;
  c.synth_trajectories = 150;
  c.d = 8;
  c.d_t = 8;
  c.d_f = 4;
  c.k_zones = 3;
  c.epochs_spatial = 3;
  c.epochs_temporal = 1;
  c.batch_contrastive = 16;
  c.eval_hidden = 8;
  c.eval_epochs = 2;
  c.eval_seeds = 1;
  return c;
}

std::string read(const fs::path& p) { return io::read_text(p); }

std::size_t manifest_lines(const Pipeline& p) {
  std::ifstream is(p.artifact("manifest.jsonl"));
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Pipeline, RequiresWorkdir) {
  RunConfig c;
  EXPECT_THROW(Pipeline{c}, ConfigError);
}

TEST(Pipeline, MissingArtifactNamesProducer) {
  test::TempDir dir;
  Pipeline p(tiny(dir.path()));
  try {
    p.run("eval");
    FAIL();
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.producer(), "fuse");
  }
  try {
    p.run("train-spatial");
    FAIL();
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.producer(), "preprocess");
  }
  EXPECT_THROW(p.run("bake"), ConfigError);
}

TEST(Pipeline, RunAllThenSkipAndResume) {
  test::TempDir dir;
  Pipeline p(tiny(dir.path()));
  p.run_all();
  for (const char* a : {"codec.json", "mixhop.dstp", "spatial.ckpt", "temporal.ckpt", "z_fused.bin",
                        "reports/speed_inference.json", "reports/travel_time.json", "reports/destination.json",
                        "reports/summary.csv"})
    EXPECT_TRUE(fs::exists(p.artifact(a))) << a;
  const auto recorded = manifest_lines(p);
  EXPECT_EQ(recorded, 7u);

  // Everything is current: nothing reruns.
  for (const auto& s : {"synth", "preprocess", "mixhop", "train-spatial", "train-temporal", "fuse", "eval"})
    EXPECT_FALSE(p.run(s)) << s;
  EXPECT_EQ(manifest_lines(p), recorded);

  // A damaged output forces exactly that stage to rerun.
  { std::ofstream(p.artifact("z_fused.bin"), std::ios::trunc) << "junk"; }
  EXPECT_TRUE(p.run("fuse"));
  EXPECT_FALSE(p.run("train-spatial"));

  // A deleted output is rebuilt as well.
  fs::remove(p.artifact("reports/destination.json"));
  EXPECT_TRUE(p.run("eval"));
  EXPECT_TRUE(fs::exists(p.artifact("reports/destination.json")));

  auto hash = RunConfig(p.config()).hash();
  auto summary = read(p.artifact("reports/summary.csv"));
  EXPECT_NE(summary.find("task,config_hash,"), std::string::npos);
  EXPECT_NE(summary.find(hash), std::string::npos);
}

TEST(Pipeline, ConfigChangeInvalidatesStages) {
  test::TempDir dir;
  auto cfg = tiny(dir.path());
  {
    Pipeline p(cfg);
    p.run("synth");
    p.run("preprocess");
  }
  cfg.bins = 5;
  Pipeline q(cfg);
  EXPECT_TRUE(q.run("preprocess"));
  EXPECT_FALSE(q.run("preprocess"));
}

TEST(Pipeline, SameSeedSameReports) {
  test::TempDir a, b;
  Pipeline pa(tiny(a.path())), pb(tiny(b.path()));
  pa.run_all();
  pb.run_all();
  for (const char* r : {"reports/speed_inference.json", "reports/travel_time.json", "reports/destination.json",
                        "reports/summary.csv", "z_fused.bin"})
    EXPECT_EQ(read(pa.artifact(r)), read(pb.artifact(r))) << r;
}

TEST(Pipeline, TransferNeedsMixhopFreeSource) {
  test::TempDir dir;
  auto cfg = tiny(dir.path());
  Pipeline p(cfg);
  p.run("synth");
  p.run("preprocess");
  p.run("mixhop");
  p.run("train-spatial");
  p.run("train-temporal");
  EXPECT_THROW(p.run("transfer"), ConfigError);

  cfg.no_mixhop = true;
  Pipeline q(cfg);
  q.run("train-spatial");
  EXPECT_TRUE(q.run("transfer"));
  auto j = nlohmann::json::parse(read(q.artifact("reports/transfer_destination.json")));
  EXPECT_TRUE(j.contains("unk_codes"));
  EXPECT_TRUE(j["metrics"].contains("ACC@1"));
}

TEST(WorkdirLock, SecondHolderRejected) {
  test::TempDir dir;
  {
    WorkdirLock first(dir.path());
    EXPECT_THROW(WorkdirLock{dir.path()}, ConfigError);
  }
  EXPECT_NO_THROW(WorkdirLock{dir.path()});
}
