#include <gtest/gtest.h>

#include <random>

#include "dst/errors.hpp"
#include "dst/gradcheck.hpp"
#include "dst/mixhop.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dst;
using ad::Tensor;

namespace {

Trajectory walk(std::vector<std::uint32_t> roads) {
  Trajectory t;
  t.road_ids = std::move(roads);
  t.timestamps.resize(t.road_ids.size(), 0);
  return t;
}

}  // namespace

TEST(MixHop, ThreeRoadTrajectory) {
  auto raw = accumulate_mixhop({walk({1, 2, 3})}, 4);
  EXPECT_EQ(raw.at(1, 2), 2);
  EXPECT_EQ(raw.at(2, 3), 2);
  EXPECT_EQ(raw.at(1, 3), 1);
  EXPECT_EQ(raw.nonzeros(), 3u);
}

TEST(MixHop, SingleRoadGivesNothing) {
  EXPECT_EQ(accumulate_mixhop({walk({2})}, 3).nonzeros(), 0u);
}

TEST(MixHop, RevisitAccumulatesOnDiagonal) {
  auto raw = accumulate_mixhop({walk({0, 1, 0})}, 2);
  EXPECT_EQ(raw.at(0, 1), 2);
  EXPECT_EQ(raw.at(1, 0), 2);
  EXPECT_EQ(raw.at(0, 0), 1);
  EXPECT_EQ(raw.at(1, 1), 0);
}

TEST(MixHop, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(2024);
  for (int set = 0; set < 1000; ++set) {
    auto [n, trajs] = oracle::random_trajectory_set(rng);
    auto expect = oracle::mixhop_counts(trajs, n);
    auto raw = accumulate_mixhop(trajs, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(raw.at(i, j), expect[i * n + j]) << "set " << set;
  }
}

TEST(MixHop, ShardsMergeByAddition) {
  std::mt19937_64 rng(5);
  auto [n, trajs] = oracle::random_trajectory_set(rng, 15, 12);
  std::vector<Trajectory> a(trajs.begin(), trajs.begin() + trajs.size() / 2), b(trajs.begin() + trajs.size() / 2,
                                                                                 trajs.end());
  auto merged = accumulate_mixhop(a, n);
  merged += accumulate_mixhop(b, n);
  EXPECT_TRUE(merged == accumulate_mixhop(trajs, n));
}

TEST(MixHop, CloserHopsWeighMore) {
  // Distinct roads so every pair lands in its own cell.
  std::vector<std::uint32_t> roads(9);
  for (std::uint32_t i = 0; i < 9; ++i) roads[i] = i;
  auto raw = accumulate_mixhop({walk(roads)}, 9);
  for (std::uint32_t hop = 1; hop + 1 < 9; ++hop) EXPECT_GT(raw.at(0, hop), raw.at(0, hop + 1));
}

TEST(RowNormalize, ArithmeticAndForcedDiagonal) {
  auto p = row_normalize(3, {2, 2, 1, 0, 0, 0, 1, 0, 3});
  EXPECT_DOUBLE_EQ(p.at(0, 0), 0.4);
  EXPECT_DOUBLE_EQ(p.at(0, 1), 0.4);
  EXPECT_DOUBLE_EQ(p.at(0, 2), 0.2);
  EXPECT_EQ(p.at(1, 0), 0.0);
  EXPECT_EQ(p.at(1, 1), 1.0);
  EXPECT_EQ(p.at(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(p.at(2, 2), 0.75);
  EXPECT_THROW(row_normalize(2, {1, -1, 0, 1}), std::invalid_argument);
}

TEST(RowNormalize, StochasticInputUnchanged) {
  std::vector<double> m{0.5, 0.25, 0.25, 0.0, 1.0, 0.0, 0.1, 0.2, 0.7};
  auto p = row_normalize(3, m);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(p.values[i], m[i], 1e-12);
}

TEST(RowNormalize, RowsSumToOneOnRandomSets) {
  std::mt19937_64 rng(77);
  for (int set = 0; set < 200; ++set) {
    auto [n, trajs] = oracle::random_trajectory_set(rng);
    auto raw = accumulate_mixhop(trajs, n);
    auto p = row_normalize(raw);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(p.at(i, j), 0.0);
        s += p.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
      if (raw.row(i).empty()) EXPECT_EQ(p.at(i, i), 1.0);
    }
  }
}

TEST(RowNormalize, CheckpointRoundTrip) {
  auto p = row_normalize(accumulate_mixhop({walk({0, 1, 2, 1})}, 3));
  test::TempDir dir;
  p.save(dir / "p.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "p.bin"), 8u + 8u * 9);
  auto back = MixHopMatrix::load(dir / "p.bin");
  EXPECT_EQ(back.n, 3u);
  EXPECT_EQ(back.values, p.values);
}

TEST(ApplyMixHop, IdentityAndSelection) {
  auto z = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  auto eye = MixHopMatrix::identity(3);
  EXPECT_EQ(apply_mixhop(Tensor::from({3, 3}, eye.values), z).to_vector(), z.to_vector());
  // Row 0 selects road 2.
  auto sel = apply_mixhop(Tensor::from({3, 3}, {0, 0, 1, 0, 1, 0, 1, 0, 0}), z).to_vector();
  EXPECT_EQ(sel[0], 5.0);
  EXPECT_EQ(sel[1], 6.0);
  EXPECT_THROW(apply_mixhop(Tensor::zeros({3, 3}), Tensor::zeros({2, 2})), ShapeError);
}

TEST(ApplyMixHop, GradientMatchesFiniteDifferences) {
  auto p = row_normalize(accumulate_mixhop({walk({0, 1, 2, 3, 1})}, 4));
  auto pt = Tensor::from({4, 4}, p.values, true);
  auto z = Tensor::from({4, 3}, {0.3, -1, 2, 0.5, 0.1, -0.2, 1.5, 0.7, -0.9, 0.2, 0.4, 1.1});
  double err = max_relative_error([&] { return ad::sum(ad::tanh(apply_mixhop(pt, z))); }, {pt});
  EXPECT_LT(err, 1e-4);
}
