#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dst/errors.hpp"
#include "dst/temporal.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dst;
using ad::Tensor;

namespace {

TemporalConfig tiny_config() {
  TemporalConfig cfg;
  cfg.d_t = 16;
  cfg.heads = 2;
  cfg.d_out = 8;
  cfg.seed = 4;
  return cfg;
}

Tensor random_values(std::size_t s, std::size_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(s * t);
  for (auto& x : v) x = nd(rng);
  return Tensor::from({s, t}, v);
}

std::vector<const TrafficSequence*> pointers(const std::vector<TrafficSequence>& seqs) {
  std::vector<const TrafficSequence*> out;
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

}  // namespace

TEST(PositionalEncoding, StandardSinusoid) {
  auto pe = positional_encoding(24, 8);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(pe[k], k % 2 == 0 ? 0.0 : 1.0);
  for (double v : pe) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(pe[5 * 8 + 2], std::sin(5.0 / std::pow(10000.0, 2.0 / 8.0)));
  EXPECT_DOUBLE_EQ(pe[5 * 8 + 3], std::cos(5.0 / std::pow(10000.0, 2.0 / 8.0)));
  EXPECT_THROW(positional_encoding(24, 7), std::invalid_argument);
}

TEST(PositionalEncoding, RowsAreDistinct) {
  auto pe = positional_encoding(24, 4);
  std::set<std::vector<double>> rows;
  for (std::size_t t = 0; t < 24; ++t) rows.insert(std::vector<double>(pe.begin() + t * 4, pe.begin() + t * 4 + 4));
  EXPECT_EQ(rows.size(), 24u);
}

TEST(SequenceTransform, Log1pThenZScore) {
  TrafficDynamics d(1);
  for (std::size_t h = 0; h < 24; ++h) d.at(0, h, 0) = d.at(0, h, 1) = static_cast<std::uint32_t>(h);
  auto tr = SequenceTransform::fit(d);
  double m = 0;
  for (std::size_t h = 0; h < 24; ++h) m += std::log1p(static_cast<double>(h));
  m /= 24;
  EXPECT_NEAR(tr.mean, m, 1e-12);
  EXPECT_NEAR(tr.apply(3), (std::log1p(3.0) - tr.mean) / tr.std, 1e-12);
  auto seqs = build_sequences(d, tr);
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].channel, 0u);
  EXPECT_EQ(seqs[1].channel, 1u);
  EXPECT_EQ(seqs[1].values.size(), 24u);
}

TEST(TemporalModel, CausalAtEveryBlock) {
  auto cfg = tiny_config();
  cfg.blocks = 3;
  TemporalModel model(cfg);
  auto x = random_values(3, 24, 1);
  auto v = x.to_vector();
  for (std::size_t s = 0; s < 3; ++s) v[s * 24 + 20] += 5.0;
  auto a = model.encode(x), b = model.encode(Tensor::from({3, 24}, v));
  const std::size_t d = cfg.d_t;
  for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
    auto ya = a.block_outputs[blk].to_vector(), yb = b.block_outputs[blk].to_vector();
    bool later_changed = false;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t t = 0; t < 24; ++t)
        for (std::size_t k = 0; k < d; ++k) {
          std::size_t i = (s * 24 + t) * d + k;
          if (t < 20) ASSERT_EQ(ya[i], yb[i]) << "block " << blk << " t " << t;
          else later_changed |= ya[i] != yb[i];
        }
    EXPECT_TRUE(later_changed);
  }
}

TEST(TemporalModel, BidirectionalSeesTheFuture) {
  auto cfg = tiny_config();
  cfg.bidirectional = true;
  TemporalModel model(cfg);
  auto x = random_values(1, 24, 2);
  auto v = x.to_vector();
  v[20] += 5.0;
  auto a = model.encode(x).hidden.to_vector(), b = model.encode(Tensor::from({1, 24}, v)).hidden.to_vector();
  EXPECT_NE(a[0], b[0]);
}

TEST(TemporalModel, AttentionRowsCoverOnlyThePast) {
  auto cfg = tiny_config();
  TemporalModel model(cfg);
  auto enc = model.encode(random_values(2, 24, 3));
  for (const auto& att : enc.attention) {
    ASSERT_EQ(att.shape(), (ad::Shape{2 * cfg.heads, 24, 24}));
    auto w = att.to_vector();
    for (std::size_t b = 0; b < 2 * cfg.heads; ++b)
      for (std::size_t t = 0; t < 24; ++t) {
        double s = 0;
        for (std::size_t u = 0; u < 24; ++u) {
          double a = w[(b * 24 + t) * 24 + u];
          if (u > t) EXPECT_EQ(a, 0.0);
          s += a;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
}

TEST(TemporalModel, ZeroInputFiniteAndDeterministic) {
  auto cfg = tiny_config();
  TemporalModel a(cfg), b(cfg);
  auto x = Tensor::zeros({2, 24});
  auto ea = a.encode(x).final_state.to_vector();
  for (double v : ea) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(ea, b.encode(x).final_state.to_vector());
  EXPECT_THROW(a.encode(Tensor::zeros({2, 23})), ShapeError);
}

TEST(JointLoss, LinearInWeights) {
  auto cfg = tiny_config();
  TemporalModel model(cfg);
  auto dyn = oracle::peak_dynamics(4, 1);
  auto seqs = build_sequences(dyn, SequenceTransform::fit(dyn));
  auto batch = pointers(seqs);
  auto l = model.joint_loss(batch, 1.0, 1.0);
  EXPECT_GE(l.regression.item(), 0.0);
  auto only_reg = model.joint_loss(batch, 10.0, 0.0);
  EXPECT_EQ(only_reg.total.item(), 10.0 * only_reg.regression.item());
  auto mixed = model.joint_loss(batch, 3.0, 0.5);
  EXPECT_NEAR(mixed.total.item(), 3.0 * l.regression.item() + 0.5 * l.classification.item(), 1e-12);
  EXPECT_THROW(model.joint_loss(batch, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(model.joint_loss({}, 1.0, 1.0), std::invalid_argument);
}

TEST(JointLoss, ConstantPredictorHasZeroRegressionLoss) {
  auto cfg = tiny_config();
  TemporalModel model(cfg);
  auto w = model.params().get("regression.weight").mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  model.params().get("regression.bias").mutable_data()[0] = 0.7;
  TrafficSequence s{0, 0, std::vector<double>(24, 0.7)};
  EXPECT_NEAR(model.joint_loss({&s}, 1.0, 0.0).regression.item(), 0.0, 1e-24);
}

TEST(JointLoss, UntrainedClassifierNearLn2) {
  TemporalConfig cfg;
  TemporalModel model(cfg);
  auto dyn = oracle::peak_dynamics(20, 2);
  auto seqs = build_sequences(dyn, SequenceTransform::fit(dyn));
  EXPECT_NEAR(model.joint_loss(pointers(seqs), 1.0, 1.0).classification.item(), std::log(2.0), 0.05);
}

TEST(TrainTemporal, SeparatesWeekdayFromWeekend) {
  auto cfg = tiny_config();
  cfg.epochs = 10;
  cfg.batch = 8;
  auto dyn = oracle::peak_dynamics(40, 3, 10.0);
  TemporalModel model(cfg);
  model.transform = SequenceTransform::fit(dyn);
  auto seqs = build_sequences(dyn, model.transform);
  double mse0 = regression_mse(model, seqs);
  auto hist = train_temporal(model, seqs);
  EXPECT_EQ(hist.regression.size(), hist.classification.size());
  EXPECT_GE(classification_accuracy(model, seqs), 0.95);
  EXPECT_LT(regression_mse(model, seqs), mse0);
}

TEST(TrainTemporal, ShuffledLabelsStayAtChance) {
  auto cfg = tiny_config();
  cfg.epochs = 5;
  auto dyn = oracle::peak_dynamics(200, 4);
  TemporalModel model(cfg);
  model.transform = SequenceTransform::fit(dyn);
  auto seqs = build_sequences(dyn, model.transform);
  std::vector<std::size_t> labels;
  for (const auto& s : seqs) labels.push_back(s.channel);
  std::mt19937_64 rng(9);
  std::shuffle(labels.begin(), labels.end(), rng);
  auto noisy = seqs;
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i].channel = labels[i];
  train_temporal(model, noisy);
  // Held-out roads scored against their true channel.
  auto held = oracle::peak_dynamics(200, 5);
  auto test = build_sequences(held, model.transform);
  EXPECT_NEAR(classification_accuracy(model, test), 0.5, 0.05);
}

TEST(TrainTemporal, IdenticalRoadsShareEmbeddings) {
  auto cfg = tiny_config();
  auto dyn = oracle::peak_dynamics(3, 6);
  for (std::size_t h = 0; h < 24; ++h)
    for (std::size_t c = 0; c < 2; ++c) dyn.at(2, h, c) = dyn.at(0, h, c);
  TemporalModel model(cfg);
  model.transform = SequenceTransform::fit(dyn);
  auto z = model.road_embeddings(build_sequences(dyn, model.transform));
  ASSERT_EQ(z.size(), 3 * cfg.d_out);
  for (std::size_t k = 0; k < cfg.d_out; ++k) EXPECT_EQ(z[k], z[2 * cfg.d_out + k]);
}

TEST(TrainTemporal, CheckpointKeepsTransform) {
  auto cfg = tiny_config();
  auto dyn = oracle::peak_dynamics(3, 7);
  TemporalModel model(cfg);
  model.transform = SequenceTransform::fit(dyn);
  test::TempDir dir;
  model.save(dir / "t.bin");
  TemporalModel back(cfg);
  back.load(dir / "t.bin");
  EXPECT_EQ(back.transform.mean, model.transform.mean);
  auto seqs = build_sequences(dyn, model.transform);
  EXPECT_EQ(back.road_embeddings(seqs), model.road_embeddings(seqs));
}
