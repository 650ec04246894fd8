#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dst/errors.hpp"
#include "dst/gradcheck.hpp"
#include "dst/spatial.hpp"
#include "test_util.hpp"

using namespace dst;
using ad::Tensor;

namespace {

Tensor randn(ad::Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

/// Random orthogonal d x d via Gram-Schmidt.
std::vector<double> random_rotation(std::size_t d, std::uint64_t seed) {
  auto m = randn({d, d}, seed).to_vector();
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0;
      for (std::size_t r = 0; r < d; ++r) dot += m[r * d + c] * m[r * d + p];
      for (std::size_t r = 0; r < d; ++r) m[r * d + c] -= dot * m[r * d + p];
    }
    double norm = 0;
    for (std::size_t r = 0; r < d; ++r) norm += m[r * d + c] * m[r * d + c];
    for (std::size_t r = 0; r < d; ++r) m[r * d + c] /= std::sqrt(norm);
  }
  return m;
}

struct City {
  RoadNetwork network;
  std::vector<Trajectory> trajectories;
  DiscretizeResult features;
  Hypergraph hypergraph;
  SpatialInputs inputs;
  MixHopMatrix mixhop;
};

City small_city(int side = 5) {
  City c;
  c.network = generate_synthetic_city(side, side, 1, 21);
  c.trajectories = simulate_trajectories(c.network, 120, 22);
  c.features = discretize_features(c.network, 6);
  HypergraphOptions ho;
  ho.k_zones = 4;
  ho.seed = 23;
  c.hypergraph = build_hypergraph(c.network, ho);
  c.inputs = make_spatial_inputs(c.network, c.features.table, compute_edge_features(c.network), c.hypergraph);
  c.mixhop = row_normalize(accumulate_mixhop(c.trajectories, c.network.size()));
  return c;
}

SpatialConfig small_config() {
  SpatialConfig cfg;
  cfg.d = 16;
  cfg.d_f = 4;
  cfg.epochs = 60;
  cfg.batch = 32;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(FeatureEmbedding, IdenticalRoadsShareRows) {
  CodeTable codes{3, 2, {1, 0, 2, 1, 1, 0}};
  nn::ParamStore ps;
  nn::Rng rng(1);
  FeatureEmbedding fe(ps, "feat", {3, 3}, 4, 6, rng);
  auto z = fe(codes);
  ASSERT_EQ(z.shape(), (ad::Shape{3, 6}));
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(z.at({0, j}), z.at({2, j}));
  CodeTable bad{1, 2, {3, 0}};
  EXPECT_THROW(fe(bad), DataError);
}

TEST(GAT, SingleNodeSelfLoopIsActivationOfInput) {
  nn::ParamStore ps;
  nn::Rng rng(2);
  GATLayer gat(ps, "gat", 3, 3, 1, rng);
  std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::copy(eye.begin(), eye.end(), gat.weight.mutable_data().begin());
  std::copy(eye.begin(), eye.end(), gat.output.weight.mutable_data().begin());
  auto v = Tensor::from({1, 3}, {0.5, -1.0, 2.0});
  std::vector<Tensor> attn;
  auto out = gat(v, {0}, Tensor::zeros({1, 2}), &attn).to_vector();
  EXPECT_DOUBLE_EQ(attn[0].item(), 1.0);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_NEAR(out[1], std::expm1(-1.0), 1e-15);
  EXPECT_DOUBLE_EQ(out[2], 2.0);
}

TEST(GAT, AttentionRowsAreDistributionsOverInNeighbors) {
  auto city = small_city();
  const std::size_t n = city.network.size();
  nn::ParamStore ps;
  nn::Rng rng(4);
  GATLayer gat(ps, "gat", 8, 8, 4, rng);
  std::vector<Tensor> attn;
  gat(randn({n, 8}, 5), city.inputs.attention_mask, city.inputs.edge_features, &attn);
  ASSERT_EQ(attn.size(), 4u);
  for (const auto& a : attn) {
    auto v = a.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (city.inputs.attention_mask[i * n + j]) EXPECT_EQ(v[i * n + j], 0.0);
        s += v[i * n + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GAT, PermutationEquivariant) {
  const std::size_t n = 10, d = 6;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::uint8_t> mask(n * n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      mask[i * n + (i + 1) % n] = 0;  // every node keeps one in-neighbor
      for (std::size_t j = 0; j < n; ++j)
        if (std::bernoulli_distribution(0.3)(rng)) mask[i * n + j] = 0;
    }
    auto z = randn({n, d}, 100 + trial), ef = randn({n * n, 2}, 200 + trial);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> zp(n * d), efp(n * n * 2);
    std::vector<std::uint8_t> maskp(n * n);
    auto zv = z.to_vector(), efv = ef.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) zp[perm[i] * d + k] = zv[i * d + k];
      for (std::size_t j = 0; j < n; ++j) {
        maskp[perm[i] * n + perm[j]] = mask[i * n + j];
        for (std::size_t c = 0; c < 2; ++c) efp[(perm[i] * n + perm[j]) * 2 + c] = efv[(i * n + j) * 2 + c];
      }
    }
    nn::ParamStore ps;
    nn::Rng init(trial);
    GATLayer gat(ps, "gat", d, d, 2, init);
    auto out = gat(z, mask, ef).to_vector();
    auto outp = gat(Tensor::from({n, d}, zp), maskp, Tensor::from({n * n, 2}, efp)).to_vector();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(outp[perm[i] * d + k], out[i * d + k], 1e-12);
  }
}

TEST(SpatialInputs, IsolatedRoadsNeedSelfLoops) {
  std::vector<RoadRecord> roads(3);
  for (std::size_t i = 0; i < 3; ++i) {
    roads[i].id = static_cast<std::int64_t>(i);
    roads[i].start_lon = 0.001 * i;
    roads[i].end_lon = 0.001 * i + 0.0005;
    roads[i].length = 50;
    roads[i].road_type = "residential";
  }
  RoadNetwork net(roads, {{0, 1}, {1, 0}});
  auto feats = discretize_features(net, 2);
  Hypergraph hg(3, {{HyperedgeKind::kSameType, {0, 1, 2}}});
  auto inputs = make_spatial_inputs(net, feats.table, compute_edge_features(net), hg);
  EXPECT_EQ(inputs.attention_mask[2 * 3 + 2], 0);  // road 2 has no in-edges
  EXPECT_EQ(inputs.attention_mask[0 * 3 + 0], 1);
  EXPECT_EQ(inputs.attention_mask[0 * 3 + 1], 0);
  EXPECT_THROW(make_spatial_inputs(net, feats.table, compute_edge_features(net), hg, false, false), DataError);
}

TEST(HGNN, IdentityWeightAveragesOverHyperedges) {
  Hypergraph all(3, {{HyperedgeKind::kSameType, {0, 1, 2}}});
  Hypergraph pair(3, {{HyperedgeKind::kSameType, {0, 1}}, {HyperedgeKind::kSingleton, {2}}});
  nn::ParamStore ps;
  nn::Rng rng(1);
  HGNNLayer layer(ps, "h", 2, 2, rng);
  std::vector<double> eye{1, 0, 0, 1};
  std::copy(eye.begin(), eye.end(), layer.weight.mutable_data().begin());
  auto z = Tensor::from({3, 2}, {1, 2, 3, 4, 8, -3});
  auto mean_out = layer(z, Tensor::from({3, 3}, all.propagation_operator())).to_vector();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(mean_out[i * 2], 4.0, 1e-12);
    EXPECT_NEAR(mean_out[i * 2 + 1], 1.0, 1e-12);
  }
  auto pair_out = layer(z, Tensor::from({3, 3}, pair.propagation_operator())).to_vector();
  EXPECT_NEAR(pair_out[0], 2.0, 1e-12);
  EXPECT_NEAR(pair_out[1], 3.0, 1e-12);
  EXPECT_NEAR(pair_out[4], 8.0, 1e-12);
}

TEST(Contrastive, OrthogonalRowsClosedForm) {
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  auto z = Tensor::from({4, 4}, eye);
  std::vector<std::size_t> batch{0, 1, 2, 3};
  double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + 3.0));
  EXPECT_NEAR(contrastive_loss(z, z, batch, 0.5).item(), expect, 1e-12);
  EXPECT_THROW(contrastive_loss(z, z, std::vector<std::size_t>{1}, 0.5), std::invalid_argument);
  EXPECT_THROW(contrastive_loss(z, z, batch, 0.0), std::invalid_argument);
}

TEST(Contrastive, InvariantToBatchOrderAndRotation) {
  const std::size_t n = 12, d = 5;
  auto zg = randn({n, d}, 1), zh = randn({n, d}, 2);
  std::vector<std::size_t> batch{0, 2, 3, 5, 8, 11}, shuffled{8, 3, 11, 0, 5, 2};
  double base = contrastive_loss(zg, zh, batch, 0.1).item();
  EXPECT_NEAR(contrastive_loss(zg, zh, shuffled, 0.1).item(), base, 1e-12);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto rot = Tensor::from({d, d}, random_rotation(d, 50 + s));
    double rotated = contrastive_loss(ad::matmul(zg, rot), ad::matmul(zh, rot), batch, 0.1).item();
    EXPECT_NEAR(rotated, base, 1e-9);
  }
}

TEST(SpatialModel, ViewShapesAndNoMixhopIdentity) {
  auto city = small_city();
  const std::size_t n = city.network.size();
  auto cfg = small_config();
  SpatialModel model(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  auto v = model.forward(city.inputs);
  for (const auto* t : {&v.initial, &v.hop, &v.graph, &v.hyper}) EXPECT_EQ(t->shape(), (ad::Shape{n, cfg.d}));
  EXPECT_TRUE(model.uses_mixhop());
  EXPECT_TRUE(model.params().contains("mixhop"));
  cfg.no_mixhop = true;
  SpatialModel plain(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  auto pv = plain.forward(city.inputs);
  EXPECT_EQ(pv.hop.to_vector(), pv.initial.to_vector());
  EXPECT_FALSE(plain.uses_mixhop());
}

TEST(SpatialModel, TrainingLowersLossAndReloadsExactly) {
  auto city = small_city();
  auto cfg = small_config();
  SpatialModel model(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  auto history = train_spatial(model, city.inputs);
  ASSERT_EQ(history.size(), cfg.epochs);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += history[i];
    tail += history[history.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
  EXPECT_LT(history.back(), history.front());

  test::TempDir dir;
  model.save(dir / "spatial.bin");
  SpatialModel reloaded(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  reloaded.load(dir / "spatial.bin");
  auto a = spatial_embeddings(model, city.inputs), b = spatial_embeddings(reloaded, city.inputs);
  EXPECT_EQ(a.graph, b.graph);
  EXPECT_EQ(a.hyper, b.hyper);
}

TEST(SpatialModel, SeededTrainingIsDeterministic) {
  auto city = small_city(4);
  auto cfg = small_config();
  cfg.epochs = 10;
  SpatialModel a(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  SpatialModel b(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  EXPECT_EQ(train_spatial(a, city.inputs), train_spatial(b, city.inputs));
}

TEST(SpatialModel, FrozenMixhopStaysAtInitialValue) {
  auto city = small_city(4);
  auto cfg = small_config();
  cfg.epochs = 5;
  cfg.freeze_mixhop = true;
  SpatialModel model(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
  train_spatial(model, city.inputs);
  EXPECT_EQ(model.mixhop().to_vector(), city.mixhop.values);
}
