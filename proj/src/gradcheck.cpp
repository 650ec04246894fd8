// SPDX-License-Identifier: Apache-2.0

#include "dst/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dst/features.hpp"
#include "dst/fusion_eval.hpp"
#include "dst/graph_core.hpp"
#include "dst/hypergraph.hpp"
#include "dst/mixhop.hpp"
#include "dst/nn.hpp"
#include "dst/spatial.hpp"
#include "dst/temporal.hpp"

namespace dst {

using ad::Tensor;

double max_relative_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                          const GradCheckOptions& options) {
  for (const auto& t : wrt)
    if (!t.requires_grad()) throw std::invalid_argument("gradient check target does not require grad");
  Tensor l = loss();
  ad::backward(l);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) {
    analytic.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                    : std::vector<double>(t.numel(), 0.0));
  }
  auto eval = [&] {
    ad::NoGradGuard guard;
    return loss().item();
  };
  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k];
    std::vector<std::size_t> entries(t.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
    }
    auto data = t.mutable_data();
    for (auto i : entries) {
      const double saved = data[i];
      data[i] = saved + options.epsilon;
      double up = eval();
      data[i] = saved - options.epsilon;
      double down = eval();
      data[i] = saved;
      double numeric = (up - down) / (2.0 * options.epsilon);
      double a = analytic[k][i];
      double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto t : wrt) t.zero_grad();
  return worst;
}

namespace {

struct Suite {
  GradCheckOptions options;
  std::mt19937_64 rng{options.seed};
  std::vector<GradCheckResult> results;

  Tensor randn(ad::Shape shape, double shift = 0.0, bool grad = true) {
    std::normal_distribution<double> nd;
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = nd(rng) + shift;
    return Tensor::from(std::move(shape), std::move(v), grad);
  }
  // Weighted sum so that every output entry gets a distinct upstream gradient.
  Tensor project(const Tensor& out) { return ad::sum(ad::mul(out, randn(out.shape(), 0.0, false))); }

  void check(const std::string& name, const std::vector<Tensor>& wrt, const std::function<Tensor()>& loss) {
    double e = max_relative_error(loss, wrt, options);
    results.push_back({name, e, std::isfinite(e) && e <= options.tolerance});
  }
  void check_out(const std::string& name, const std::vector<Tensor>& wrt, const std::function<Tensor()>& out) {
    Tensor w = randn(out().shape(), 0.0, false);
    check(name, wrt, [&, w] { return ad::sum(ad::mul(out(), w)); });
  }
};

std::vector<Tensor> all_params(const nn::ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& n : store.names())
    if (store.get(n).requires_grad()) out.push_back(store.get(n));
  return out;
}

std::vector<Tensor> params_with_prefix(const nn::ParamStore& store, const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& n : store.names())
    if (n.rfind(prefix, 0) == 0 && store.get(n).requires_grad()) out.push_back(store.get(n));
  return out;
}

void primitives(Suite& s) {
  auto a = s.randn({3, 4}), b = s.randn({4, 5});
  s.check_out("matmul", {a, b}, [=] { return ad::matmul(a, b); });
  auto ba = s.randn({2, 3, 4}), bb = s.randn({2, 4, 3});
  s.check_out("bmm", {ba, bb}, [=] { return ad::bmm(ba, bb); });
  s.check_out("transpose", {a}, [=] { return ad::transpose(a); });
  s.check_out("permute", {ba}, [=] { return ad::permute(ba, {2, 0, 1}); });
  s.check_out("reshape", {ba}, [=] { return ad::reshape(ba, {6, 4}); });

  auto x = s.randn({3, 4}), y = s.randn({3, 4}), row = s.randn({1, 4}), col = s.randn({3, 1});
  s.check_out("add", {x, y, row}, [=] { return ad::add(ad::add(x, y), row); });
  s.check_out("sub", {x, col}, [=] { return ad::sub(x, col); });
  s.check_out("mul", {x, y, row}, [=] { return ad::mul(ad::mul(x, y), row); });
  auto pos = s.randn({3, 4}, 3.0);
  s.check_out("div", {x, pos}, [=] { return ad::div(x, pos); });
  s.check_out("scale", {x}, [=] { return ad::scale(x, -1.7); });
  s.check_out("add_scalar", {x}, [=] { return ad::add_scalar(x, 0.3); });
  s.check_out("sum", {x}, [=] { return ad::sum(x); });
  s.check_out("mean", {x}, [=] { return ad::mean(x); });
  s.check_out("sum_last", {ba}, [=] { return ad::sum_last(ba); });
  s.check_out("concat", {x, y}, [=] { return ad::concat({x, y}); });
  s.check_out("slice", {ba}, [=] { return ad::slice(ba, 1, 3); });
  std::vector<std::size_t> ids{2, 0, 2, 1};
  s.check_out("embedding_lookup", {x}, [=] { return ad::embedding_lookup(x, ids); });
  s.check_out("softmax", {ba}, [=] { return ad::softmax(ba, 1); });
  s.check_out("log_softmax", {x}, [=] { return ad::log_softmax(x, -1); });
  s.check_out("leaky_relu", {x}, [=] { return ad::leaky_relu(x, 0.2); });
  s.check_out("relu", {x}, [=] { return ad::relu(x); });
  s.check_out("elu", {x}, [=] { return ad::elu(x); });
  s.check_out("sigmoid", {x}, [=] { return ad::sigmoid(x); });
  s.check_out("tanh", {x}, [=] { return ad::tanh(x); });
  s.check_out("exp", {x}, [=] { return ad::exp(x); });
  s.check_out("log", {pos}, [=] { return ad::log(pos); });
  s.check_out("pow", {pos}, [=] { return ad::pow(pos, 1.5); });
  auto gamma = s.randn({4}), beta = s.randn({4});
  s.check_out("layer_norm", {ba, gamma, beta}, [=] { return ad::layer_norm(ba, gamma, beta); });
  std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1};
  s.check_out("masked_fill", {x}, [=] { return ad::softmax(ad::masked_fill(x, mask, {3, 4}, -1e9)); });
  auto target = s.randn({3, 4}, 0.0, false);
  s.check("mse_loss", {x}, [=] { return ad::mse_loss(x, target); });
  std::vector<std::size_t> labels{3, 0, 1};
  s.check("cross_entropy_loss", {x}, [=] { return ad::cross_entropy_loss(x, labels); });
  auto xp = s.randn({3, 6}), hp = s.randn({3, 6}), st = s.randn({3, 2});
  std::vector<double> active{1.0, 0.0, 1.0};
  s.check_out("gru_update", {xp, hp, st}, [=] { return ad::gru_update(xp, hp, st, active); });
}

struct TinyCity {
  RoadNetwork network;
  std::vector<Trajectory> trajectories;
  DiscretizeResult features;
  SpatialInputs inputs;
  MixHopMatrix mixhop;
};

TinyCity tiny_city() {
  TinyCity c;
  c.network = generate_synthetic_city(4, 4, 1, 11);
  c.trajectories = simulate_trajectories(c.network, 60, 12);
  c.features = discretize_features(c.network, 5);
  HypergraphOptions ho;
  ho.k_zones = 3;
  ho.seed = 13;
  auto hg = build_hypergraph(c.network, ho);
  c.inputs = make_spatial_inputs(c.network, c.features.table, compute_edge_features(c.network), hg);
  c.mixhop = row_normalize(accumulate_mixhop(c.trajectories, c.network.size()));
  return c;
}

void layers(Suite& s) {
  nn::Rng rng(s.options.seed);
  {
    nn::ParamStore ps;
    nn::Linear lin(ps, "lin", 4, 3, rng);
    auto x = s.randn({5, 4});
    s.check_out("linear", {x, lin.weight, lin.bias}, [=] { return lin(x); });
  }
  {
    nn::ParamStore ps;
    nn::GRU gru(ps, "gru", 3, 4, rng);
    auto table = s.randn({6, 3});
    std::vector<std::vector<std::size_t>> seqs{{0, 1, 2, 3}, {5, 4}, {2, 2, 1}};
    auto wrt = all_params(ps);
    wrt.push_back(table);
    s.check_out("gru", wrt, [=] { return gru.run(table, seqs); });
  }

  auto city = tiny_city();
  const std::size_t n = city.network.size(), d = 8;
  {
    nn::ParamStore ps;
    FeatureEmbedding fe(ps, "feat", city.features.codec.vocab_sizes(), 3, d, rng);
    s.check_out("feature_embedding", all_params(ps), [=, &city] { return fe(city.features.table); });
  }
  {
    nn::ParamStore ps;
    GATLayer gat(ps, "gat", d, d, 4, rng);
    auto z = s.randn({n, d});
    auto wrt = all_params(ps);
    wrt.push_back(z);
    s.check_out("gat", wrt, [=, &city] { return gat(z, city.inputs.attention_mask, city.inputs.edge_features); });
  }
  {
    nn::ParamStore ps;
    HGNNLayer h1(ps, "hgnn0", d, d, rng), h2(ps, "hgnn1", d, d, rng);
    auto z = s.randn({n, d});
    auto wrt = all_params(ps);
    wrt.push_back(z);
    s.check_out("hgnn", wrt, [=, &city] {
      return h2(ad::relu(h1(z, city.inputs.hyper_operator)), city.inputs.hyper_operator);
    });
  }
  {
    auto zg = s.randn({n, d}), zh = s.randn({n, d});
    std::vector<std::size_t> batch{0, 3, 5, 7, 9};
    s.check("contrastive_loss", {zg, zh}, [=] { return contrastive_loss(zg, zh, batch, 0.1); });
    std::vector<std::uint8_t> positives(25, 0);
    for (std::size_t i = 0; i < 5; ++i) positives[i * 5 + i] = 1;
    positives[0 * 5 + 2] = positives[2 * 5 + 0] = 1;
    s.check("contrastive_loss_hyper_positives", {zg, zh},
            [=] { return contrastive_loss(zg, zh, batch, 0.1, &positives); });
  }
  {
    SpatialConfig cfg;
    cfg.d = d;
    cfg.d_f = 3;
    cfg.seed = 5;
    SpatialModel model(city.features.codec.vocab_sizes(), &city.mixhop, cfg);
    std::vector<std::size_t> batch{1, 2, 4, 8, 16};
    s.check("spatial_model", all_params(model.params()), [&, batch] {
      return model.loss(model.forward(city.inputs), batch, city.inputs);
    });
  }
}

void temporal(Suite& s) {
  TemporalConfig cfg;
  cfg.d_t = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.seq_len = 6;
  cfg.d_out = 4;
  cfg.seed = 3;
  std::vector<TrafficSequence> seqs;
  for (std::uint32_t r = 0; r < 3; ++r)
    for (std::size_t ch = 0; ch < 2; ++ch) {
      auto v = s.randn({cfg.seq_len}, 0.0, false).to_vector();
      seqs.push_back({r, ch, v});
    }
  std::vector<const TrafficSequence*> batch;
  for (const auto& q : seqs) batch.push_back(&q);

  {
    TemporalModel model(cfg);
    auto x = s.randn({4, cfg.seq_len});
    auto wrt = params_with_prefix(model.params(), "block0.");
    wrt.push_back(x);
    s.check_out("transformer_block", wrt, [&, x] { return model.encode(x).block_outputs[0]; });
  }
  {
    TemporalModel model(cfg);
    s.check("regression_head", all_params(model.params()), [&] { return model.joint_loss(batch, 1.0, 0.0).total; });
  }
  {
    TemporalModel model(cfg);
    s.check("classification_head", all_params(model.params()),
            [&] { return model.joint_loss(batch, 0.0, 1.0).total; });
  }
  {
    TemporalModel model(cfg);
    s.check("temporal_joint_loss", all_params(model.params()), [&] { return model.joint_loss(batch).total; });
  }
}

void fusion(Suite& s) {
  nn::Rng rng(s.options.seed + 1);
  nn::ParamStore ps;
  GatedFusion gate(ps, 4, 3, rng);
  auto a = s.randn({5, 4}), b = s.randn({5, 4}), c = s.randn({5, 4});
  auto wrt = all_params(ps);
  wrt.insert(wrt.end(), {a, b, c});
  s.check_out("gated_fusion", wrt, [=] { return gate({a, b, c}); });
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options) {
  Suite s;
  s.options = options;
  s.rng.seed(options.seed);
  primitives(s);
  layers(s);
  temporal(s);
  fusion(s);
  return s.results;
}

}  // namespace dst
