// SPDX-License-Identifier: Apache-2.0

#include "dst/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dst/errors.hpp"

namespace dst {

using ad::Tensor;

SpatialInputs make_spatial_inputs(const RoadNetwork& network, const CodeTable& codes, const EdgeFeatures& edge_features,
                                  const Hypergraph& hypergraph, bool raw_degrees, bool self_loops) {
  const std::size_t n = network.size();
  if (codes.rows != n) throw ShapeError("make_spatial_inputs: code table rows differ from road count");
  if (edge_features.values.size() != network.edges().size() * 2)
    throw ShapeError("make_spatial_inputs: edge features not aligned with edges");
  if (hypergraph.node_count() != n) throw ShapeError("make_spatial_inputs: hypergraph size differs from road count");

  SpatialInputs in;
  in.n = n;
  in.codes = codes;
  in.attention_mask.assign(n * n, 1);
  std::vector<double> x(n * n * 2, 0.0);
  const auto& edges = network.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [from, to] = edges[e];
    std::size_t cell = static_cast<std::size_t>(to) * n + from;
    in.attention_mask[cell] = 0;
    x[cell * 2] = edge_features.values[e * 2];
    x[cell * 2 + 1] = edge_features.values[e * 2 + 1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!network.predecessors(static_cast<std::uint32_t>(i)).empty()) continue;
    if (!self_loops) throw DataError("road " + std::to_string(network.road(i).id) + " has no in-edges");
    in.attention_mask[i * n + i] = 0;
  }
  in.edge_features = Tensor::from({n * n, 2}, std::move(x));
  in.hyper_operator = Tensor::from({n, n}, hypergraph.propagation_operator(raw_degrees));
  in.hyper_groups.assign(n, {});
  const auto& hedges = hypergraph.edges();
  for (std::uint32_t k = 0; k < hedges.size(); ++k) {
    if (hedges[k].kind != HyperedgeKind::kFunctionalZone && hedges[k].kind != HyperedgeKind::kOnewayAdjacent) continue;
    for (auto v : hedges[k].members) in.hyper_groups[v].push_back(k);
  }
  return in;
}

// ---- layers ------------------------------------------------------------------------

FeatureEmbedding::FeatureEmbedding(nn::ParamStore& params, const std::string& prefix,
                                   const std::vector<std::size_t>& vocab_sizes, std::size_t d_f, std::size_t d,
                                   nn::Rng& rng) {
  for (std::size_t c = 0; c < vocab_sizes.size(); ++c)
    tables.push_back(params.uniform(prefix + ".table" + std::to_string(c), {vocab_sizes[c], d_f}, 1, rng));
  projection = nn::Linear(params, prefix + ".proj", d_f * vocab_sizes.size(), d, rng);
}

Tensor FeatureEmbedding::operator()(const CodeTable& codes) const {
  if (codes.cols != tables.size())
    throw ShapeError("embed_features: expected " + std::to_string(tables.size()) + " feature columns, got " +
                     std::to_string(codes.cols));
  std::vector<Tensor> parts;
  std::vector<std::size_t> ids(codes.rows);
  for (std::size_t c = 0; c < codes.cols; ++c) {
    const std::size_t vocab = tables[c].dim(0);
    for (std::size_t r = 0; r < codes.rows; ++r) {
      ids[r] = codes.at(r, c);
      if (ids[r] >= vocab)
        throw DataError("feature " + std::to_string(c) + " code " + std::to_string(ids[r]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    parts.push_back(ad::embedding_lookup(tables[c], ids));
  }
  return projection(ad::concat(parts));
}

GATLayer::GATLayer(nn::ParamStore& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                   std::size_t h, nn::Rng& rng)
    : heads(h) {
  if (h == 0 || d_out % h != 0) throw ConfigError("GAT: output width must be a multiple of the head count");
  head_dim = d_out / h;
  const std::size_t wide = heads * head_dim;
  weight = params.uniform(prefix + ".weight", {d_in, wide}, d_in, rng);
  attn_target = params.uniform(prefix + ".attn_target", {1, wide}, head_dim, rng);
  attn_source = params.uniform(prefix + ".attn_source", {1, wide}, head_dim, rng);
  attn_edge = params.uniform(prefix + ".attn_edge", {2, heads}, 2, rng);
  output = nn::Linear(params, prefix + ".out", wide, d_out, rng);
}

Tensor GATLayer::operator()(const Tensor& z, const std::vector<std::uint8_t>& mask, const Tensor& edge_features,
                            std::vector<Tensor>* attention) const {
  const std::size_t n = z.dim(0);
  if (mask.size() != n * n || edge_features.dim(0) != n * n)
    throw ShapeError("GAT: mask and edge features must cover " + std::to_string(n) + "x" + std::to_string(n));
  Tensor wv = ad::matmul(z, weight);
  Tensor target = ad::mul(wv, attn_target);
  Tensor source = ad::mul(wv, attn_source);
  Tensor edge = ad::matmul(edge_features, attn_edge);  // [N*N, heads]
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    Tensor s_i = ad::sum_last(ad::slice(target, lo, hi));                    // [N,1]
    Tensor s_j = ad::transpose(ad::sum_last(ad::slice(source, lo, hi)));     // [1,N]
    Tensor s_e = ad::reshape(ad::slice(edge, h, h + 1), {n, n});             // [N,N]
    Tensor logits = ad::leaky_relu(ad::add(ad::add(s_i, s_j), s_e), negative_slope);
    logits = ad::masked_fill(logits, mask, {n, n}, -std::numeric_limits<double>::infinity());
    Tensor alpha = ad::softmax(logits, -1);
    if (attention) attention->push_back(alpha);
    outs.push_back(ad::elu(ad::matmul(alpha, ad::slice(wv, lo, hi))));
  }
  return output(heads == 1 ? outs[0] : ad::concat(outs));
}

HGNNLayer::HGNNLayer(nn::ParamStore& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                     nn::Rng& rng) {
  weight = params.uniform(prefix + ".weight", {d_in, d_out}, d_in, rng);
}

Tensor HGNNLayer::operator()(const Tensor& z, const Tensor& propagation) const {
  return ad::matmul(propagation, ad::matmul(z, weight));
}

// ---- objective ---------------------------------------------------------------------

namespace {

Tensor unit_rows(const Tensor& x) {
  Tensor norm = ad::pow(ad::add_scalar(ad::sum_last(ad::mul(x, x)), 1e-12), -0.5);
  return ad::mul(x, norm);
}

Tensor directed_nce(const Tensor& sim, const std::vector<double>& weights, std::size_t b) {
  Tensor logp = ad::log_softmax(sim, -1);
  return ad::scale(ad::sum(ad::mul(logp, Tensor::from({b, b}, weights))), -1.0 / static_cast<double>(b));
}

}  // namespace

Tensor contrastive_loss(const Tensor& z_g, const Tensor& z_h, std::span<const std::size_t> batch, double temperature,
                        const std::vector<std::uint8_t>* positives) {
  const std::size_t b = batch.size();
  if (b < 2) throw std::invalid_argument("contrastive_loss: batch needs at least 2 rows for negatives");
  if (!(temperature > 0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  if (z_g.shape() != z_h.shape()) throw ShapeError("contrastive_loss: view shapes differ");
  for (auto id : batch)
    if (id >= z_g.dim(0)) throw std::invalid_argument("contrastive_loss: batch id outside 0..N-1");
  Tensor ug = unit_rows(ad::embedding_lookup(z_g, batch));
  Tensor uh = unit_rows(ad::embedding_lookup(z_h, batch));
  Tensor sim = ad::scale(ad::matmul(ug, ad::transpose(uh)), 1.0 / temperature);
  std::vector<double> weights(b * b, 0.0);
  if (!positives) {
    for (std::size_t i = 0; i < b; ++i) weights[i * b + i] = 1.0;
  } else {
    if (positives->size() != b * b) throw ShapeError("contrastive_loss: positive mask must be B x B");
    for (std::size_t i = 0; i < b; ++i) {
      double cnt = 0;
      for (std::size_t j = 0; j < b; ++j) cnt += (*positives)[i * b + j] || i == j ? 1.0 : 0.0;
      for (std::size_t j = 0; j < b; ++j)
        if ((*positives)[i * b + j] || i == j) weights[i * b + j] = 1.0 / cnt;
    }
  }
  // The positive relation is symmetric, so both directions share the weights.
  Tensor forward_dir = directed_nce(sim, weights, b);
  Tensor backward_dir = directed_nce(ad::transpose(sim), weights, b);
  return ad::scale(ad::add(forward_dir, backward_dir), 0.5);
}

// ---- model ------------------------------------------------------------------------

SpatialModel::SpatialModel(const std::vector<std::size_t>& vocab_sizes, const MixHopMatrix* mixhop,
                           const SpatialConfig& config)
    : config_(config) {
  if (config.d == 0 || config.d_f == 0) throw ConfigError("spatial dims must be positive");
  if (config.gat_layers == 0 || config.hgnn_layers == 0) throw ConfigError("spatial layer counts must be positive");
  nn::Rng rng(config.seed);
  embed_ = FeatureEmbedding(params_, "embed", vocab_sizes, config.d_f, config.d, rng);
  if (!config.no_mixhop) {
    if (!mixhop) throw ConfigError("mix-hop matrix required unless no_mixhop is set");
    auto p = Tensor::from({mixhop->n, mixhop->n}, mixhop->values);
    // A frozen matrix stays out of the store so the optimizer never sees it.
    mixhop_ = config.freeze_mixhop ? p : params_.add("mixhop", p);
  }
  for (std::size_t l = 0; l < config.gat_layers; ++l)
    gat_.emplace_back(params_, "gat" + std::to_string(l), config.d, config.d, config.gat_heads, rng);
  for (std::size_t l = 0; l < config.hgnn_layers; ++l)
    hgnn_.emplace_back(params_, "hgnn" + std::to_string(l), config.d, config.d, rng);
  if (config.projection) {
    for (const char* p : {"proj_graph", "proj_hyper"}) {
      auto& head = std::string(p) == "proj_graph" ? proj_graph_ : proj_hyper_;
      head.emplace_back(params_, std::string(p) + "0", config.d, config.d, rng);
      head.emplace_back(params_, std::string(p) + "1", config.d, config.d, rng);
    }
  }
}

Tensor SpatialModel::project(const std::vector<nn::Linear>& head, const Tensor& z) const {
  if (head.empty()) return z;
  return head[1](ad::elu(head[0](z)));
}

SpatialModel::Views SpatialModel::forward(const SpatialInputs& in) const {
  Views v;
  v.initial = embed_(in.codes);
  if (mixhop_.defined()) {
    if (mixhop_.dim(0) != in.n)
      throw ShapeError("spatial model mix-hop matrix is " + std::to_string(mixhop_.dim(0)) + " roads, inputs have " +
                       std::to_string(in.n));
    v.hop = apply_mixhop(mixhop_, v.initial);
  } else {
    v.hop = v.initial;
  }
  Tensor g = v.hop;
  for (const auto& layer : gat_) g = layer(g, in.attention_mask, in.edge_features);
  v.graph = g;
  Tensor h = v.hop;
  for (std::size_t l = 0; l < hgnn_.size(); ++l) {
    h = hgnn_[l](h, in.hyper_operator);
    if (l + 1 < hgnn_.size()) h = ad::relu(h);
  }
  v.hyper = h;
  return v;
}

Tensor SpatialModel::loss(const Views& v, std::span<const std::size_t> batch, const SpatialInputs& in) const {
  Tensor pg = project(proj_graph_, v.graph);
  Tensor ph = project(proj_hyper_, v.hyper);
  if (!config_.hyper_positives) return contrastive_loss(pg, ph, batch, config_.temperature);
  const std::size_t b = batch.size();
  std::vector<std::uint8_t> pos(b * b, 0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) {
        pos[i * b + j] = 1;
        continue;
      }
      const auto& gi = in.hyper_groups[batch[i]];
      const auto& gj = in.hyper_groups[batch[j]];
      for (auto k : gi)
        if (std::find(gj.begin(), gj.end(), k) != gj.end()) {
          pos[i * b + j] = 1;
          break;
        }
    }
  return contrastive_loss(pg, ph, batch, config_.temperature, &pos);
}

std::vector<double> train_spatial(SpatialModel& model, const SpatialInputs& inputs) {
  const auto& cfg = model.config();
  if (inputs.n < 2) throw DataError("train_spatial: need at least 2 roads");
  nn::AdamW opt(cfg.optimizer);
  nn::Rng rng(cfg.seed ^ 0x5eed5a7a1ULL);
  std::vector<std::size_t> order(inputs.n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t b = std::min(cfg.batch, inputs.n);
  std::vector<double> history;
  history.reserve(cfg.epochs);
  for (std::size_t step = 0; step < cfg.epochs; ++step) {
    std::shuffle(order.begin(), order.end(), rng);
    std::span<const std::size_t> batch(order.data(), b);
    auto views = model.forward(inputs);
    Tensor loss = model.loss(views, batch, inputs);
    double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError("spatial loss is not finite at step " + std::to_string(step));
    history.push_back(value);
    model.params().zero_grad();
    ad::backward(loss);
    opt.step(model.params());
  }
  return history;
}

SpatialEmbeddings spatial_embeddings(const SpatialModel& model, const SpatialInputs& inputs) {
  ad::NoGradGuard guard;
  auto v = model.forward(inputs);
  SpatialEmbeddings e;
  e.n = inputs.n;
  e.d = model.config().d;
  e.graph = v.graph.to_vector();
  e.hyper = v.hyper.to_vector();
  return e;
}

}  // namespace dst
