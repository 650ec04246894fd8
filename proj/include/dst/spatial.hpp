// SPDX-License-Identifier: Apache-2.0
//
// Spatial branch: feature embedding, mix-hop propagation, the graph-attention
// view, the hypergraph view and the cross-view contrastive objective.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dst/autodiff.hpp"
#include "dst/features.hpp"
#include "dst/graph_core.hpp"
#include "dst/hypergraph.hpp"
#include "dst/mixhop.hpp"
#include "dst/nn.hpp"

namespace dst {

struct SpatialConfig {
  std::size_t d = 32;
  std::size_t d_f = 8;
  std::size_t gat_heads = 4;
  std::size_t gat_layers = 2;
  std::size_t hgnn_layers = 2;
  double temperature = 0.1;
  std::size_t epochs = 300;
  std::size_t batch = 128;
  nn::AdamWConfig optimizer{};
  bool no_mixhop = false;      // P~ replaced by the identity
  bool freeze_mixhop = false;  // P~ kept at its row-normalized initial value
  bool hyper_positives = false;
  bool projection = true;
  std::uint64_t seed = 0;
};

/// Constant per-city tensors consumed by the spatial encoders.
struct SpatialInputs {
  std::size_t n = 0;
  CodeTable codes;
  std::vector<std::uint8_t> attention_mask;  // N x N; 1 where j is not an in-neighbor of i
  ad::Tensor edge_features;                  // [N*N, 2]; row i*N+j holds the features of edge j -> i
  ad::Tensor hyper_operator;                 // [N, N]
  std::vector<std::vector<std::uint32_t>> hyper_groups;  // per road: zone/one-way hyperedges containing it
};

/// Roads without in-edges get a self-loop with zero edge features, unless
/// `self_loops` is false, in which case they are rejected.
SpatialInputs make_spatial_inputs(const RoadNetwork& network, const CodeTable& codes, const EdgeFeatures& edge_features,
                                  const Hypergraph& hypergraph, bool raw_degrees = false, bool self_loops = true);

/// One embedding table of width d_f per feature, concatenated and projected to d.
struct FeatureEmbedding {
  std::vector<ad::Tensor> tables;
  nn::Linear projection;
  FeatureEmbedding() = default;
  FeatureEmbedding(nn::ParamStore& params, const std::string& prefix, const std::vector<std::size_t>& vocab_sizes,
                   std::size_t d_f, std::size_t d, nn::Rng& rng);
  ad::Tensor operator()(const CodeTable& codes) const;
};

struct GATLayer {
  std::size_t heads = 0, head_dim = 0;
  ad::Tensor weight;          // [d_in, heads*head_dim]
  ad::Tensor attn_target;     // [1, heads*head_dim], scores W v_i
  ad::Tensor attn_source;     // [1, heads*head_dim], scores W v_j
  ad::Tensor attn_edge;       // [2, heads]
  nn::Linear output;          // heads*head_dim -> d_out
  double negative_slope = 0.2;

  GATLayer() = default;
  GATLayer(nn::ParamStore& params, const std::string& prefix, std::size_t d_in, std::size_t d_out, std::size_t heads,
           nn::Rng& rng);
  /// When `attention` is given it receives one [N, N] matrix per head.
  ad::Tensor operator()(const ad::Tensor& z, const std::vector<std::uint8_t>& mask, const ad::Tensor& edge_features,
                        std::vector<ad::Tensor>* attention = nullptr) const;
};

struct HGNNLayer {
  ad::Tensor weight;  // [d, d]
  HGNNLayer() = default;
  HGNNLayer(nn::ParamStore& params, const std::string& prefix, std::size_t d_in, std::size_t d_out, nn::Rng& rng);
  ad::Tensor operator()(const ad::Tensor& z, const ad::Tensor& propagation) const;
};

/// Symmetric InfoNCE between rows of two views restricted to `batch`, with
/// cosine similarity over `temperature`. With `positives` (B x B, 0/1,
/// diagonal set) every marked pair counts as a positive with equal weight.
ad::Tensor contrastive_loss(const ad::Tensor& z_g, const ad::Tensor& z_h, std::span<const std::size_t> batch,
                            double temperature, const std::vector<std::uint8_t>* positives = nullptr);

class SpatialModel {
 public:
  struct Views {
    ad::Tensor initial, hop, graph, hyper;
  };

  /// `mixhop` holds the row-normalized initial P~; ignored with no_mixhop.
  SpatialModel(const std::vector<std::size_t>& vocab_sizes, const MixHopMatrix* mixhop, const SpatialConfig& config);

  Views forward(const SpatialInputs& inputs) const;
  ad::Tensor loss(const Views& views, std::span<const std::size_t> batch, const SpatialInputs& inputs) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const SpatialConfig& config() const { return config_; }
  bool uses_mixhop() const { return mixhop_.defined(); }
  /// Learned P~ (or its frozen value); undefined with no_mixhop.
  const ad::Tensor& mixhop() const { return mixhop_; }

  void save(const std::filesystem::path& path) const { nn::save_params(path, params_); }
  void load(const std::filesystem::path& path) { nn::load_params(path, params_); }

 private:
  ad::Tensor project(const std::vector<nn::Linear>& head, const ad::Tensor& z) const;

  SpatialConfig config_;
  nn::ParamStore params_;
  FeatureEmbedding embed_;
  ad::Tensor mixhop_;
  std::vector<GATLayer> gat_;
  std::vector<HGNNLayer> hgnn_;
  std::vector<nn::Linear> proj_graph_, proj_hyper_;
};

/// Seeded training loop; returns the loss of every step (one mini-batch per
/// epoch). Throws NumericalError with the step index on a non-finite loss.
std::vector<double> train_spatial(SpatialModel& model, const SpatialInputs& inputs);

struct SpatialEmbeddings {
  std::vector<double> graph, hyper;  // N x d each, row-major
  std::size_t n = 0, d = 0;
};
SpatialEmbeddings spatial_embeddings(const SpatialModel& model, const SpatialInputs& inputs);

}  // namespace dst
