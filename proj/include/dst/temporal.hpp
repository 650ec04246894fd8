// SPDX-License-Identifier: Apache-2.0
//
// Temporal branch: per-road hourly traffic sequences encoded by a causal
// transformer trained on next-step regression plus weekday/weekend
// classification.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dst/autodiff.hpp"
#include "dst/features.hpp"
#include "dst/nn.hpp"

namespace dst {

struct TemporalConfig {
  std::size_t d_t = 32;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ff_mult = 4;
  std::size_t d_out = 32;
  std::size_t seq_len = TrafficDynamics::kHours;
  bool bidirectional = false;
  double lambda_reg = 10.0;
  double lambda_cls = 1.0;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  nn::AdamWConfig optimizer{};
  std::uint64_t seed = 0;
};

/// T x d_t sinusoidal table; throws std::invalid_argument for odd d_t.
std::vector<double> positional_encoding(std::size_t t, std::size_t d_t);

/// log1p followed by a dataset-level z-score.
struct SequenceTransform {
  double mean = 0.0;
  double std = 1.0;
  double apply(double count) const;
  static SequenceTransform fit(const TrafficDynamics& dynamics);
};

struct TrafficSequence {
  std::uint32_t road = 0;
  std::size_t channel = 0;  // 0 weekday, 1 weekend; also the class label
  std::vector<double> values;
};

/// 2N sequences ordered (road 0 weekday, road 0 weekend, road 1 weekday, ...).
std::vector<TrafficSequence> build_sequences(const TrafficDynamics& dynamics, const SequenceTransform& transform);

struct TransformerBlock {
  ad::Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  nn::Linear qkv, out, ff1, ff2;
};

class TemporalModel {
 public:
  struct Encoded {
    ad::Tensor hidden;                     // [S, T, d_t] after the final norm
    ad::Tensor final_state;                // [S, d_t], position T-1
    std::vector<ad::Tensor> block_outputs; // [S, T, d_t] per block (pre final norm)
    std::vector<ad::Tensor> attention;     // [S*heads, T, T] per block
  };
  struct Loss {
    ad::Tensor total, regression, classification;
  };

  explicit TemporalModel(const TemporalConfig& config);

  /// `values` is [S, T] of transformed counts.
  Encoded encode(const ad::Tensor& values) const;
  Encoded encode(const std::vector<const TrafficSequence*>& batch) const;
  /// Joint loss; throws on an empty batch or when both weights are zero.
  Loss joint_loss(const std::vector<const TrafficSequence*>& batch) const;
  Loss joint_loss(const std::vector<const TrafficSequence*>& batch, double lambda_reg, double lambda_cls) const;
  /// Class logits [S, 2] of the final states.
  ad::Tensor classify(const Encoded& encoded) const;
  /// Next-step predictions [S, T-1] produced from positions 0..T-2.
  ad::Tensor predict_next(const Encoded& encoded) const;

  /// Per-road embedding: weekday and weekend final states concatenated, then
  /// mapped to d_out by a fixed seeded projection. `sequences` must follow
  /// build_sequences ordering.
  std::vector<double> road_embeddings(const std::vector<TrafficSequence>& sequences) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const TemporalConfig& config() const { return config_; }

  SequenceTransform transform;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  TemporalConfig config_;
  nn::ParamStore params_;
  nn::Linear input_;
  ad::Tensor position_;  // [1, T, d_t]
  std::vector<TransformerBlock> blocks_;
  ad::Tensor final_gain_, final_bias_;
  nn::Linear regression_, classifier_, road_projection_;
  std::vector<std::uint8_t> causal_mask_;  // [1, T, T]
};

struct TemporalHistory {
  std::vector<double> regression, classification;
};

/// Seeded shuffled mini-batch epochs over `sequences` with AdamW.
TemporalHistory train_temporal(TemporalModel& model, const std::vector<TrafficSequence>& sequences);

/// Fraction of sequences whose predicted class equals the channel.
double classification_accuracy(const TemporalModel& model, const std::vector<TrafficSequence>& sequences);
/// Mean teacher-forced next-step MSE over all sequences.
double regression_mse(const TemporalModel& model, const std::vector<TrafficSequence>& sequences);

}  // namespace dst
