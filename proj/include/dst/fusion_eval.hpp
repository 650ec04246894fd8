// SPDX-License-Identifier: Apache-2.0
//
// Fusion of the branch representations and the downstream evaluation heads:
// speed inference, travel-time estimation and destination prediction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dst/autodiff.hpp"
#include "dst/graph_core.hpp"
#include "dst/nn.hpp"

namespace dst {

/// Dense row-major N x d matrix of per-road vectors.
struct Embedding {
  std::size_t n = 0, d = 0;
  std::vector<double> values;
  double at(std::size_t i, std::size_t j) const { return values[i * d + j]; }
  ad::Tensor tensor() const { return ad::Tensor::from({n, d}, values); }

  /// Named-tensor archive with a single entry "z".
  void save(const std::filesystem::path& path) const;
  static Embedding load(const std::filesystem::path& path);
};

enum class FusionMode { kConcat, kSum, kGated };
std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

struct SpeedLabel {
  std::uint32_t road = 0;
  double speed = 0.0;  // m/s
};

/// Per-road length / mean traversal time, where a traversal time is the gap
/// between a road's entry timestamp and the next road's. Untraversed roads are omitted.
std::vector<SpeedLabel> compute_speed_labels(const RoadNetwork& network, const std::vector<Trajectory>& trajectories);

/// Per-dimension sigmoid gate over the concatenated branches mixing them into one d-wide vector.
struct GatedFusion {
  nn::Linear gate;
  std::size_t branches = 0;
  GatedFusion() = default;
  GatedFusion(nn::ParamStore& params, std::size_t d, std::size_t branches, nn::Rng& rng);
  ad::Tensor operator()(const std::vector<ad::Tensor>& parts) const;
};

struct GateFitConfig {
  std::vector<SpeedLabel> labels;
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct FusedRepresentation {
  Embedding z;
  FusionMode mode = FusionMode::kConcat;
  std::vector<std::string> provenance;  // content hashes of the inputs
};

/// `z_d` may be null (temporal branch ablated). Gated mode fits the gate
/// together with a linear speed head on `gate_fit` before producing Z.
FusedRepresentation fuse(const Embedding& z_g, const Embedding& z_h, const Embedding* z_d, FusionMode mode,
                         const GateFitConfig* gate_fit = nullptr);

// ---- metrics ---------------------------------------------------------------------

double mean_absolute_error(std::span<const double> prediction, std::span<const double> truth);
double root_mean_squared_error(std::span<const double> prediction, std::span<const double> truth);
/// 1-based rank of `truth` when scores sort descending and ties favor the lower index.
std::size_t rank_of(std::span<const double> scores, std::size_t truth);

struct RankingMetrics {
  double acc1 = 0.0, mrr = 0.0;
};
/// `scores` is queries x classes.
RankingMetrics ranking_metrics(std::span<const double> scores, std::size_t classes, std::span<const std::size_t> truth);

// ---- reports ---------------------------------------------------------------------

struct EvalReport {
  std::string task;
  std::vector<std::string> metric_names;          // output order
  std::map<std::string, double> metrics;          // mean over seeds
  std::vector<std::map<std::string, double>> per_seed;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  std::string split;
  nlohmann::json extra = nlohmann::json::object();  // model, unk_codes, ...

  /// Recomputes `metrics` as the arithmetic mean of `per_seed`.
  void finalize();
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  std::string csv_header() const;
  std::string csv_row() const;
};

struct HeadConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 100;  // cap; early stopping usually ends sooner
  std::size_t batch = 64;
  std::size_t speed_batch = 16;
  std::size_t patience = 10;
  double lr = 1e-2;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // 0 disables
  double val_fraction = 0.1;
  double test_fraction = 0.3;
  std::size_t folds = 5;
};

/// Each column shifted to zero mean and unit variance over roads; constant columns only centered.
Embedding standardize_columns(const Embedding& z);

EvalReport eval_speed_inference(const Embedding& z, const std::vector<SpeedLabel>& labels,
                                std::span<const std::uint64_t> seeds, const HeadConfig& head = {});
EvalReport eval_travel_time(const Embedding& z, const std::vector<Trajectory>& trajectories,
                            std::span<const std::uint64_t> seeds, const HeadConfig& head = {});
EvalReport eval_destination(const Embedding& z, const std::vector<Trajectory>& trajectories,
                            std::span<const std::uint64_t> seeds, const HeadConfig& head = {});

/// Seeded 70/30 trajectory split (indices into the eligible set) used by both sequence tasks.
struct TrajectorySplit {
  std::vector<std::size_t> train, validation, test;
};
TrajectorySplit split_trajectories(std::size_t count, std::uint64_t seed, double test_fraction, double val_fraction);

/// Trajectories with 10..100 roads; throws DataError when none qualify.
std::vector<const Trajectory*> eligible_trajectories(const std::vector<Trajectory>& trajectories);

/// Seeds 1..count offset by `base` used for the repeated evaluations.
std::vector<std::uint64_t> eval_seeds(std::uint64_t base, std::size_t count = 5);

}  // namespace dst
