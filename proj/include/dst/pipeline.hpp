// SPDX-License-Identifier: Apache-2.0
//
// End-to-end stages. The in-memory functions are the building blocks; the
// Pipeline class wraps them as resumable, content-hashed workdir stages.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dst/config.hpp"
#include "dst/features.hpp"
#include "dst/fusion_eval.hpp"
#include "dst/graph_core.hpp"
#include "dst/hypergraph.hpp"
#include "dst/mixhop.hpp"
#include "dst/spatial.hpp"
#include "dst/temporal.hpp"

namespace dst {

struct City {
  RoadNetwork network;
  std::vector<Trajectory> trajectories;
};

/// Grid city and simulated trajectories from the [synth] settings.
City synthesize_city(const RunConfig& cfg, std::uint64_t seed);

struct Preprocessed {
  FeatureCodec codec;
  CodeTable codes;
  EdgeFeatures edge_features;
  Hypergraph hypergraph;
  TrafficDynamics dynamics;
  std::vector<std::string> warnings;
};

HypergraphOptions hypergraph_options(const RunConfig& cfg);
Preprocessed preprocess(const City& city, const RunConfig& cfg);
/// Encodes with a source codec and source edge statistics (transfer mode).
Preprocessed preprocess_with_codec(const City& city, const RunConfig& cfg, const FeatureCodec& codec);

SpatialConfig spatial_config(const RunConfig& cfg);
TemporalConfig temporal_config(const RunConfig& cfg);
HeadConfig head_config(const RunConfig& cfg);

struct TrainedBranches {
  std::unique_ptr<SpatialModel> spatial;
  std::unique_ptr<TemporalModel> temporal;  // null with no_tm
  std::vector<double> spatial_loss;
  TemporalHistory temporal_loss;
  Embedding z_graph, z_hyper;
  std::optional<Embedding> z_dyn;
};

TrainedBranches train_branches(const City& city, const Preprocessed& pre, const RunConfig& cfg);

/// Runs frozen source encoders on another city's preprocessed inputs.
struct BranchEmbeddings {
  Embedding z_graph, z_hyper;
  std::optional<Embedding> z_dyn;
};
BranchEmbeddings apply_branches(const SpatialModel& spatial, const TemporalModel* temporal, const City& city,
                                const Preprocessed& pre, const RunConfig& cfg);

FusedRepresentation fuse_branches(const BranchEmbeddings& b, const City& city, const RunConfig& cfg);

/// All three downstream reports for a fused representation.
std::vector<EvalReport> evaluate_all(const Embedding& z, const City& city, const RunConfig& cfg);

/// Frozen source encoders applied to `target`; reports carry the UNK count.
std::vector<EvalReport> zero_shot_transfer(const SpatialModel& spatial, const TemporalModel* temporal,
                                           const FeatureCodec& source_codec, const City& target,
                                           const RunConfig& cfg);

// ---- workdir stages ------------------------------------------------------------

/// Exclusive ownership of a workdir for one process; released on destruction.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

class Pipeline {
 public:
  /// Stage names in execution order.
  static const std::vector<std::string>& stages();

  explicit Pipeline(RunConfig cfg);

  /// Runs one stage; returns false when it was skipped as up to date.
  bool run(const std::string& stage);
  /// Every stage from synth (when no input paths are configured) to eval.
  void run_all();

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path workdir() const { return workdir_; }
  std::filesystem::path artifact(const std::string& name) const { return workdir_ / name; }

 private:
  struct Paths {
    std::filesystem::path roads, edges, trajectories;
  };
  Paths data_paths() const;
  City load_city() const;
  void require(const std::filesystem::path& p, const std::string& producer) const;
  bool up_to_date(const std::string& stage, const std::vector<std::filesystem::path>& inputs,
                  const std::vector<std::filesystem::path>& outputs) const;
  void record(const std::string& stage, const std::vector<std::filesystem::path>& inputs,
              const std::vector<std::filesystem::path>& outputs, double seconds) const;

  void stage_synth();
  void stage_preprocess();
  void stage_mixhop();
  void stage_train_spatial();
  void stage_train_temporal();
  void stage_fuse();
  void stage_eval();
  void stage_transfer();

  RunConfig cfg_;
  std::filesystem::path workdir_;
};

}  // namespace dst
