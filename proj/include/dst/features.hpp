// SPDX-License-Identifier: Apache-2.0
//
// Preprocessing: feature discretization, edge geometry features and hourly
// weekday/weekend traffic dynamics.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dst/graph_core.hpp"

namespace dst {

inline constexpr double kEarthRadiusM = 6371000.0;

/// Great-circle distance in meters between two lat/lon points in degrees.
double haversine(double lat_i, double lon_i, double lat_j, double lon_j);

/// Angle in degrees, in [0, 180], between the directions of two roads, each
/// taken as the unit chord from start to end on the unit sphere.
double edge_angle(const RoadRecord& road_i, const RoadRecord& road_j);

/// One column of the road feature table.
struct FeatureColumn {
  enum class Kind { kContinuous, kCategorical };
  std::string name;
  Kind kind = Kind::kCategorical;
  // continuous: equal-width bins over [lo, hi], half-open, top bin closed
  double lo = 0.0, hi = 0.0;
  std::size_t bins = 1;
  bool degenerate = false;
  // categorical: value -> code in first-appearance order
  std::vector<std::string> categories;

  /// Codes 0..cardinality()-1 are real values; cardinality() is the UNK code.
  std::size_t cardinality() const { return kind == Kind::kContinuous ? bins : categories.size(); }
  std::size_t unk_code() const { return cardinality(); }
  std::size_t vocab_size() const { return cardinality() + 1; }
  std::optional<std::size_t> encode_number(double value) const;
  std::optional<std::size_t> encode_category(const std::string& value) const;
  /// Bin midpoint or category string of a code.
  std::string decode(std::size_t code) const;
};

/// Discretization for road features plus the edge-feature normalization
/// statistics, so a second city can be encoded identically.
struct FeatureCodec {
  std::vector<FeatureColumn> columns;  // length, road_type, lanes, oneway
  std::array<double, 2> edge_mean{0.0, 0.0};
  std::array<double, 2> edge_std{1.0, 1.0};

  std::size_t feature_count() const { return columns.size(); }
  std::vector<std::size_t> vocab_sizes() const;

  void save(const std::filesystem::path& path) const;
  static FeatureCodec load(const std::filesystem::path& path);
};

/// N x C1 feature codes, row-major.
struct CodeTable {
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> codes;
  std::size_t unk_count = 0;
  std::size_t at(std::size_t r, std::size_t c) const { return codes[r * cols + c]; }
};

/// Raw feature strings of one road in codec column order.
std::vector<std::string> raw_features(const RoadRecord& road);

struct DiscretizeResult {
  FeatureCodec codec;
  CodeTable table;
  std::vector<std::string> warnings;
};

/// Fits the codec on `network` with `bins` equal-width bins.
DiscretizeResult discretize_features(const RoadNetwork& network, std::size_t bins);
/// Encodes `network` with an existing codec; unseen values map to UNK.
CodeTable encode_features(const RoadNetwork& network, const FeatureCodec& codec);

/// |E| x 2 table [angle degrees, centroid Haversine meters], row-major, before normalization.
std::vector<double> raw_edge_features(const RoadNetwork& network);

struct EdgeFeatures {
  std::vector<double> values;  // |E| x 2, z-scored
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 2> std{1.0, 1.0};
};
/// Computes and z-scores per column; standard deviations below 1e-12 become 1.
EdgeFeatures compute_edge_features(const RoadNetwork& network);
/// Normalizes with externally supplied statistics (transfer mode).
EdgeFeatures compute_edge_features(const RoadNetwork& network, const std::array<double, 2>& mean,
                                   const std::array<double, 2>& stddev);

/// N x 24 x 2 hourly visit counts; channel 0 weekday, 1 weekend.
struct TrafficDynamics {
  static constexpr std::size_t kHours = 24;
  static constexpr std::size_t kChannels = 2;
  std::size_t roads = 0;
  std::vector<std::uint32_t> counts;

  explicit TrafficDynamics(std::size_t n = 0) : roads(n), counts(n * kHours * kChannels, 0) {}
  std::uint32_t& at(std::size_t road, std::size_t hour, std::size_t channel) {
    return counts[(road * kHours + hour) * kChannels + channel];
  }
  std::uint32_t at(std::size_t road, std::size_t hour, std::size_t channel) const {
    return counts[(road * kHours + hour) * kChannels + channel];
  }
  std::uint64_t total() const;
  TrafficDynamics& operator+=(const TrafficDynamics& other);

  /// "DSTD" magic, u32 N, u32 T, u32 C, then row-major u32 counts.
  void save(const std::filesystem::path& path) const;
  static TrafficDynamics load(const std::filesystem::path& path);
};

/// Hour of day and weekend flag of an epoch timestamp shifted by `tz_offset_hours`.
std::pair<int, bool> hour_and_weekend(std::int64_t epoch_seconds, int tz_offset_hours = 0);

TrafficDynamics extract_traffic_dynamics(const std::vector<Trajectory>& trajectories, std::size_t n_roads,
                                         int tz_offset_hours = 0);

}  // namespace dst
