// SPDX-License-Identifier: Apache-2.0
//
// Road networks, trajectories, file ingestion and deterministic synthetic data.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dst {

struct RoadRecord {
  std::int64_t id = 0;
  double start_lon = 0, start_lat = 0, end_lon = 0, end_lat = 0;
  double centroid_lon = 0, centroid_lat = 0;
  std::string road_type;
  double length = 0;  // meters
  int lanes = 1;
  bool oneway = false;
};

/// Directed road graph. Roads are nodes; `edges` are (from, to) connections
/// between roads in dense index space 0..N-1.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  /// Validates records and edges (dense indices) and builds the adjacency.
  RoadNetwork(std::vector<RoadRecord> roads, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges);

  std::size_t size() const { return roads_.size(); }
  const std::vector<RoadRecord>& roads() const { return roads_; }
  const RoadRecord& road(std::size_t i) const { return roads_[i]; }
  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges() const { return edges_; }

  bool adjacent(std::uint32_t from, std::uint32_t to) const;
  const std::vector<std::uint32_t>& successors(std::uint32_t road) const { return out_[road]; }
  const std::vector<std::uint32_t>& predecessors(std::uint32_t road) const { return in_[road]; }
  /// Index into edges() of (from, to), or -1.
  std::int64_t edge_index(std::uint32_t from, std::uint32_t to) const;
  /// Dense N x N 0/1 adjacency, row-major.
  std::vector<double> dense_adjacency() const;

  /// Original (file) ID of each dense index.
  const std::vector<std::int64_t>& original_ids() const { return original_ids_; }
  /// Dense index of an original ID, or -1.
  std::int64_t dense_index(std::int64_t original_id) const;

 private:
  std::vector<RoadRecord> roads_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges_;
  std::vector<std::vector<std::uint32_t>> out_, in_;
  std::vector<std::int64_t> original_ids_;
  std::vector<std::pair<std::int64_t, std::uint32_t>> id_lookup_;  // sorted by original ID
};

struct Trajectory {
  std::vector<std::uint32_t> road_ids;
  std::vector<std::int64_t> timestamps;  // epoch seconds, entry time of each road
  std::size_t size() const { return road_ids.size(); }
};

/// Reads the roads CSV and edges CSV; original IDs are re-indexed densely in
/// file order. Throws DataError with the offending line number.
RoadNetwork load_network(const std::filesystem::path& roads_path, const std::filesystem::path& edges_path);
/// Writes both CSVs using the original IDs.
void write_network(const RoadNetwork& network, const std::filesystem::path& roads_path,
                   const std::filesystem::path& edges_path);

struct TrajectoryLoadResult {
  std::vector<Trajectory> trajectories;
  std::size_t violations = 0;  // unreachable consecutive pairs seen
  std::size_t dropped = 0;     // trajectories removed in strict mode
};

/// Strict mode drops a trajectory containing an unreachable consecutive pair;
/// lenient mode splits it at each break instead.
TrajectoryLoadResult load_trajectories(const std::filesystem::path& path, const RoadNetwork& network,
                                       bool lenient = false);
TrajectoryLoadResult validate_trajectories(std::vector<Trajectory> trajectories, const RoadNetwork& network,
                                           bool lenient = false);
void write_trajectories(const std::vector<Trajectory>& trajectories, const RoadNetwork& network,
                        const std::filesystem::path& path);

/// Grid city: rows x cols intersections, two-way "residential"/"tertiary"
/// streets, "primary" arterials through the middle row and column, and
/// `ring_count` one-way "trunk" rings inset from the boundary.
RoadNetwork generate_synthetic_city(int rows, int cols, int ring_count, std::uint64_t seed);

/// Hour-of-day start intensities for weekday and weekend days.
struct TimeProfile {
  std::array<double, 24> weekday{};
  std::array<double, 24> weekend{};
  double weekend_share = 2.0 / 7.0;
  /// Peaks at 08:00 and 18:00 on weekdays, 14:00 on weekends.
  static TimeProfile commuter();
  /// All weekday mass at `hour`; weekend uniform.
  static TimeProfile single_peak(int hour);
};

/// Travel-speed model of the simulator: speed = base(type) / (1 + congestion * volume / max_volume).
struct SpeedModel {
  double trunk = 22.0, primary = 15.0, tertiary = 11.0, residential = 8.0;
  double congestion = 1.5;
  double base_speed(const std::string& road_type) const;
};

/// Type-weighted random walks on the largest strongly connected component with
/// lengths uniform in [10, 100]; entry timestamps follow the speed model from a
/// start time drawn from `profile`. Deterministic in `seed`.
std::vector<Trajectory> simulate_trajectories(const RoadNetwork& network, std::size_t count, std::uint64_t seed,
                                              const TimeProfile& profile = TimeProfile::commuter(),
                                              const SpeedModel& speed = {});

/// Largest strongly connected component (dense indices, ascending).
std::vector<std::uint32_t> largest_scc(const RoadNetwork& network);

/// Epoch seconds of Monday 2024-01-01 00:00 UTC; simulated days start here.
inline constexpr std::int64_t kSimulationEpoch = 1704067200;

}  // namespace dst
