// SPDX-License-Identifier: Apache-2.0
//
// Mix-hop transition matrix: hop-weighted co-occurrence counts accumulated
// over trajectories, then row-normalized into the initial value of a
// learnable N x N propagation weight.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "dst/autodiff.hpp"
#include "dst/graph_core.hpp"

namespace dst {

/// Non-negative integer N x N matrix stored as sorted per-row maps.
class CountMatrix {
 public:
  explicit CountMatrix(std::size_t n = 0) : rows_(n) {}
  std::size_t size() const { return rows_.size(); }
  std::int64_t at(std::size_t i, std::size_t j) const;
  void add(std::size_t i, std::size_t j, std::int64_t v) { rows_[i][static_cast<std::uint32_t>(j)] += v; }
  const std::map<std::uint32_t, std::int64_t>& row(std::size_t i) const { return rows_[i]; }
  std::size_t nonzeros() const;
  CountMatrix& operator+=(const CountMatrix& other);
  std::vector<double> to_dense() const;
  bool operator==(const CountMatrix& other) const { return rows_ == other.rows_; }

 private:
  std::vector<std::map<std::uint32_t, std::int64_t>> rows_;
};

/// For every trajectory of length m and position pair p < q, adds
/// m - (q - p) to cell [road_p, road_q].
CountMatrix accumulate_mixhop(const std::vector<Trajectory>& trajectories, std::size_t n_roads);

/// Dense row-major N x N row-stochastic matrix.
struct MixHopMatrix {
  std::size_t n = 0;
  std::vector<double> values;
  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }

  /// "DSTP" magic, u32 N, then row-major f64.
  void save(const std::filesystem::path& path) const;
  static MixHopMatrix load(const std::filesystem::path& path);
  static MixHopMatrix identity(std::size_t n);
};

/// Divides each nonzero row by its sum; all-zero rows become the identity row.
MixHopMatrix row_normalize(const CountMatrix& raw);
/// Dense variant; throws std::invalid_argument on a negative entry.
MixHopMatrix row_normalize(std::size_t n, const std::vector<double>& raw);

/// Z_hop = P Z for a learnable (or constant) P of shape [N, N] and Z [N, d].
ad::Tensor apply_mixhop(const ad::Tensor& p_tilde, const ad::Tensor& z_init);

}  // namespace dst
