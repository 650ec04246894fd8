// SPDX-License-Identifier: Apache-2.0
//
// Semantic hypergraph over roads: spectral functional zones, same-type groups
// and clusters of nearby one-way roads.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dst/graph_core.hpp"

namespace dst {

enum class HyperedgeKind { kFunctionalZone, kSameType, kOnewayAdjacent, kSingleton };

std::string to_string(HyperedgeKind kind);
HyperedgeKind hyperedge_kind_from_string(const std::string& s);

struct Hyperedge {
  HyperedgeKind kind;
  std::vector<std::uint32_t> members;  // ascending dense road indices
};

class Hypergraph {
 public:
  Hypergraph() = default;
  /// Throws if a hyperedge is empty or references a road >= n.
  Hypergraph(std::size_t n, std::vector<Hyperedge> edges);

  std::size_t node_count() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Hyperedge>& edges() const { return edges_; }

  /// N x K 0/1 incidence, row-major.
  std::vector<double> incidence() const;
  std::vector<double> node_degree() const;
  std::vector<double> edge_degree() const;

  /// Dense N x N operator D_v^-1 A D_e^-1 A^T, or D_v A D_e A^T when `raw_degrees`.
  /// Throws if some road belongs to no hyperedge.
  std::vector<double> propagation_operator(bool raw_degrees = false) const;

  /// One JSON object per line: {"kind": str, "members": [dense index, ...]}.
  void save(const std::filesystem::path& path) const;
  static Hypergraph load(const std::filesystem::path& path, std::size_t n);

 private:
  std::size_t n_ = 0;
  std::vector<Hyperedge> edges_;
};

// ---- spectral machinery ------------------------------------------------------

struct EigenDecomposition {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // n x n row-major; column k is the eigenvector of values[k]
  int sweeps = 0;
};

/// Cyclic Jacobi for a dense symmetric matrix. Converged when the off-diagonal
/// Frobenius norm falls below `tol`; throws NumericalError after `max_sweeps`.
EigenDecomposition jacobi_eigen(std::size_t n, std::vector<double> matrix, double tol = 1e-9, int max_sweeps = 100);

/// Lloyd's algorithm with k-means++ seeding over `points` (rows x dim).
std::vector<std::size_t> kmeans(const std::vector<double>& points, std::size_t rows, std::size_t dim, std::size_t k,
                                std::uint64_t seed, int max_iterations = 100);

/// Normalized spectral clustering of a symmetrized 0/1 adjacency (n x n).
std::vector<std::size_t> spectral_clustering(std::size_t n, const std::vector<double>& adjacency, std::size_t k,
                                             std::uint64_t seed);

// ---- hyperedge builders ------------------------------------------------------------

std::vector<Hyperedge> build_hyperedges_functional(const RoadNetwork& network, std::size_t k_zones, std::uint64_t seed);
std::vector<Hyperedge> build_hyperedges_same_type(const RoadNetwork& network);
std::vector<Hyperedge> build_hyperedges_oneway_adjacent(const RoadNetwork& network, double radius_m = 200.0);

struct HypergraphOptions {
  std::size_t k_zones = 8;
  double radius_m = 200.0;
  std::uint64_t seed = 0;
  bool functional = true;
  bool same_type = true;
  bool oneway = true;
};

/// Concatenates the enabled kinds; roads left uncovered get singleton hyperedges.
Hypergraph build_hypergraph(const RoadNetwork& network, const HypergraphOptions& options);

}  // namespace dst
