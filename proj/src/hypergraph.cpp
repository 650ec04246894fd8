// SPDX-License-Identifier: Apache-2.0

#include "dst/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dst/errors.hpp"
#include "dst/features.hpp"
#include "dst/io.hpp"

namespace dst {

std::string to_string(HyperedgeKind kind) {
  switch (kind) {
    case HyperedgeKind::kFunctionalZone: return "functional_zone";
    case HyperedgeKind::kSameType: return "same_type";
    case HyperedgeKind::kOnewayAdjacent: return "oneway_adjacent";
    case HyperedgeKind::kSingleton: return "singleton";
  }
  return "unknown";
}

HyperedgeKind hyperedge_kind_from_string(const std::string& s) {
  if (s == "functional_zone") return HyperedgeKind::kFunctionalZone;
  if (s == "same_type") return HyperedgeKind::kSameType;
  if (s == "oneway_adjacent") return HyperedgeKind::kOnewayAdjacent;
  if (s == "singleton") return HyperedgeKind::kSingleton;
  throw DataError("unknown hyperedge kind '" + s + "'");
}

Hypergraph::Hypergraph(std::size_t n, std::vector<Hyperedge> edges) : n_(n), edges_(std::move(edges)) {
  for (auto& e : edges_) {
    if (e.members.empty()) throw DataError("empty hyperedge of kind " + to_string(e.kind));
    std::sort(e.members.begin(), e.members.end());
    e.members.erase(std::unique(e.members.begin(), e.members.end()), e.members.end());
    if (e.members.back() >= n) throw DataError("hyperedge member outside road range");
  }
}

std::vector<double> Hypergraph::incidence() const {
  const std::size_t k = edges_.size();
  std::vector<double> a(n_ * k, 0.0);
  for (std::size_t e = 0; e < k; ++e)
    for (auto v : edges_[e].members) a[v * k + e] = 1.0;
  return a;
}

std::vector<double> Hypergraph::node_degree() const {
  std::vector<double> d(n_, 0.0);
  for (const auto& e : edges_)
    for (auto v : e.members) d[v] += 1.0;
  return d;
}

std::vector<double> Hypergraph::edge_degree() const {
  std::vector<double> d;
  for (const auto& e : edges_) d.push_back(static_cast<double>(e.members.size()));
  return d;
}

std::vector<double> Hypergraph::propagation_operator(bool raw_degrees) const {
  auto dv = node_degree();
  for (std::size_t i = 0; i < n_; ++i)
    if (dv[i] == 0.0) throw DataError("road " + std::to_string(i) + " belongs to no hyperedge");
  std::vector<double> p(n_ * n_, 0.0);
  for (const auto& e : edges_) {
    double de = static_cast<double>(e.members.size());
    double w = raw_degrees ? de : 1.0 / de;
    for (auto i : e.members)
      for (auto j : e.members) p[i * n_ + j] += w;
  }
  for (std::size_t i = 0; i < n_; ++i) {
    double s = raw_degrees ? dv[i] : 1.0 / dv[i];
    for (std::size_t j = 0; j < n_; ++j) p[i * n_ + j] *= s;
  }
  return p;
}

void Hypergraph::save(const std::filesystem::path& path) const {
  auto os = io::open_out(path, false);
  for (const auto& e : edges_) os << nlohmann::json{{"kind", to_string(e.kind)}, {"members", e.members}}.dump() << '\n';
}

Hypergraph Hypergraph::load(const std::filesystem::path& path, std::size_t n) {
  auto is = io::open_in(path, false);
  std::vector<Hyperedge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      edges.push_back({hyperedge_kind_from_string(j.at("kind").get<std::string>()),
                       j.at("members").get<std::vector<std::uint32_t>>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed hyperedge: ") + e.what(), lineno);
    }
  }
  return Hypergraph(n, std::move(edges));
}

// ---- spectral machinery ------------------------------------------------------------

EigenDecomposition jacobi_eigen(std::size_t n, std::vector<double> a, double tol, int max_sweeps) {
  if (a.size() != n * n) throw ShapeError("jacobi_eigen: matrix size mismatch");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };
  EigenDecomposition out;
  int sweep = 0;
  while (off_norm() >= tol) {
    if (sweep >= max_sweeps)
      throw NumericalError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps");
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (apq == 0.0) continue;
        double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  out.sweeps = sweep;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a[order[k] * n + order[k]];
    for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + k] = v[i * n + order[k]];
  }
  return out;
}

std::vector<std::size_t> kmeans(const std::vector<double>& pts, std::size_t rows, std::size_t dim, std::size_t k,
                                std::uint64_t seed, int max_iterations) {
  if (k == 0 || k > rows) throw std::invalid_argument("kmeans: need 1 <= k <= rows");
  std::mt19937_64 rng(seed);
  auto dist2 = [&](std::size_t i, const double* c) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) s += (pts[i * dim + d] - c[d]) * (pts[i * dim + d] - c[d]);
    return s;
  };
  std::vector<double> centers;
  centers.reserve(k * dim);
  std::uniform_int_distribution<std::size_t> first(0, rows - 1);
  auto push_center = [&](std::size_t i) { centers.insert(centers.end(), pts.begin() + i * dim, pts.begin() + (i + 1) * dim); };
  push_center(first(rng));
  std::vector<double> best(rows, std::numeric_limits<double>::infinity());
  while (centers.size() < k * dim) {
    const double* c = centers.data() + centers.size() - dim;
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      best[i] = std::min(best[i], dist2(i, c));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      pick = rows - 1;
      for (std::size_t i = 0; i < rows; ++i) {
        acc += best[i];
        if (acc >= r && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    push_center(pick);
  }
  std::vector<std::size_t> label(rows, 0);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < rows; ++i) {
      std::size_t arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double d = dist2(i, centers.data() + c * dim);
        if (d < bd) {
          bd = d;
          arg = c;
        }
      }
      if (label[i] != arg) changed = true;
      label[i] = arg;
    }
    if (!changed) break;
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < rows; ++i) {
      ++count[label[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[label[i] * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0)
        for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] = sums[c * dim + d] / static_cast<double>(count[c]);
  }
  return label;
}

std::vector<std::size_t> spectral_clustering(std::size_t n, const std::vector<double>& adjacency, std::size_t k,
                                             std::uint64_t seed) {
  if (k > n) throw std::invalid_argument("spectral_clustering: k_zones exceeds road count");
  if (k <= 1) return std::vector<std::size_t>(n, 0);
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += adjacency[i * n + j];
  std::vector<double> lap(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    lap[i * n + i] = 1.0;
    for (std::size_t j = 0; j < n; ++j)
      if (adjacency[i * n + j] != 0.0 && deg[i] > 0 && deg[j] > 0)
        lap[i * n + j] -= adjacency[i * n + j] / std::sqrt(deg[i] * deg[j]);
  }
  auto eig = jacobi_eigen(n, std::move(lap));
  std::vector<double> emb(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      emb[i * k + c] = eig.vectors[i * n + c];
      norm += emb[i * k + c] * emb[i * k + c];
    }
    norm = std::sqrt(norm);
    if (norm > 0)
      for (std::size_t c = 0; c < k; ++c) emb[i * k + c] /= norm;
  }
  return kmeans(emb, n, k, k, seed);
}

// ---- builders -------------------------------------------------------------------

std::vector<Hyperedge> build_hyperedges_functional(const RoadNetwork& network, std::size_t k_zones, std::uint64_t seed) {
  const std::size_t n = network.size();
  if (k_zones == 0) throw std::invalid_argument("k_zones must be >= 1");
  if (k_zones > n) throw std::invalid_argument("k_zones (" + std::to_string(k_zones) + ") exceeds road count");
  std::vector<double> sym(n * n, 0.0);
  for (const auto& [a, b] : network.edges())
    if (a != b) sym[a * n + b] = sym[b * n + a] = 1.0;
  auto labels = spectral_clustering(n, sym, k_zones, seed);
  std::map<std::size_t, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  std::vector<Hyperedge> out;
  for (auto& [_, members] : groups) out.push_back({HyperedgeKind::kFunctionalZone, std::move(members)});
  std::sort(out.begin(), out.end(), [](const Hyperedge& x, const Hyperedge& y) { return x.members[0] < y.members[0]; });
  return out;
}

std::vector<Hyperedge> build_hyperedges_same_type(const RoadNetwork& network) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < network.size(); ++i) {
    const auto& t = network.road(i).road_type;
    if (!groups.count(t)) order.push_back(t);
    groups[t].push_back(i);
  }
  std::vector<Hyperedge> out;
  for (const auto& t : order) out.push_back({HyperedgeKind::kSameType, groups[t]});
  return out;
}

std::vector<Hyperedge> build_hyperedges_oneway_adjacent(const RoadNetwork& network, double radius_m) {
  std::vector<std::uint32_t> oneway;
  for (std::uint32_t i = 0; i < network.size(); ++i)
    if (network.road(i).oneway) oneway.push_back(i);
  std::vector<std::size_t> parent(oneway.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t a = 0; a < oneway.size(); ++a)
    for (std::size_t b = a + 1; b < oneway.size(); ++b) {
      const auto& ra = network.road(oneway[a]);
      const auto& rb = network.road(oneway[b]);
      if (haversine(ra.centroid_lat, ra.centroid_lon, rb.centroid_lat, rb.centroid_lon) <= radius_m) {
        auto x = find(a), y = find(b);
        if (x != y) parent[std::max(x, y)] = std::min(x, y);
      }
    }
  std::map<std::size_t, std::vector<std::uint32_t>> comps;
  for (std::size_t a = 0; a < oneway.size(); ++a) comps[find(a)].push_back(oneway[a]);
  std::vector<Hyperedge> out;
  for (auto& [_, members] : comps)
    if (members.size() >= 2) out.push_back({HyperedgeKind::kOnewayAdjacent, std::move(members)});
  return out;
}

Hypergraph build_hypergraph(const RoadNetwork& network, const HypergraphOptions& options) {
  std::vector<Hyperedge> edges;
  auto append = [&](std::vector<Hyperedge> part) {
    for (auto& e : part) edges.push_back(std::move(e));
  };
  if (options.functional) append(build_hyperedges_functional(network, options.k_zones, options.seed));
  if (options.same_type) append(build_hyperedges_same_type(network));
  if (options.oneway) append(build_hyperedges_oneway_adjacent(network, options.radius_m));
  std::vector<char> covered(network.size(), 0);
  for (const auto& e : edges)
    for (auto v : e.members) covered[v] = 1;
  for (std::uint32_t i = 0; i < network.size(); ++i)
    if (!covered[i]) edges.push_back({HyperedgeKind::kSingleton, {i}});
  return Hypergraph(network.size(), std::move(edges));
}

}  // namespace dst
