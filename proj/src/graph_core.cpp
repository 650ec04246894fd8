// SPDX-License-Identifier: Apache-2.0

#include "dst/graph_core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "dst/errors.hpp"
#include "dst/features.hpp"
#include "dst/io.hpp"

namespace dst {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

template <typename T>
T parse_num(std::string_view field, const std::string& what, std::size_t line) {
  field = trim(field);
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError("malformed " + what + " '" + std::string(field) + "'", line);
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Point {
  double lat, lon;
};

}  // namespace

// ---- RoadNetwork -----------------------------------------------------------

RoadNetwork::RoadNetwork(std::vector<RoadRecord> roads, std::vector<std::pair<std::uint32_t, std::uint32_t>> edges)
    : roads_(std::move(roads)), edges_(std::move(edges)) {
  const std::size_t n = roads_.size();
  out_.assign(n, {});
  in_.assign(n, {});
  original_ids_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = roads_[i];
    for (double lon : {r.start_lon, r.end_lon, r.centroid_lon})
      if (!(lon >= -180.0 && lon <= 180.0)) throw DataError("road " + std::to_string(r.id) + ": longitude out of range");
    for (double lat : {r.start_lat, r.end_lat, r.centroid_lat})
      if (!(lat >= -90.0 && lat <= 90.0)) throw DataError("road " + std::to_string(r.id) + ": latitude out of range");
    if (!(r.length > 0.0)) throw DataError("road " + std::to_string(r.id) + ": length must be positive");
    if (r.lanes < 1) throw DataError("road " + std::to_string(r.id) + ": lanes must be >= 1");
    original_ids_[i] = r.id;
    id_lookup_.emplace_back(r.id, static_cast<std::uint32_t>(i));
  }
  std::sort(id_lookup_.begin(), id_lookup_.end());
  for (std::size_t i = 1; i < id_lookup_.size(); ++i)
    if (id_lookup_[i].first == id_lookup_[i - 1].first)
      throw DataError("duplicate road ID " + std::to_string(id_lookup_[i].first));
  for (const auto& [a, b] : edges_) {
    if (a >= n || b >= n) throw DataError("edge endpoint outside road index range");
    out_[a].push_back(b);
    in_[b].push_back(a);
  }
  for (auto& v : out_) std::sort(v.begin(), v.end());
  for (auto& v : in_) std::sort(v.begin(), v.end());
}

bool RoadNetwork::adjacent(std::uint32_t from, std::uint32_t to) const {
  const auto& s = out_[from];
  return std::binary_search(s.begin(), s.end(), to);
}

std::int64_t RoadNetwork::edge_index(std::uint32_t from, std::uint32_t to) const {
  for (std::size_t e = 0; e < edges_.size(); ++e)
    if (edges_[e].first == from && edges_[e].second == to) return static_cast<std::int64_t>(e);
  return -1;
}

std::vector<double> RoadNetwork::dense_adjacency() const {
  const std::size_t n = size();
  std::vector<double> a(n * n, 0.0);
  for (const auto& [i, j] : edges_) a[i * n + j] = 1.0;
  return a;
}

std::int64_t RoadNetwork::dense_index(std::int64_t original_id) const {
  auto it = std::lower_bound(id_lookup_.begin(), id_lookup_.end(), std::make_pair(original_id, std::uint32_t{0}));
  if (it == id_lookup_.end() || it->first != original_id) return -1;
  return it->second;
}

// ---- file ingestion --------------------------------------------------------

RoadNetwork load_network(const std::filesystem::path& roads_path, const std::filesystem::path& edges_path) {
  std::vector<RoadRecord> roads;
  bool has_oneway = true;
  {
    auto is = io::open_in(roads_path, false);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw DataError("empty roads file " + roads_path.string());
    ++lineno;
    auto header = std::string(trim(line));
    const std::string full = "id,start_lon,start_lat,end_lon,end_lat,road_type,length,lanes,oneway";
    if (header == full.substr(0, full.rfind(','))) {
      has_oneway = false;
    } else if (header != full) {
      throw DataError("unexpected roads header '" + header + "'", lineno);
    }
    const std::size_t ncol = has_oneway ? 9 : 8;
    std::unordered_set<std::int64_t> seen_ids;
    while (std::getline(is, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto f = split_csv(trim(line));
      if (f.size() != ncol)
        throw DataError("expected " + std::to_string(ncol) + " fields, got " + std::to_string(f.size()), lineno);
      RoadRecord r;
      r.id = parse_num<std::int64_t>(f[0], "id", lineno);
      r.start_lon = parse_num<double>(f[1], "start_lon", lineno);
      r.start_lat = parse_num<double>(f[2], "start_lat", lineno);
      r.end_lon = parse_num<double>(f[3], "end_lon", lineno);
      r.end_lat = parse_num<double>(f[4], "end_lat", lineno);
      r.road_type = std::string(trim(f[5]));
      if (r.road_type.empty()) throw DataError("empty road_type", lineno);
      r.length = parse_num<double>(f[6], "length", lineno);
      r.lanes = parse_num<int>(f[7], "lanes", lineno);
      if (has_oneway) {
        int ow = parse_num<int>(f[8], "oneway", lineno);
        if (ow != 0 && ow != 1) throw DataError("oneway must be 0 or 1", lineno);
        r.oneway = ow == 1;
      }
      r.centroid_lon = 0.5 * (r.start_lon + r.end_lon);
      r.centroid_lat = 0.5 * (r.start_lat + r.end_lat);
      if (std::abs(r.start_lon) > 180 || std::abs(r.end_lon) > 180 || std::abs(r.start_lat) > 90 ||
          std::abs(r.end_lat) > 90)
        throw DataError("coordinate out of range", lineno);
      if (!(r.length > 0)) throw DataError("length must be positive", lineno);
      if (r.lanes < 1) throw DataError("lanes must be >= 1", lineno);
      if (!seen_ids.insert(r.id).second) throw DataError("duplicate road ID " + std::to_string(r.id), lineno);
      roads.push_back(std::move(r));
    }
  }
  // original ID -> dense index
  std::vector<std::pair<std::int64_t, std::uint32_t>> lookup;
  for (std::size_t i = 0; i < roads.size(); ++i) lookup.emplace_back(roads[i].id, static_cast<std::uint32_t>(i));
  std::sort(lookup.begin(), lookup.end());
  auto find = [&](std::int64_t id) -> std::int64_t {
    auto it = std::lower_bound(lookup.begin(), lookup.end(), std::make_pair(id, std::uint32_t{0}));
    return (it == lookup.end() || it->first != id) ? std::int64_t{-1} : std::int64_t{it->second};
  };

  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  {
    auto is = io::open_in(edges_path, false);
    std::string line;
    std::size_t lineno = 0;
    if (std::getline(is, line)) {
      ++lineno;
      if (std::string(trim(line)) != "from_id,to_id")
        throw DataError("unexpected edges header '" + std::string(trim(line)) + "'", lineno);
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    while (std::getline(is, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto f = split_csv(trim(line));
      if (f.size() != 2) throw DataError("expected 2 fields, got " + std::to_string(f.size()), lineno);
      auto from = parse_num<std::int64_t>(f[0], "from_id", lineno);
      auto to = parse_num<std::int64_t>(f[1], "to_id", lineno);
      auto a = find(from), b = find(to);
      if (a < 0) throw DataError("dangling edge endpoint " + std::to_string(from), lineno);
      if (b < 0) throw DataError("dangling edge endpoint " + std::to_string(to), lineno);
      auto e = std::make_pair(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b));
      if (seen.insert(e).second) edges.push_back(e);
    }
  }
  if (!has_oneway) {
    // A road is one-way iff no other road runs between the same endpoints reversed.
    std::set<std::array<double, 4>> directed;
    for (const auto& r : roads) directed.insert({r.start_lon, r.start_lat, r.end_lon, r.end_lat});
    for (auto& r : roads) r.oneway = !directed.count({r.end_lon, r.end_lat, r.start_lon, r.start_lat});
  }
  return RoadNetwork(std::move(roads), std::move(edges));
}

void write_network(const RoadNetwork& network, const std::filesystem::path& roads_path,
                   const std::filesystem::path& edges_path) {
  {
    auto os = io::open_out(roads_path, false);
    os << "id,start_lon,start_lat,end_lon,end_lat,road_type,length,lanes,oneway\n";
    for (const auto& r : network.roads())
      os << r.id << ',' << format_double(r.start_lon) << ',' << format_double(r.start_lat) << ','
         << format_double(r.end_lon) << ',' << format_double(r.end_lat) << ',' << r.road_type << ','
         << format_double(r.length) << ',' << r.lanes << ',' << (r.oneway ? 1 : 0) << '\n';
  }
  auto os = io::open_out(edges_path, false);
  os << "from_id,to_id\n";
  const auto& ids = network.original_ids();
  for (const auto& [a, b] : network.edges()) os << ids[a] << ',' << ids[b] << '\n';
}

TrajectoryLoadResult validate_trajectories(std::vector<Trajectory> trajectories, const RoadNetwork& network,
                                           bool lenient) {
  TrajectoryLoadResult result;
  for (auto& t : trajectories) {
    if (t.road_ids.empty() || t.road_ids.size() != t.timestamps.size())
      throw DataError("trajectory must have matching, non-empty roads and times");
    for (auto r : t.road_ids)
      if (r >= network.size()) throw DataError("unknown road index " + std::to_string(r));
    for (std::size_t i = 1; i < t.size(); ++i)
      if (t.timestamps[i] < t.timestamps[i - 1]) throw DataError("non-monotonic timestamps in trajectory");
    std::size_t start = 0;
    bool broken = false;
    for (std::size_t i = 1; i <= t.size(); ++i) {
      bool cut = i == t.size() || !network.adjacent(t.road_ids[i - 1], t.road_ids[i]);
      if (!cut) continue;
      if (i < t.size()) {
        ++result.violations;
        broken = true;
      }
      if (lenient) {
        Trajectory piece;
        piece.road_ids.assign(t.road_ids.begin() + start, t.road_ids.begin() + i);
        piece.timestamps.assign(t.timestamps.begin() + start, t.timestamps.begin() + i);
        result.trajectories.push_back(std::move(piece));
        start = i;
      }
    }
    if (!lenient) {
      if (broken)
        ++result.dropped;
      else
        result.trajectories.push_back(std::move(t));
    }
  }
  return result;
}

TrajectoryLoadResult load_trajectories(const std::filesystem::path& path, const RoadNetwork& network,
                                       bool lenient) {
  auto is = io::open_in(path, false);
  std::vector<Trajectory> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("roads") || !j.contains("times") || !j["roads"].is_array() ||
        !j["times"].is_array())
      throw DataError("trajectory line needs \"roads\" and \"times\" arrays", lineno);
    Trajectory t;
    for (const auto& v : j["roads"]) {
      if (!v.is_number_integer()) throw DataError("road IDs must be integers", lineno);
      auto idx = network.dense_index(v.get<std::int64_t>());
      if (idx < 0) throw DataError("unknown road ID " + std::to_string(v.get<std::int64_t>()), lineno);
      t.road_ids.push_back(static_cast<std::uint32_t>(idx));
    }
    for (const auto& v : j["times"]) {
      if (!v.is_number_integer()) throw DataError("timestamps must be integers", lineno);
      t.timestamps.push_back(v.get<std::int64_t>());
    }
    if (t.road_ids.empty()) throw DataError("empty trajectory", lineno);
    if (t.road_ids.size() != t.timestamps.size()) throw DataError("roads and times differ in length", lineno);
    for (std::size_t i = 1; i < t.size(); ++i)
      if (t.timestamps[i] < t.timestamps[i - 1]) throw DataError("non-monotonic timestamps", lineno);
    raw.push_back(std::move(t));
  }
  return validate_trajectories(std::move(raw), network, lenient);
}

void write_trajectories(const std::vector<Trajectory>& trajectories, const RoadNetwork& network,
                        const std::filesystem::path& path) {
  auto os = io::open_out(path, false);
  const auto& ids = network.original_ids();
  for (const auto& t : trajectories) {
    os << "{\"roads\":[";
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? "," : "") << ids[t.road_ids[i]];
    os << "],\"times\":[";
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? "," : "") << t.timestamps[i];
    os << "]}\n";
  }
}

// ---- synthetic city ----------------------------------------------------------

RoadNetwork generate_synthetic_city(int rows, int cols, int ring_count, std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("synthetic city needs rows, cols >= 2");
  if (ring_count < 0) throw std::invalid_argument("ring_count must be >= 0");
  if (ring_count > 0 && (rows < 2 * ring_count + 2 || cols < 2 * ring_count + 2))
    throw std::invalid_argument("grid too small for " + std::to_string(ring_count) + " ring roads");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double lat0 = 39.90, lon0 = 116.30, dlat = 0.0016, dlon = 0.0021;
  std::vector<Point> nodes(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      nodes[r * cols + c] = {lat0 + (r + jitter(rng)) * dlat, lon0 + (c + jitter(rng)) * dlon};

  // Ring membership: ring k is the rectangle perimeter inset by k+1.
  auto ring_of = [&](int r0, int c0, int r1, int c1) -> int {
    for (int k = 0; k < ring_count; ++k) {
      int lo_r = k + 1, hi_r = rows - 2 - k, lo_c = k + 1, hi_c = cols - 2 - k;
      if (r0 == r1 && (r0 == lo_r || r0 == hi_r) && std::min(c0, c1) >= lo_c && std::max(c0, c1) <= hi_c) return k;
      if (c0 == c1 && (c0 == lo_c || c0 == hi_c) && std::min(r0, r1) >= lo_r && std::max(r0, r1) <= hi_r) return k;
    }
    return -1;
  };
  // Clockwise (north-up) successor order for ring k even, counter-clockwise for odd.
  auto ring_forward = [&](int k, int r0, int c0, int r1, int c1) -> bool {
    int lo_r = k + 1, hi_r = rows - 2 - k, lo_c = k + 1, hi_c = cols - 2 - k;
    bool cw;
    if (r0 == r1 && r0 == hi_r) cw = c1 > c0;        // top edge heading east
    else if (c0 == c1 && c0 == hi_c) cw = r1 < r0;   // right edge heading south
    else if (r0 == r1 && r0 == lo_r) cw = c1 < c0;   // bottom edge heading west
    else cw = r1 > r0;                               // left edge heading north
    (void)lo_c;
    return (k % 2 == 0) ? cw : !cw;
  };

  struct Street {
    int a, b;  // intersection indices
    std::string type;
    bool oneway;
  };
  std::vector<Street> streets;
  auto add_street = [&](int r0, int c0, int r1, int c1) {
    int a = r0 * cols + c0, b = r1 * cols + c1;
    int k = ring_of(r0, c0, r1, c1);
    std::string type;
    bool oneway = false;
    if (k >= 0) {
      type = "trunk";
      oneway = true;
      if (!ring_forward(k, r0, c0, r1, c1)) std::swap(a, b);
    } else if ((rows >= 3 && r0 == r1 && r0 == rows / 2) || (cols >= 3 && c0 == c1 && c0 == cols / 2)) {
      type = "primary";
    } else {
      type = unit(rng) < 0.3 ? "tertiary" : "residential";
    }
    streets.push_back({a, b, type, oneway});
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) add_street(r, c, r, c + 1);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r + 1 < rows; ++r) add_street(r, c, r + 1, c);

  auto lanes_of = [](const std::string& type) {
    if (type == "trunk") return 3;
    if (type == "primary" || type == "tertiary") return 2;
    return 1;
  };
  std::vector<RoadRecord> roads;
  std::vector<std::pair<int, int>> ends;  // (from intersection, to intersection)
  auto add_road = [&](int from, int to, const Street& s) {
    RoadRecord r;
    r.id = static_cast<std::int64_t>(roads.size());
    r.start_lat = nodes[from].lat;
    r.start_lon = nodes[from].lon;
    r.end_lat = nodes[to].lat;
    r.end_lon = nodes[to].lon;
    r.centroid_lat = 0.5 * (r.start_lat + r.end_lat);
    r.centroid_lon = 0.5 * (r.start_lon + r.end_lon);
    r.road_type = s.type;
    r.length = haversine(r.start_lat, r.start_lon, r.end_lat, r.end_lon);
    r.lanes = lanes_of(s.type);
    r.oneway = s.oneway;
    roads.push_back(std::move(r));
    ends.emplace_back(from, to);
  };
  for (const auto& s : streets) {
    add_road(s.a, s.b, s);
    if (!s.oneway) add_road(s.b, s.a, s);
  }

  // Road a -> road b when a ends where b starts; U-turns only at dead ends.
  std::vector<std::vector<std::uint32_t>> leaving(nodes.size());
  for (std::size_t i = 0; i < roads.size(); ++i) leaving[ends[i].first].push_back(static_cast<std::uint32_t>(i));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t i = 0; i < roads.size(); ++i) {
    auto [u, v] = ends[i];
    const auto& cand = leaving[v];
    bool other = std::any_of(cand.begin(), cand.end(), [&](std::uint32_t j) { return ends[j].second != u; });
    for (auto j : cand)
      if (ends[j].second != u || !other) edges.emplace_back(static_cast<std::uint32_t>(i), j);
  }
  return RoadNetwork(std::move(roads), std::move(edges));
}

// ---- trajectory simulation -------------------------------------------------------

TimeProfile TimeProfile::commuter() {
  TimeProfile p;
  for (int h = 0; h < 24; ++h) {
    double night = (h < 6) ? 0.05 : 0.3;
    p.weekday[h] = night + 3.0 * std::exp(-0.5 * std::pow((h - 8) / 1.2, 2)) +
                   2.5 * std::exp(-0.5 * std::pow((h - 18) / 1.5, 2));
    p.weekend[h] = (h < 7 ? 0.05 : 0.3) + 2.5 * std::exp(-0.5 * std::pow((h - 14) / 2.5, 2));
  }
  return p;
}

TimeProfile TimeProfile::single_peak(int hour) {
  TimeProfile p;
  p.weekday.fill(0.0);
  p.weekday[static_cast<std::size_t>(hour)] = 1.0;
  p.weekend.fill(1.0);
  return p;
}

double SpeedModel::base_speed(const std::string& road_type) const {
  if (road_type == "trunk") return trunk;
  if (road_type == "primary") return primary;
  if (road_type == "tertiary") return tertiary;
  return residential;
}

std::vector<std::uint32_t> largest_scc(const RoadNetwork& network) {
  const std::size_t n = network.size();
  // Kosaraju with explicit stacks.
  std::vector<char> seen(n, 0);
  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::uint32_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::pair<std::uint32_t, std::size_t>> st{{s, 0}};
    seen[s] = 1;
    while (!st.empty()) {
      auto& [v, k] = st.back();
      const auto& out = network.successors(v);
      if (k < out.size()) {
        auto w = out[k++];
        if (!seen[w]) {
          seen[w] = 1;
          st.push_back({w, 0});
        }
      } else {
        order.push_back(v);
        st.pop_back();
      }
    }
  }
  std::vector<std::int64_t> comp(n, -1);
  std::vector<std::size_t> comp_size;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (comp[*it] >= 0) continue;
    auto id = static_cast<std::int64_t>(comp_size.size());
    comp_size.push_back(0);
    std::vector<std::uint32_t> st{*it};
    comp[*it] = id;
    while (!st.empty()) {
      auto v = st.back();
      st.pop_back();
      ++comp_size.back();
      for (auto w : network.predecessors(v))
        if (comp[w] < 0) {
          comp[w] = id;
          st.push_back(w);
        }
    }
  }
  if (comp_size.empty()) return {};
  auto best = static_cast<std::int64_t>(std::max_element(comp_size.begin(), comp_size.end()) - comp_size.begin());
  std::vector<std::uint32_t> out;
  for (std::uint32_t v = 0; v < n; ++v)
    if (comp[v] == best) out.push_back(v);
  return out;
}

std::vector<Trajectory> simulate_trajectories(const RoadNetwork& network, std::size_t count, std::uint64_t seed,
                                              const TimeProfile& profile, const SpeedModel& speed) {
  if (network.edges().empty()) throw DataError("cannot simulate trajectories on a network without edges");
  if (count == 0) throw std::invalid_argument("trajectory count must be >= 1");
  auto scc = largest_scc(network);
  if (scc.size() < 2) throw DataError("largest strongly connected component has fewer than 2 roads");
  const std::size_t n = network.size();
  std::vector<char> in_scc(n, 0);
  for (auto v : scc) in_scc[v] = 1;

  auto popularity = [](const std::string& t) {
    if (t == "trunk") return 4.0;
    if (t == "primary") return 3.0;
    if (t == "tertiary") return 1.5;
    return 1.0;
  };
  // Per-road successor choices inside the component, weighted by type and straightness.
  std::vector<std::vector<std::uint32_t>> next(n);
  std::vector<std::discrete_distribution<std::size_t>> choose(n);
  for (auto v : scc) {
    std::vector<double> w;
    for (auto s : network.successors(v)) {
      if (!in_scc[s]) continue;
      next[v].push_back(s);
      double straight = edge_angle(network.road(v), network.road(s)) < 30.0 ? 3.0 : 1.0;
      w.push_back(popularity(network.road(s).road_type) * straight);
    }
    choose[v] = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  std::vector<double> start_w;
  for (auto v : scc) start_w.push_back(popularity(network.road(v).road_type));

  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick_start(start_w.begin(), start_w.end());
  std::uniform_int_distribution<int> pick_len(10, 100);
  std::vector<Trajectory> out(count);
  for (auto& t : out) {
    int len = pick_len(rng);
    std::uint32_t cur = scc[pick_start(rng)];
    t.road_ids.push_back(cur);
    for (int i = 1; i < len; ++i) {
      cur = next[cur][choose[cur](rng)];
      t.road_ids.push_back(cur);
    }
  }

  // Congestion from simulated volume, then entry times.
  std::vector<double> volume(n, 0.0);
  for (const auto& t : out)
    for (auto r : t.road_ids) volume[r] += 1.0;
  double vmax = *std::max_element(volume.begin(), volume.end());
  std::vector<double> travel(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double v = speed.base_speed(network.road(r).road_type) / (1.0 + speed.congestion * volume[r] / vmax);
    travel[r] = network.road(r).length / v;
  }
  std::bernoulli_distribution weekend(profile.weekend_share);
  std::discrete_distribution<int> wd_hour(profile.weekday.begin(), profile.weekday.end());
  std::discrete_distribution<int> we_hour(profile.weekend.begin(), profile.weekend.end());
  std::uniform_int_distribution<int> week(0, 3), wd_day(0, 4), we_day(5, 6), second(0, 3599);
  for (auto& t : out) {
    bool is_weekend = weekend(rng);
    int day = 7 * week(rng) + (is_weekend ? we_day(rng) : wd_day(rng));
    int hour = is_weekend ? we_hour(rng) : wd_hour(rng);
    double clock = static_cast<double>(kSimulationEpoch) + day * 86400.0 + hour * 3600.0 + second(rng);
    for (auto r : t.road_ids) {
      t.timestamps.push_back(static_cast<std::int64_t>(std::llround(clock)));
      clock += travel[r];
    }
  }
  return out;
}

}  // namespace dst
