// SPDX-License-Identifier: Apache-2.0

#include "dst/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::array<double, 3> unit_sphere(double lat, double lon) {
  double phi = lat * kDeg, lam = lon * kDeg;
  return {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi)};
}

std::array<double, 3> direction(const RoadRecord& r) {
  auto a = unit_sphere(r.start_lat, r.start_lon);
  auto b = unit_sphere(r.end_lat, r.end_lon);
  std::array<double, 3> d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (!(norm > 0.0)) throw DataError("road " + std::to_string(r.id) + " has a zero-length direction vector");
  for (auto& x : d) x /= norm;
  return d;
}

std::string lanes_str(int lanes) { return std::to_string(lanes); }

}  // namespace

double haversine(double lat_i, double lon_i, double lat_j, double lon_j) {
  double dphi = (lat_j - lat_i) * kDeg;
  double dlam = (lon_j - lon_i) * kDeg;
  double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
  double a = s1 * s1 + std::cos(lat_i * kDeg) * std::cos(lat_j * kDeg) * s2 * s2;
  a = std::clamp(a, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(a));
}

double edge_angle(const RoadRecord& road_i, const RoadRecord& road_j) {
  auto a = direction(road_i);
  auto b = direction(road_j);
  double dot = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
  return std::acos(dot) / kDeg;
}

// ---- codec --------------------------------------------------------------------

std::optional<std::size_t> FeatureColumn::encode_number(double value) const {
  if (kind != Kind::kContinuous) return encode_category(std::to_string(value));
  if (degenerate) return value == lo ? std::optional<std::size_t>(0) : std::nullopt;
  if (!(value >= lo && value <= hi)) return std::nullopt;
  double width = (hi - lo) / static_cast<double>(bins);
  auto code = static_cast<std::size_t>(std::floor((value - lo) / width));
  return std::min(code, bins - 1);
}

std::optional<std::size_t> FeatureColumn::encode_category(const std::string& value) const {
  auto it = std::find(categories.begin(), categories.end(), value);
  if (it == categories.end()) return std::nullopt;
  return static_cast<std::size_t>(it - categories.begin());
}

std::string FeatureColumn::decode(std::size_t code) const {
  if (code >= cardinality()) return "<unk>";
  if (kind == Kind::kCategorical) return categories[code];
  if (degenerate) return std::to_string(lo);
  double width = (hi - lo) / static_cast<double>(bins);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", lo + (static_cast<double>(code) + 0.5) * width);
  return buf;
}

std::vector<std::size_t> FeatureCodec::vocab_sizes() const {
  std::vector<std::size_t> v;
  for (const auto& c : columns) v.push_back(c.vocab_size());
  return v;
}

void FeatureCodec::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["columns"] = nlohmann::json::array();
  for (const auto& c : columns) {
    nlohmann::json col{{"name", c.name}};
    if (c.kind == FeatureColumn::Kind::kContinuous) {
      col["kind"] = "continuous";
      col["lo"] = c.lo;
      col["hi"] = c.hi;
      col["bins"] = c.bins;
      col["degenerate"] = c.degenerate;
    } else {
      col["kind"] = "categorical";
      col["categories"] = c.categories;
    }
    j["columns"].push_back(col);
  }
  j["edge_mean"] = edge_mean;
  j["edge_std"] = edge_std;
  auto os = io::open_out(path, false);
  os << j.dump(1) << '\n';
}

FeatureCodec FeatureCodec::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
    FeatureCodec codec;
    for (const auto& col : j.at("columns")) {
      FeatureColumn c;
      c.name = col.at("name").get<std::string>();
      if (col.at("kind") == "continuous") {
        c.kind = FeatureColumn::Kind::kContinuous;
        c.lo = col.at("lo").get<double>();
        c.hi = col.at("hi").get<double>();
        c.bins = col.at("bins").get<std::size_t>();
        c.degenerate = col.at("degenerate").get<bool>();
      } else {
        c.kind = FeatureColumn::Kind::kCategorical;
        c.categories = col.at("categories").get<std::vector<std::string>>();
      }
      codec.columns.push_back(std::move(c));
    }
    codec.edge_mean = j.at("edge_mean").get<std::array<double, 2>>();
    codec.edge_std = j.at("edge_std").get<std::array<double, 2>>();
    return codec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed codec " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> raw_features(const RoadRecord& road) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", road.length);
  return {buf, road.road_type, lanes_str(road.lanes), road.oneway ? "1" : "0"};
}

DiscretizeResult discretize_features(const RoadNetwork& network, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("discretize_features: bins must be >= 2");
  DiscretizeResult out;
  FeatureColumn length;
  length.name = "length";
  length.kind = FeatureColumn::Kind::kContinuous;
  length.bins = bins;
  if (network.size() > 0) {
    auto [mn, mx] = std::minmax_element(network.roads().begin(), network.roads().end(),
                                        [](const RoadRecord& a, const RoadRecord& b) { return a.length < b.length; });
    length.lo = mn->length;
    length.hi = mx->length;
  }
  if (!(length.hi > length.lo)) {
    length.degenerate = true;
    length.bins = 1;
    out.warnings.push_back("feature 'length' has a constant value; all roads assigned bin 0");
  }
  FeatureColumn type;
  type.name = "road_type";
  type.kind = FeatureColumn::Kind::kCategorical;
  FeatureColumn lanes;
  lanes.name = "lanes";
  lanes.kind = FeatureColumn::Kind::kCategorical;
  FeatureColumn oneway;
  oneway.name = "oneway";
  oneway.kind = FeatureColumn::Kind::kCategorical;
  auto note = [](FeatureColumn& c, const std::string& v) {
    if (std::find(c.categories.begin(), c.categories.end(), v) == c.categories.end()) c.categories.push_back(v);
  };
  for (const auto& r : network.roads()) {
    note(type, r.road_type);
    note(lanes, lanes_str(r.lanes));
    note(oneway, r.oneway ? "1" : "0");
  }
  out.codec.columns = {length, type, lanes, oneway};
  auto ef = compute_edge_features(network);
  out.codec.edge_mean = ef.mean;
  out.codec.edge_std = ef.std;
  out.table = encode_features(network, out.codec);
  return out;
}

CodeTable encode_features(const RoadNetwork& network, const FeatureCodec& codec) {
  CodeTable t;
  t.rows = network.size();
  t.cols = codec.columns.size();
  t.codes.resize(t.rows * t.cols);
  for (std::size_t i = 0; i < t.rows; ++i) {
    const auto& road = network.road(i);
    auto raw = raw_features(road);
    for (std::size_t c = 0; c < t.cols; ++c) {
      const auto& col = codec.columns[c];
      auto code = col.kind == FeatureColumn::Kind::kContinuous ? col.encode_number(road.length)
                                                               : col.encode_category(raw[c]);
      if (!code) ++t.unk_count;
      t.codes[i * t.cols + c] = code.value_or(col.unk_code());
    }
  }
  return t;
}

// ---- edge features ------------------------------------------------------------

std::vector<double> raw_edge_features(const RoadNetwork& network) {
  std::vector<double> out;
  out.reserve(network.edges().size() * 2);
  for (const auto& [a, b] : network.edges()) {
    const auto& ra = network.road(a);
    const auto& rb = network.road(b);
    out.push_back(edge_angle(ra, rb));
    out.push_back(haversine(ra.centroid_lat, ra.centroid_lon, rb.centroid_lat, rb.centroid_lon));
  }
  return out;
}

EdgeFeatures compute_edge_features(const RoadNetwork& network, const std::array<double, 2>& mean,
                                   const std::array<double, 2>& stddev) {
  EdgeFeatures ef;
  ef.values = raw_edge_features(network);
  ef.mean = mean;
  ef.std = stddev;
  for (std::size_t e = 0; e < ef.values.size() / 2; ++e)
    for (std::size_t c = 0; c < 2; ++c) ef.values[e * 2 + c] = (ef.values[e * 2 + c] - mean[c]) / stddev[c];
  return ef;
}

EdgeFeatures compute_edge_features(const RoadNetwork& network) {
  auto raw = raw_edge_features(network);
  const std::size_t m = raw.size() / 2;
  std::array<double, 2> mean{0.0, 0.0}, sd{1.0, 1.0};
  if (m > 0) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t e = 0; e < m; ++e) s += raw[e * 2 + c];
      mean[c] = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t e = 0; e < m; ++e) v += (raw[e * 2 + c] - mean[c]) * (raw[e * 2 + c] - mean[c]);
      sd[c] = std::sqrt(v / static_cast<double>(m));
      if (!(sd[c] > 1e-12)) sd[c] = 1.0;
    }
  }
  return compute_edge_features(network, mean, sd);
}

// ---- traffic dynamics -----------------------------------------------------------

std::uint64_t TrafficDynamics::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

TrafficDynamics& TrafficDynamics::operator+=(const TrafficDynamics& other) {
  if (other.roads != roads) throw ShapeError("TrafficDynamics: road count mismatch in merge");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

void TrafficDynamics::save(const std::filesystem::path& path) const {
  auto os = io::open_out(path, true);
  os.write("DSTD", 4);
  io::write_u32(os, static_cast<std::uint32_t>(roads));
  io::write_u32(os, kHours);
  io::write_u32(os, kChannels);
  os.write(reinterpret_cast<const char*>(counts.data()), static_cast<std::streamsize>(counts.size() * 4));
  if (!os) throw DataError("failed writing " + path.string());
}

TrafficDynamics TrafficDynamics::load(const std::filesystem::path& path) {
  auto is = io::open_in(path, true);
  io::expect_magic(is, "DSTD", path);
  std::uint32_t n = io::read_u32(is), t = io::read_u32(is), c = io::read_u32(is);
  if (t != kHours || c != kChannels)
    throw DataError("traffic dynamics " + path.string() + " must have T=24, C=2");
  TrafficDynamics d(n);
  if (!is.read(reinterpret_cast<char*>(d.counts.data()), static_cast<std::streamsize>(d.counts.size() * 4)))
    throw DataError("truncated traffic dynamics file " + path.string());
  return d;
}

std::pair<int, bool> hour_and_weekend(std::int64_t epoch_seconds, int tz_offset_hours) {
  std::int64_t local = epoch_seconds + static_cast<std::int64_t>(tz_offset_hours) * 3600;
  std::int64_t day = local >= 0 ? local / 86400 : -((-local + 86399) / 86400);
  std::int64_t sec = local - day * 86400;
  int hour = static_cast<int>(sec / 3600);
  // 1970-01-01 was a Thursday; Monday = 0.
  int dow = static_cast<int>(((day + 3) % 7 + 7) % 7);
  return {hour, dow >= 5};
}

TrafficDynamics extract_traffic_dynamics(const std::vector<Trajectory>& trajectories, std::size_t n_roads,
                                         int tz_offset_hours) {
  TrafficDynamics d(n_roads);
  for (const auto& t : trajectories)
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t.road_ids[i] >= n_roads)
        throw DataError("road index " + std::to_string(t.road_ids[i]) + " outside network of size " +
                        std::to_string(n_roads));
      auto [hour, weekend] = hour_and_weekend(t.timestamps[i], tz_offset_hours);
      ++d.at(t.road_ids[i], static_cast<std::size_t>(hour), weekend ? 1 : 0);
    }
  return d;
}

}  // namespace dst
