#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dst/errors.hpp"
#include "dst/features.hpp"
#include "dst/graph_core.hpp"
#include "test_util.hpp"

using namespace dst;

namespace {

RoadRecord road(std::int64_t id, double lon0, double lat0, double lon1, double lat1, std::string type = "residential",
                double length = 100.0) {
  RoadRecord r;
  r.id = id;
  r.start_lon = lon0;
  r.start_lat = lat0;
  r.end_lon = lon1;
  r.end_lat = lat1;
  r.centroid_lon = (lon0 + lon1) / 2;
  r.centroid_lat = (lat0 + lat1) / 2;
  r.road_type = std::move(type);
  r.length = length;
  return r;
}

RoadNetwork chain(const std::vector<double>& lengths, const std::vector<std::string>& types) {
  std::vector<RoadRecord> roads;
  for (std::size_t i = 0; i < lengths.size(); ++i)
    roads.push_back(road(static_cast<std::int64_t>(i), 0.001 * i, 0.0, 0.001 * i + 0.001, 0.0, types[i], lengths[i]));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::uint32_t i = 0; i + 1 < lengths.size(); ++i) edges.emplace_back(i, i + 1);
  return RoadNetwork(roads, edges);
}

std::size_t column(const FeatureCodec& codec, const std::string& name) {
  for (std::size_t c = 0; c < codec.columns.size(); ++c)
    if (codec.columns[c].name == name) return c;
  throw std::out_of_range(name);
}

}  // namespace

TEST(Discretize, EqualWidthHalfOpenBins) {
  auto net = chain({10, 20, 30}, {"residential", "trunk", "residential"});
  auto d = discretize_features(net, 2);
  auto len = column(d.codec, "length");
  EXPECT_EQ(d.table.at(0, len), 0u);
  EXPECT_EQ(d.table.at(1, len), 1u);  // boundary falls in the upper bin
  EXPECT_EQ(d.table.at(2, len), 1u);  // top bin closed
  auto type = column(d.codec, "road_type");
  EXPECT_EQ(d.table.at(0, type), 0u);
  EXPECT_EQ(d.table.at(1, type), 1u);
  EXPECT_EQ(d.table.at(2, type), 0u);
  EXPECT_TRUE(d.warnings.empty());
  EXPECT_THROW(discretize_features(net, 1), std::invalid_argument);
}

TEST(Discretize, ConstantFeatureIsDegenerateWithWarning) {
  auto net = chain({15, 15, 15}, {"residential", "residential", "residential"});
  auto d = discretize_features(net, 4);
  auto len = column(d.codec, "length");
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(d.table.at(r, len), 0u);
  EXPECT_TRUE(d.codec.columns[len].degenerate);
  ASSERT_FALSE(d.warnings.empty());
  EXPECT_NE(d.warnings[0].find("length"), std::string::npos);
}

TEST(Discretize, EncodingDecodedCodesIsIdentity) {
  auto net = generate_synthetic_city(5, 5, 1, 3);
  auto d = discretize_features(net, 10);
  for (const auto& col : d.codec.columns)
    for (std::size_t code = 0; code < col.cardinality(); ++code) {
      auto s = col.decode(code);
      auto back = col.kind == FeatureColumn::Kind::kContinuous ? col.encode_number(std::stod(s))
                                                               : col.encode_category(s);
      ASSERT_TRUE(back.has_value()) << col.name << " " << s;
      EXPECT_EQ(*back, code) << col.name;
    }
  auto again = encode_features(net, d.codec);
  EXPECT_EQ(again.codes, d.table.codes);
  EXPECT_EQ(again.unk_count, 0u);
}

TEST(Discretize, CodecRoundTripAndUnknownValues) {
  auto net = chain({10, 20, 30}, {"residential", "trunk", "residential"});
  auto d = discretize_features(net, 3);
  test::TempDir dir;
  d.codec.save(dir / "codec.json");
  auto codec = FeatureCodec::load(dir / "codec.json");
  EXPECT_EQ(encode_features(net, codec).codes, d.table.codes);
  auto other = chain({5, 25, 999}, {"motorway", "trunk", "residential"});
  auto enc = encode_features(other, codec);
  auto type = column(codec, "road_type");
  EXPECT_EQ(enc.at(0, type), codec.columns[type].unk_code());
  EXPECT_GE(enc.unk_count, 1u);
}

TEST(Haversine, ClosedFormCases) {
  EXPECT_EQ(haversine(39.9, 116.4, 39.9, 116.4), 0.0);
  EXPECT_NEAR(haversine(0, 0, 0, 180), std::numbers::pi * kEarthRadiusM, 1e-6);
  EXPECT_NEAR(haversine(0, 0, 0, 180), 20015086.8, 0.1);
}

TEST(Haversine, SymmetricNonNegativeTriangle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lat(-80, 80), lon(-179, 179);
  for (int i = 0; i < 100; ++i) {
    double a = lat(rng), b = lon(rng), c = lat(rng), d = lon(rng), e = lat(rng), f = lon(rng);
    double ab = haversine(a, b, c, d), ba = haversine(c, d, a, b);
    EXPECT_EQ(ab, ba);
    EXPECT_GT(ab, 0.0);
    double ac = haversine(a, b, e, f), bc = haversine(c, d, e, f);
    EXPECT_LE(ac, (ab + bc) * (1 + 1e-6) + 1e-6);
  }
}

TEST(EdgeAngle, ParallelReverseAndPerpendicular) {
  auto east1 = road(0, 0.0, 0.0, 0.01, 0.0), east2 = road(1, 0.02, 0.0, 0.03, 0.0);
  auto west = road(2, 0.01, 0.0, 0.0, 0.0), north = road(3, 0.01, 0.0, 0.01, 0.01);
  EXPECT_NEAR(edge_angle(east1, east1), 0.0, 1e-6);
  // Chords on the sphere rotate with longitude, so nearby parallel roads are only nearly aligned.
  EXPECT_NEAR(edge_angle(east1, east2), 0.0, 0.05);
  EXPECT_NEAR(edge_angle(east1, west), 180.0, 1e-6);
  EXPECT_NEAR(edge_angle(east1, north), 90.0, 0.1);
  EXPECT_EQ(edge_angle(east1, north), edge_angle(north, east1));
  auto point = road(4, 1.0, 1.0, 1.0, 1.0);
  EXPECT_THROW(edge_angle(east1, point), DataError);
}

TEST(EdgeAngle, RangeOnGridCity) {
  auto net = generate_synthetic_city(6, 6, 1, 2);
  for (const auto& [a, b] : net.edges()) {
    double ang = edge_angle(net.road(a), net.road(b));
    EXPECT_GE(ang, 0.0);
    EXPECT_LE(ang, 180.0);
  }
}

TEST(EdgeFeatures, ZScoredOnGrid) {
  auto net = generate_synthetic_city(6, 6, 1, 2);
  auto ef = compute_edge_features(net);
  const std::size_t e = net.edges().size();
  ASSERT_EQ(ef.values.size(), 2 * e);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < e; ++i) m += ef.values[i * 2 + c];
    m /= e;
    for (std::size_t i = 0; i < e; ++i) v += std::pow(ef.values[i * 2 + c] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(v / e), 1.0, 1e-9);
  }
  for (double x : ef.values) EXPECT_TRUE(std::isfinite(x));
}

TEST(EdgeFeatures, SingleEdgeStdGuard) {
  auto net = chain({10, 20}, {"residential", "residential"});
  auto ef = compute_edge_features(net);
  ASSERT_EQ(ef.values.size(), 2u);
  EXPECT_EQ(ef.values[0], 0.0);
  EXPECT_EQ(ef.values[1], 0.0);
  EXPECT_EQ(ef.std[0], 1.0);
}

TEST(TrafficDynamics, SingleEventsLandInTheirCells) {
  const std::int64_t monday_0815 = kSimulationEpoch + 8 * 3600 + 900;
  const std::int64_t saturday_0815 = monday_0815 + 5 * 86400;
  auto wd = extract_traffic_dynamics({Trajectory{{0}, {monday_0815}}}, 2);
  EXPECT_EQ(wd.at(0, 8, 0), 1u);
  EXPECT_EQ(wd.total(), 1u);
  auto we = extract_traffic_dynamics({Trajectory{{0}, {saturday_0815}}}, 2);
  EXPECT_EQ(we.at(0, 8, 1), 1u);
  EXPECT_EQ(we.total(), 1u);
  // Shifting the clock moves the hour bucket.
  auto shifted = extract_traffic_dynamics({Trajectory{{0}, {monday_0815}}}, 2, 2);
  EXPECT_EQ(shifted.at(0, 10, 0), 1u);
  EXPECT_THROW(extract_traffic_dynamics({Trajectory{{5}, {monday_0815}}}, 2), DataError);
}

TEST(TrafficDynamics, CountsConserveVisits) {
  auto net = generate_synthetic_city(5, 5, 1, 1);
  auto trajs = simulate_trajectories(net, 150, 2);
  std::uint64_t visits = 0;
  for (const auto& t : trajs) visits += t.size();
  auto dyn = extract_traffic_dynamics(trajs, net.size());
  EXPECT_EQ(dyn.total(), visits);
  // Shards merge by addition.
  std::vector<Trajectory> a(trajs.begin(), trajs.begin() + 70), b(trajs.begin() + 70, trajs.end());
  auto merged = extract_traffic_dynamics(a, net.size());
  merged += extract_traffic_dynamics(b, net.size());
  EXPECT_EQ(merged.counts, dyn.counts);
}

TEST(TrafficDynamics, BinaryFormatRoundTrip) {
  TrafficDynamics d(3);
  d.at(2, 23, 1) = 7;
  d.at(0, 0, 0) = 1;
  test::TempDir dir;
  d.save(dir / "d.dstd");
  EXPECT_EQ(std::filesystem::file_size(dir / "d.dstd"), 16u + 4u * 3 * 24 * 2);
  auto back = TrafficDynamics::load(dir / "d.dstd");
  EXPECT_EQ(back.counts, d.counts);
}
