// SPDX-License-Identifier: Apache-2.0

#include "dst/mixhop.hpp"

#include <stdexcept>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst {

std::int64_t CountMatrix::at(std::size_t i, std::size_t j) const {
  const auto& r = rows_.at(i);
  auto it = r.find(static_cast<std::uint32_t>(j));
  return it == r.end() ? 0 : it->second;
}

std::size_t CountMatrix::nonzeros() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

CountMatrix& CountMatrix::operator+=(const CountMatrix& other) {
  if (other.size() != size()) throw ShapeError("CountMatrix: size mismatch in merge");
  for (std::size_t i = 0; i < size(); ++i)
    for (const auto& [j, v] : other.rows_[i]) rows_[i][j] += v;
  return *this;
}

std::vector<double> CountMatrix::to_dense() const {
  const std::size_t n = size();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, v] : rows_[i]) d[i * n + j] = static_cast<double>(v);
  return d;
}

CountMatrix accumulate_mixhop(const std::vector<Trajectory>& trajectories, std::size_t n_roads) {
  CountMatrix raw(n_roads);
  for (const auto& t : trajectories) {
    const auto m = static_cast<std::int64_t>(t.size());
    for (auto r : t.road_ids)
      if (r >= n_roads) throw DataError("road index " + std::to_string(r) + " outside network");
    for (std::int64_t p = 0; p < m; ++p)
      for (std::int64_t q = p + 1; q < m; ++q) raw.add(t.road_ids[p], t.road_ids[q], m - (q - p));
  }
  return raw;
}

MixHopMatrix MixHopMatrix::identity(std::size_t n) {
  MixHopMatrix p{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) p.values[i * n + i] = 1.0;
  return p;
}

void MixHopMatrix::save(const std::filesystem::path& path) const {
  auto os = io::open_out(path, true);
  os.write("DSTP", 4);
  io::write_u32(os, static_cast<std::uint32_t>(n));
  for (double v : values) io::write_f64(os, v);
  if (!os) throw DataError("failed writing " + path.string());
}

MixHopMatrix MixHopMatrix::load(const std::filesystem::path& path) {
  auto is = io::open_in(path, true);
  io::expect_magic(is, "DSTP", path);
  MixHopMatrix p;
  p.n = io::read_u32(is);
  p.values.resize(p.n * p.n);
  for (auto& v : p.values) v = io::read_f64(is);
  return p;
}

MixHopMatrix row_normalize(const CountMatrix& raw) {
  const std::size_t n = raw.size();
  MixHopMatrix p{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t s = 0;
    for (const auto& [j, v] : raw.row(i)) s += v;
    if (s == 0) {
      p.values[i * n + i] = 1.0;
      continue;
    }
    for (const auto& [j, v] : raw.row(i)) p.values[i * n + j] = static_cast<double>(v) / static_cast<double>(s);
  }
  return p;
}

MixHopMatrix row_normalize(std::size_t n, const std::vector<double>& raw) {
  if (raw.size() != n * n) throw ShapeError("row_normalize: expected " + std::to_string(n * n) + " values");
  MixHopMatrix p{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double v = raw[i * n + j];
      if (v < 0.0)
        throw std::invalid_argument("row_normalize: negative entry at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      s += v;
    }
    if (s == 0.0) {
      p.values[i * n + i] = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) p.values[i * n + j] = raw[i * n + j] / s;
  }
  return p;
}

ad::Tensor apply_mixhop(const ad::Tensor& p_tilde, const ad::Tensor& z_init) {
  if (p_tilde.rank() != 2 || p_tilde.dim(0) != p_tilde.dim(1) || z_init.rank() != 2 ||
      p_tilde.dim(1) != z_init.dim(0))
    throw ShapeError("apply_mixhop: shapes " + ad::shape_str(p_tilde.shape()) + " and " +
                     ad::shape_str(z_init.shape()) + " do not conform");
  return ad::matmul(p_tilde, z_init);
}

}  // namespace dst
