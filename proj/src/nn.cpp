// SPDX-License-Identifier: Apache-2.0

#include "dst/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst::nn {

Tensor ParamStore::uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return add(name, Tensor::from(std::move(shape), std::move(v), true));
}

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  t.set_requires_grad(true);
  t.set_name(name);
  order_.push_back(name);
  params_.emplace(name, t);
  return t;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const { return params_.count(name) != 0; }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.names())
    for (double g : params.get(name).node()->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const auto& name : params.names())
      for (double& g : params.get(name).node()->grad) g *= f;
  }
  return norm;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (const auto& name : order_) {
    auto& dst = get(name);
    const auto& src = other.get(name);
    if (dst.shape() != src.shape()) throw ShapeError("copy_values_from: shape mismatch for " + name);
    auto out = dst.mutable_data();
    auto in = src.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

void AdamW::step(ParamStore& params) {
  ++t_;
  const auto& c = config_;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    Tensor& p = params.get(name);
    if (!p.has_grad()) continue;
    auto g = p.grad();
    for (double x : g)
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != g.size()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] *= 1.0 - c.lr * c.weight_decay;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void save_archive(const std::filesystem::path& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  auto os = io::open_out(path, true);
  io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(d));
    for (double x : t.data()) io::write_f64(os, x);
  }
  if (!os) throw DataError("failed writing " + path.string());
}

std::vector<std::pair<std::string, Tensor>> load_archive(const std::filesystem::path& path) {
  auto is = io::open_in(path, true);
  std::uint32_t count = io::read_u32(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t len = io::read_u32(is);
    if (len > (1u << 16)) throw DataError("corrupt archive " + path.string() + ": name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated archive " + path.string());
    std::uint32_t rank = io::read_u32(is);
    if (rank > 8) throw DataError("corrupt archive " + path.string() + ": rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = io::read_u32(is);
    std::vector<double> values(ad::numel(shape));
    for (auto& x : values) x = io::read_f64(is);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void save_params(const std::filesystem::path& path, const ParamStore& params) {
  std::vector<std::pair<std::string, Tensor>> items;
  for (const auto& name : params.names()) items.emplace_back(name, params.get(name));
  save_archive(path, items);
}

void load_params(const std::filesystem::path& path, ParamStore& params) {
  auto items = load_archive(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [n, t] : items) by_name.emplace(n, t);
  for (const auto& name : params.names()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint " + path.string() + " lacks parameter " + name);
    auto& p = params.get(name);
    if (p.shape() != it->second.shape())
      throw ShapeError("checkpoint parameter " + name + " has shape " + ad::shape_str(it->second.shape()) +
                       ", model expects " + ad::shape_str(p.shape()));
    auto src = it->second.data();
    auto dst = p.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

Linear::Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
  weight = params.uniform(name + ".weight", {in, out}, in, rng);
  if (with_bias) bias = params.constant(name + ".bias", {1, out}, 0.0);
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 2) {
    auto y = ad::matmul(x, weight);
    return bias.defined() ? ad::add(y, bias) : y;
  }
  // Fold leading axes into rows.
  Shape s = x.shape();
  std::size_t in = s.back();
  auto flat = ad::reshape(x, {x.numel() / in, in});
  auto y = (*this)(flat);
  s.back() = out_features();
  return ad::reshape(y, s);
}

GRU::GRU(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden_dim, Rng& rng)
    : input(params, name + ".input", in, 3 * hidden_dim, rng),
      hidden(params, name + ".hidden", hidden_dim, 3 * hidden_dim, rng),
      hidden_size(hidden_dim) {
  // Update gates start biased toward keeping the state, which lets long
  // sequences accumulate from the first epoch.
  auto b = input.bias.mutable_data();
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) b[j] = 2.0;
}

Tensor GRU::run(const Tensor& table, const std::vector<std::vector<std::size_t>>& sequences) const {
  if (sequences.empty()) throw ShapeError("GRU::run: empty batch");
  const std::size_t b = sequences.size(), h = hidden_size;
  for (const auto& s : sequences)
    if (s.empty()) throw ShapeError("GRU::run: empty sequence");
  // Rows sorted longest first, so the sequences still running at step t are
  // always a prefix and finished rows drop out of the recurrence.
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sequences[x].size() > sequences[y].size(); });
  auto projected = input(table);  // [V, 3h]
  Tensor state = Tensor::zeros({b, h});
  std::vector<Tensor> done;  // finished blocks, shortest first
  std::size_t rows = b;
  std::vector<std::size_t> ids;
  for (std::size_t t = 0; rows > 0; ++t) {
    std::size_t active = rows;
    while (active > 0 && sequences[order[active - 1]].size() <= t) --active;
    if (active < rows) {
      std::vector<std::size_t> tail(rows - active), head(active);
      std::iota(tail.begin(), tail.end(), active);
      std::iota(head.begin(), head.end(), 0);
      done.push_back(ad::embedding_lookup(state, tail));
      if (active == 0) break;
      state = ad::embedding_lookup(state, head);
      rows = active;
    }
    ids.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) ids[i] = sequences[order[i]][t];
    state = ad::gru_update(ad::embedding_lookup(projected, ids), hidden(state), state);
  }
  // Stack the blocks back into sorted order, longest first, then undo the sort.
  std::vector<Tensor> columns;
  for (auto it = done.rbegin(); it != done.rend(); ++it) columns.push_back(ad::transpose(*it));
  auto sorted = columns.size() == 1 ? done[0] : ad::transpose(ad::concat(columns));
  std::vector<std::size_t> position(b);
  for (std::size_t i = 0; i < b; ++i) position[order[i]] = i;
  return ad::embedding_lookup(sorted, position);
}

}  // namespace dst::nn
