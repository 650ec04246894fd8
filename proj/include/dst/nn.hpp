// SPDX-License-Identifier: Apache-2.0
//
// Parameter bookkeeping, initialization, the AdamW optimizer, the named-tensor
// checkpoint archive, and small reusable layers built on the autodiff core.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dst/autodiff.hpp"

namespace dst::nn {

using ad::Shape;
using ad::Tensor;
using Rng = std::mt19937_64;

/// Ordered collection of named trainable tensors.
class ParamStore {
 public:
  /// U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Tensor constant(const std::string& name, Shape shape, double value);
  Tensor add(const std::string& name, Tensor t);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Copies values (not history) from `other`; names and shapes must match.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> params_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. Moment buffers are keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}
  /// Applies one update to every parameter that holds a gradient.
  /// Throws NumericalError naming the parameter on a non-finite gradient.
  void step(ParamStore& params);
  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

/// Named-tensor archive: u32 count, then per tensor u32 name length, UTF-8
/// name, u32 rank, u32 dims, f64 payload. Little-endian throughout.
void save_archive(const std::filesystem::path& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_archive(const std::filesystem::path& path);
void save_params(const std::filesystem::path& path, const ParamStore& params);
/// Overwrites values of `params` from the archive; every name must be present.
void load_params(const std::filesystem::path& path, ParamStore& params);

/// y = x W + b for x of shape [rows, in].
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
  Linear() = default;
  Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// Single-layer gated recurrent unit over padded batches.
struct GRU {
  Linear input;    // in -> 3h  (reset, update, candidate)
  Linear hidden;   // h -> 3h
  std::size_t hidden_size = 0;
  GRU() = default;
  GRU(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);

  /// `table` is [V, in]; sequences index into it. Returns the hidden state
  /// after each sequence's last element, shape [batch, hidden].
  Tensor run(const Tensor& table, const std::vector<std::vector<std::size_t>>& sequences) const;
};

}  // namespace dst::nn
