// SPDX-License-Identifier: Apache-2.0

#include "dst/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dst/errors.hpp"

namespace dst {

using ad::Tensor;

std::vector<double> positional_encoding(std::size_t t, std::size_t d_t) {
  if (d_t == 0 || d_t % 2 != 0) throw std::invalid_argument("positional_encoding: d_t must be even and positive");
  std::vector<double> pe(t * d_t);
  for (std::size_t pos = 0; pos < t; ++pos)
    for (std::size_t k = 0; k < d_t / 2; ++k) {
      double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d_t));
      pe[pos * d_t + 2 * k] = std::sin(angle);
      pe[pos * d_t + 2 * k + 1] = std::cos(angle);
    }
  return pe;
}

double SequenceTransform::apply(double count) const { return (std::log1p(count) - mean) / std; }

SequenceTransform SequenceTransform::fit(const TrafficDynamics& dynamics) {
  SequenceTransform tr;
  if (dynamics.counts.empty()) return tr;
  double s = 0.0, s2 = 0.0;
  for (auto c : dynamics.counts) {
    double v = std::log1p(static_cast<double>(c));
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(dynamics.counts.size());
  tr.mean = s / n;
  double var = std::max(0.0, s2 / n - tr.mean * tr.mean);
  tr.std = var > 1e-24 ? std::sqrt(var) : 1.0;
  return tr;
}

std::vector<TrafficSequence> build_sequences(const TrafficDynamics& dynamics, const SequenceTransform& transform) {
  std::vector<TrafficSequence> out;
  out.reserve(dynamics.roads * TrafficDynamics::kChannels);
  for (std::uint32_t r = 0; r < dynamics.roads; ++r)
    for (std::size_t c = 0; c < TrafficDynamics::kChannels; ++c) {
      TrafficSequence s{r, c, std::vector<double>(TrafficDynamics::kHours)};
      for (std::size_t h = 0; h < TrafficDynamics::kHours; ++h) s.values[h] = transform.apply(dynamics.at(r, h, c));
      out.push_back(std::move(s));
    }
  return out;
}

TemporalModel::TemporalModel(const TemporalConfig& config) : config_(config) {
  const std::size_t d = config.d_t, t = config.seq_len;
  if (d == 0 || config.heads == 0 || d % config.heads != 0)
    throw ConfigError("temporal width must be a positive multiple of the head count");
  if (config.blocks == 0 || config.d_out == 0 || t < 2) throw ConfigError("temporal config: blocks, d_out and T>=2 required");
  nn::Rng rng(config.seed);
  input_ = nn::Linear(params_, "input", 1, d, rng);
  position_ = Tensor::from({1, t, d}, positional_encoding(t, d));
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    TransformerBlock blk;
    blk.ln1_gain = params_.constant(p + ".ln1.gain", {d}, 1.0);
    blk.ln1_bias = params_.constant(p + ".ln1.bias", {d}, 0.0);
    blk.qkv = nn::Linear(params_, p + ".qkv", d, 3 * d, rng);
    blk.out = nn::Linear(params_, p + ".attn_out", d, d, rng);
    blk.ln2_gain = params_.constant(p + ".ln2.gain", {d}, 1.0);
    blk.ln2_bias = params_.constant(p + ".ln2.bias", {d}, 0.0);
    blk.ff1 = nn::Linear(params_, p + ".ff1", d, config.ff_mult * d, rng);
    blk.ff2 = nn::Linear(params_, p + ".ff2", config.ff_mult * d, d, rng);
    blocks_.push_back(std::move(blk));
  }
  final_gain_ = params_.constant("final.gain", {d}, 1.0);
  final_bias_ = params_.constant("final.bias", {d}, 0.0);
  regression_ = nn::Linear(params_, "regression", d, 1, rng);
  classifier_ = nn::Linear(params_, "classifier", d, 2, rng);
  // Never receives gradients: the joint loss does not reach it.
  road_projection_ = nn::Linear(params_, "road_projection", 2 * d, config.d_out, rng);
  causal_mask_.assign(t * t, 0);
  if (!config.bidirectional)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = i + 1; j < t; ++j) causal_mask_[i * t + j] = 1;
}

TemporalModel::Encoded TemporalModel::encode(const Tensor& values) const {
  const std::size_t t = config_.seq_len, d = config_.d_t, h = config_.heads, dh = d / h;
  if (values.rank() != 2 || values.dim(1) != t)
    throw ShapeError("encode_sequence: expected sequences of length " + std::to_string(t) + ", got shape " +
                     ad::shape_str(values.shape()));
  const std::size_t s = values.dim(0);
  Encoded enc;
  Tensor x = ad::reshape(input_(ad::reshape(values, {s * t, 1})), {s, t, d});
  x = ad::add(x, position_);
  auto split = [&](const Tensor& m) {
    return ad::reshape(ad::permute(ad::reshape(m, {s, t, h, dh}), {0, 2, 1, 3}), {s * h, t, dh});
  };
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& blk : blocks_) {
    Tensor a = ad::layer_norm(x, blk.ln1_gain, blk.ln1_bias);
    Tensor qkv = blk.qkv(a);
    Tensor q = split(ad::slice(qkv, 0, d));
    Tensor k = ad::reshape(ad::permute(ad::reshape(ad::slice(qkv, d, 2 * d), {s, t, h, dh}), {0, 2, 3, 1}), {s * h, dh, t});
    Tensor v = split(ad::slice(qkv, 2 * d, 3 * d));
    Tensor scores = ad::scale(ad::bmm(q, k), inv_sqrt);
    if (!config_.bidirectional)
      scores = ad::masked_fill(scores, causal_mask_, {1, t, t}, -std::numeric_limits<double>::infinity());
    Tensor att = ad::softmax(scores, -1);
    enc.attention.push_back(att);
    Tensor ctx = ad::reshape(ad::permute(ad::reshape(ad::bmm(att, v), {s, h, t, dh}), {0, 2, 1, 3}), {s, t, d});
    x = ad::add(x, blk.out(ctx));
    Tensor f = ad::layer_norm(x, blk.ln2_gain, blk.ln2_bias);
    x = ad::add(x, blk.ff2(ad::relu(blk.ff1(f))));
    enc.block_outputs.push_back(x);
  }
  enc.hidden = ad::layer_norm(x, final_gain_, final_bias_);
  enc.final_state = ad::reshape(ad::slice(ad::permute(enc.hidden, {0, 2, 1}), t - 1, t), {s, d});
  return enc;
}

namespace {

Tensor stack_values(const std::vector<const TrafficSequence*>& batch, std::size_t t) {
  std::vector<double> v;
  v.reserve(batch.size() * t);
  for (const auto* s : batch) {
    if (s->values.size() != t)
      throw ShapeError("encode_sequence: sequence length " + std::to_string(s->values.size()) + ", expected " +
                       std::to_string(t));
    v.insert(v.end(), s->values.begin(), s->values.end());
  }
  return Tensor::from({batch.size(), t}, std::move(v));
}

}  // namespace

TemporalModel::Encoded TemporalModel::encode(const std::vector<const TrafficSequence*>& batch) const {
  return encode(stack_values(batch, config_.seq_len));
}

Tensor TemporalModel::classify(const Encoded& enc) const { return classifier_(enc.final_state); }

Tensor TemporalModel::predict_next(const Encoded& enc) const {
  const std::size_t s = enc.hidden.dim(0), t = enc.hidden.dim(1);
  return ad::slice(ad::reshape(regression_(enc.hidden), {s, t}), 0, t - 1);
}

TemporalModel::Loss TemporalModel::joint_loss(const std::vector<const TrafficSequence*>& batch) const {
  return joint_loss(batch, config_.lambda_reg, config_.lambda_cls);
}

TemporalModel::Loss TemporalModel::joint_loss(const std::vector<const TrafficSequence*>& batch, double lambda_reg,
                                              double lambda_cls) const {
  if (batch.empty()) throw std::invalid_argument("joint_loss: empty batch");
  if (lambda_reg < 0 || lambda_cls < 0 || (lambda_reg == 0 && lambda_cls == 0))
    throw std::invalid_argument("joint_loss: weights must be non-negative and not both zero");
  const std::size_t t = config_.seq_len;
  Tensor values = stack_values(batch, t);
  Encoded enc = encode(values);
  std::vector<double> target;
  target.reserve(batch.size() * (t - 1));
  std::vector<std::size_t> labels;
  for (const auto* s : batch) {
    target.insert(target.end(), s->values.begin() + 1, s->values.end());
    labels.push_back(s->channel);
  }
  Loss loss;
  loss.regression = ad::mse_loss(predict_next(enc), Tensor::from({batch.size(), t - 1}, std::move(target)));
  loss.classification = ad::cross_entropy_loss(classify(enc), labels);
  if (lambda_cls == 0)
    loss.total = ad::scale(loss.regression, lambda_reg);
  else if (lambda_reg == 0)
    loss.total = ad::scale(loss.classification, lambda_cls);
  else
    loss.total = ad::add(ad::scale(loss.regression, lambda_reg), ad::scale(loss.classification, lambda_cls));
  return loss;
}

std::vector<double> TemporalModel::road_embeddings(const std::vector<TrafficSequence>& sequences) const {
  if (sequences.size() % 2 != 0) throw ShapeError("road_embeddings: expected weekday/weekend pairs");
  const std::size_t n = sequences.size() / 2, d = config_.d_t;
  ad::NoGradGuard guard;
  std::vector<double> states(n * 2 * d);
  const std::size_t chunk = 256;
  for (std::size_t lo = 0; lo < sequences.size(); lo += chunk) {
    const std::size_t hi = std::min(sequences.size(), lo + chunk);
    std::vector<const TrafficSequence*> batch;
    for (std::size_t i = lo; i < hi; ++i) {
      if (sequences[i].road != i / 2 || sequences[i].channel != i % 2)
        throw DataError("road_embeddings: sequences not in (road, channel) order");
      batch.push_back(&sequences[i]);
    }
    auto fs = encode(batch).final_state.to_vector();
    // Row layout [road][channel][d] matches [road][2d] of the concatenation.
    std::copy(fs.begin(), fs.end(), states.begin() + static_cast<std::ptrdiff_t>(lo * d));
  }
  return road_projection_(Tensor::from({n, 2 * d}, std::move(states))).to_vector();
}

void TemporalModel::save(const std::filesystem::path& path) const {
  std::vector<std::pair<std::string, Tensor>> items;
  for (const auto& name : params_.names()) items.emplace_back(name, params_.get(name));
  items.emplace_back("transform", Tensor::from({2}, {transform.mean, transform.std}));
  nn::save_archive(path, items);
}

void TemporalModel::load(const std::filesystem::path& path) {
  nn::load_params(path, params_);
  for (auto& [name, t] : nn::load_archive(path))
    if (name == "transform") {
      transform.mean = t.data()[0];
      transform.std = t.data()[1];
      return;
    }
  throw DataError("checkpoint " + path.string() + " lacks the sequence transform");
}

TemporalHistory train_temporal(TemporalModel& model, const std::vector<TrafficSequence>& sequences) {
  const auto& cfg = model.config();
  if (sequences.empty()) throw DataError("train_temporal: no sequences");
  nn::AdamW opt(cfg.optimizer);
  nn::Rng rng(cfg.seed ^ 0x7e3907a1ULL);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  TemporalHistory hist;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
      std::vector<const TrafficSequence*> batch;
      for (std::size_t i = lo; i < std::min(order.size(), lo + cfg.batch); ++i) batch.push_back(&sequences[order[i]]);
      auto loss = model.joint_loss(batch);
      double value = loss.total.item();
      if (!std::isfinite(value)) throw NumericalError("temporal loss is not finite at step " + std::to_string(step));
      hist.regression.push_back(loss.regression.item());
      hist.classification.push_back(loss.classification.item());
      model.params().zero_grad();
      ad::backward(loss.total);
      opt.step(model.params());
      ++step;
    }
  }
  return hist;
}

namespace {

template <typename F>
void for_chunks(const std::vector<TrafficSequence>& sequences, F&& f) {
  const std::size_t chunk = 256;
  for (std::size_t lo = 0; lo < sequences.size(); lo += chunk) {
    std::vector<const TrafficSequence*> batch;
    for (std::size_t i = lo; i < std::min(sequences.size(), lo + chunk); ++i) batch.push_back(&sequences[i]);
    f(batch);
  }
}

}  // namespace

double classification_accuracy(const TemporalModel& model, const std::vector<TrafficSequence>& sequences) {
  if (sequences.empty()) return 0.0;
  ad::NoGradGuard guard;
  std::size_t correct = 0;
  for_chunks(sequences, [&](const std::vector<const TrafficSequence*>& batch) {
    auto logits = model.classify(model.encode(batch)).to_vector();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::size_t pred = logits[i * 2 + 1] > logits[i * 2] ? 1 : 0;
      correct += pred == batch[i]->channel;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(sequences.size());
}

double regression_mse(const TemporalModel& model, const std::vector<TrafficSequence>& sequences) {
  if (sequences.empty()) return 0.0;
  ad::NoGradGuard guard;
  double total = 0.0;
  for_chunks(sequences, [&](const std::vector<const TrafficSequence*>& batch) {
    auto loss = model.joint_loss(batch, 1.0, 0.0);
    total += loss.regression.item() * static_cast<double>(batch.size());
  });
  return total / static_cast<double>(sequences.size());
}

}  // namespace dst
