// SPDX-License-Identifier: Apache-2.0

#include "dst/fusion_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst {

using ad::Tensor;

void Embedding::save(const std::filesystem::path& path) const { nn::save_archive(path, {{"z", tensor()}}); }

Embedding Embedding::load(const std::filesystem::path& path) {
  for (auto& [name, t] : nn::load_archive(path))
    if (name == "z") {
      if (t.rank() != 2) throw DataError("embedding archive " + path.string() + " holds a non-matrix 'z'");
      return Embedding{t.dim(0), t.dim(1), t.to_vector()};
    }
  throw DataError("embedding archive " + path.string() + " has no entry 'z'");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kConcat: return "concat";
    case FusionMode::kSum: return "sum";
    case FusionMode::kGated: return "gated";
  }
  return "unknown";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "concat") return FusionMode::kConcat;
  if (s == "sum") return FusionMode::kSum;
  if (s == "gated") return FusionMode::kGated;
  throw ConfigError("unknown fusion mode '" + s + "' (expected concat, sum or gated)");
}

std::vector<SpeedLabel> compute_speed_labels(const RoadNetwork& network, const std::vector<Trajectory>& trajectories) {
  std::vector<double> time(network.size(), 0.0);
  std::vector<std::size_t> visits(network.size(), 0);
  for (const auto& t : trajectories)
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      time[t.road_ids[i]] += static_cast<double>(t.timestamps[i + 1] - t.timestamps[i]);
      ++visits[t.road_ids[i]];
    }
  std::vector<SpeedLabel> out;
  for (std::uint32_t r = 0; r < network.size(); ++r) {
    if (visits[r] == 0 || time[r] <= 0.0) continue;
    out.push_back({r, network.road(r).length / (time[r] / static_cast<double>(visits[r]))});
  }
  return out;
}

// ---- fusion --------------------------------------------------------------------

GatedFusion::GatedFusion(nn::ParamStore& params, std::size_t d, std::size_t k, nn::Rng& rng)
    : gate(params, "gate", k * d, k * d, rng), branches(k) {}

Tensor GatedFusion::operator()(const std::vector<Tensor>& parts) const {
  if (parts.size() != branches) throw ShapeError("gated fusion: branch count mismatch");
  const std::size_t d = parts[0].dim(1);
  Tensor g = ad::sigmoid(gate(ad::concat(parts)));
  Tensor out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    Tensor term = ad::mul(ad::slice(g, k * d, (k + 1) * d), parts[k]);
    out = out.defined() ? ad::add(out, term) : term;
  }
  return out;
}

FusedRepresentation fuse(const Embedding& z_g, const Embedding& z_h, const Embedding* z_d, FusionMode mode,
                         const GateFitConfig* gate_fit) {
  std::vector<const Embedding*> parts{&z_g, &z_h};
  if (z_d) parts.push_back(z_d);
  for (const auto* p : parts)
    if (p->n != z_g.n)
      throw ShapeError("fuse: row counts differ (" + std::to_string(z_g.n) + " vs " + std::to_string(p->n) + ")");
  FusedRepresentation out;
  out.mode = mode;
  for (const auto* p : parts) {
    std::string_view bytes(reinterpret_cast<const char*>(p->values.data()), p->values.size() * sizeof(double));
    out.provenance.push_back(io::hex64(io::fnv1a(bytes)));
  }
  const std::size_t n = z_g.n;
  if (mode == FusionMode::kConcat) {
    std::size_t width = 0;
    for (const auto* p : parts) width += p->d;
    out.z = {n, width, std::vector<double>(n * width)};
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t off = 0;
      for (const auto* p : parts) {
        std::copy_n(p->values.begin() + static_cast<std::ptrdiff_t>(i * p->d), p->d,
                    out.z.values.begin() + static_cast<std::ptrdiff_t>(i * width + off));
        off += p->d;
      }
    }
    return out;
  }
  for (const auto* p : parts)
    if (p->d != z_g.d) throw ShapeError("fuse: " + to_string(mode) + " requires equal widths");
  if (mode == FusionMode::kSum) {
    out.z = {n, z_g.d, std::vector<double>(n * z_g.d, 0.0)};
    for (const auto* p : parts)
      for (std::size_t i = 0; i < p->values.size(); ++i) out.z.values[i] += p->values[i];
    return out;
  }
  if (!gate_fit || gate_fit->labels.size() < 2) throw ConfigError("gated fusion needs speed labels to fit the gate");
  nn::Rng rng(gate_fit->seed);
  nn::ParamStore params;
  GatedFusion gfuse(params, z_g.d, parts.size(), rng);
  nn::Linear head(params, "head", z_g.d, 1, rng);
  std::vector<Tensor> inputs;
  for (const auto* p : parts) inputs.push_back(p->tensor());
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (const auto& l : gate_fit->labels) {
    rows.push_back(l.road);
    target.push_back(l.speed);
  }
  double mu = std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(target.size());
  double var = 0.0;
  for (double t : target) var += (t - mu) * (t - mu);
  double sd = std::sqrt(var / static_cast<double>(target.size()));
  if (sd < 1e-12) sd = 1.0;
  for (auto& t : target) t = (t - mu) / sd;
  Tensor y = Tensor::from({target.size(), 1}, target);
  nn::AdamW opt({gate_fit->lr, 0.9, 0.999, 1e-8, 0.0});
  for (std::size_t e = 0; e < gate_fit->epochs; ++e) {
    Tensor loss = ad::mse_loss(head(ad::embedding_lookup(gfuse(inputs), rows)), y);
    if (!std::isfinite(loss.item())) throw NumericalError("gate fit loss is not finite at step " + std::to_string(e));
    params.zero_grad();
    ad::backward(loss);
    opt.step(params);
  }
  ad::NoGradGuard guard;
  out.z = {n, z_g.d, gfuse(inputs).to_vector()};
  return out;
}

// ---- metrics ---------------------------------------------------------------------

double mean_absolute_error(std::span<const double> p, std::span<const double> t) {
  if (p.size() != t.size() || p.empty()) throw std::invalid_argument("MAE: sizes differ or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

double root_mean_squared_error(std::span<const double> p, std::span<const double> t) {
  if (p.size() != t.size() || p.empty()) throw std::invalid_argument("RMSE: sizes differ or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return std::sqrt(s / static_cast<double>(p.size()));
}

std::size_t rank_of(std::span<const double> scores, std::size_t truth) {
  const double s = scores[truth];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && j < truth)) ++rank;
  return rank;
}

RankingMetrics ranking_metrics(std::span<const double> scores, std::size_t classes, std::span<const std::size_t> truth) {
  if (classes < 2) throw std::invalid_argument("ranking metrics need at least 2 classes");
  if (truth.empty() || scores.size() != truth.size() * classes) throw ShapeError("ranking_metrics: shape mismatch");
  RankingMetrics m;
  for (std::size_t q = 0; q < truth.size(); ++q) {
    auto r = rank_of(scores.subspan(q * classes, classes), truth[q]);
    m.acc1 += r == 1 ? 1.0 : 0.0;
    m.mrr += 1.0 / static_cast<double>(r);
  }
  m.acc1 /= static_cast<double>(truth.size());
  m.mrr /= static_cast<double>(truth.size());
  return m;
}

// ---- reports --------------------------------------------------------------------

void EvalReport::finalize() {
  metrics.clear();
  if (per_seed.empty()) return;
  for (const auto& name : metric_names) {
    double s = 0.0;
    for (const auto& ps : per_seed) s += ps.at(name);
    metrics[name] = s / static_cast<double>(per_seed.size());
  }
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["task"] = task;
  j["metrics"] = metrics;
  j["per_seed"] = per_seed;
  j["seeds"] = seeds;
  j["config_hash"] = config_hash;
  j["split"] = split;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  for (const auto& [k, _] : r.metrics) r.metric_names.push_back(k);
  r.per_seed = j.at("per_seed").get<std::vector<std::map<std::string, double>>>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.config_hash = j.value("config_hash", "");
  r.split = j.value("split", "");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "task" && it.key() != "metrics" && it.key() != "per_seed" && it.key() != "seeds" &&
        it.key() != "config_hash" && it.key() != "split")
      r.extra[it.key()] = it.value();
  return r;
}

std::string EvalReport::csv_header() const {
  std::string h = "task,config_hash";
  for (const auto& m : metric_names) h += "," + m;
  return h;
}

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os.precision(10);
  os << task << ',' << config_hash;
  for (const auto& m : metric_names) os << ',' << metrics.at(m);
  return os.str();
}

// ---- heads --------------------------------------------------------------------

Embedding standardize_columns(const Embedding& z) {
  Embedding out = z;
  for (std::size_t j = 0; j < z.d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < z.n; ++i) mu += z.at(i, j);
    mu /= static_cast<double>(std::max<std::size_t>(z.n, 1));
    double var = 0.0;
    for (std::size_t i = 0; i < z.n; ++i) var += (z.at(i, j) - mu) * (z.at(i, j) - mu);
    double sd = std::sqrt(var / static_cast<double>(std::max<std::size_t>(z.n, 1)));
    for (std::size_t i = 0; i < z.n; ++i) out.values[i * z.d + j] = sd > 1e-12 ? (z.at(i, j) - mu) / sd : z.at(i, j) - mu;
  }
  return out;
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> s;
  for (std::size_t k = 1; k <= count; ++k) s.push_back(base * 1000 + k);
  return s;
}

std::vector<const Trajectory*> eligible_trajectories(const std::vector<Trajectory>& trajectories) {
  std::vector<const Trajectory*> out;
  for (const auto& t : trajectories)
    if (t.size() >= 10 && t.size() <= 100) out.push_back(&t);
  if (out.empty()) throw DataError("no trajectory has between 10 and 100 roads");
  return out;
}

TrajectorySplit split_trajectories(std::size_t count, std::uint64_t seed, double test_fraction, double val_fraction) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  nn::Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(count)));
  n_test = std::min(n_test, count > 0 ? count - 1 : 0);
  TrajectorySplit s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  auto n_val = static_cast<std::size_t>(std::round(val_fraction * static_cast<double>(rest.size())));
  if (rest.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);
  else n_val = 0;
  s.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  return s;
}

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const nn::ParamStore& p) {
  Snapshot s;
  for (const auto& name : p.names()) s.push_back(p.get(name).to_vector());
  return s;
}

void restore(nn::ParamStore& p, const Snapshot& s) {
  auto names = p.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto dst = p.get(names[i]).mutable_data();
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

/// Mini-batch AdamW over `train` reshuffled every epoch, with early stopping on
/// `val_loss`; leaves the best parameters in place.
template <typename BatchLoss, typename ValLoss>
void fit_head(nn::ParamStore& params, std::vector<std::size_t> train, std::size_t batch, const HeadConfig& cfg,
              nn::Rng& rng, BatchLoss&& batch_loss, ValLoss&& val_loss, const char* task) {
  nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_params = snapshot(params);
  std::size_t since = 0, step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t lo = 0; lo < train.size(); lo += batch) {
      std::vector<std::size_t> b(train.begin() + static_cast<std::ptrdiff_t>(lo),
                                 train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), lo + batch)));
      Tensor loss = batch_loss(b);
      if (!std::isfinite(loss.item()))
        throw NumericalError(std::string(task) + " head loss is not finite at step " + std::to_string(step));
      params.zero_grad();
      ad::backward(loss);
      if (cfg.clip_norm > 0) nn::clip_grad_norm(params, cfg.clip_norm);
      opt.step(params);
      ++step;
    }
    double v;
    {
      ad::NoGradGuard guard;
      v = val_loss();
    }
    if (v < best) {
      best = v;
      best_params = snapshot(params);
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  restore(params, best_params);
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& ids, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < ids.size(); lo += size)
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(lo),
                     ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), lo + size)));
  return out;
}

struct Standardizer {
  double mean = 0.0, sd = 1.0;
  explicit Standardizer(const std::vector<double>& v) {
    if (v.empty()) return;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    sd = std::sqrt(s / static_cast<double>(v.size()));
    if (sd < 1e-12) sd = 1.0;
  }
  double fwd(double x) const { return (x - mean) / sd; }
  double inv(double x) const { return x * sd + mean; }
};

std::vector<std::vector<std::size_t>> road_sequences(const std::vector<const Trajectory*>& trajs,
                                                     std::span<const std::size_t> ids, bool drop_last) {
  std::vector<std::vector<std::size_t>> seqs;
  for (auto i : ids) {
    const auto& r = trajs[i]->road_ids;
    seqs.emplace_back(r.begin(), drop_last ? r.end() - 1 : r.end());
  }
  return seqs;
}

void require_same_rows(const Embedding& z, std::size_t road) {
  if (road >= z.n) throw DataError("road index " + std::to_string(road) + " outside embedding rows");
}

}  // namespace

EvalReport eval_speed_inference(const Embedding& z_raw, const std::vector<SpeedLabel>& labels,
                                std::span<const std::uint64_t> seeds, const HeadConfig& head) {
  if (labels.size() < head.folds) throw DataError("speed inference: fewer labeled roads than folds");
  if (labels.size() < 10) throw DataError("speed inference: need labels for at least 10 roads");
  for (const auto& l : labels) require_same_rows(z_raw, l.road);
  const Embedding z = standardize_columns(z_raw);
  const Tensor table = z.tensor();
  EvalReport report;
  report.task = "speed_inference";
  report.metric_names = {"MAE", "RMSE"};
  report.split = std::to_string(head.folds) + "-fold cross-validation over labeled roads";
  report.extra["model"] = "linear";
  report.extra["labeled_roads"] = labels.size();
  for (auto seed : seeds) {
    report.seeds.push_back(seed);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    double mae_sum = 0.0, rmse_sum = 0.0;
    for (std::size_t f = 0; f < head.folds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t k = 0; k < order.size(); ++k) (k % head.folds == f ? test : train).push_back(order[k]);
      auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(head.val_fraction * train.size())));
      std::vector<std::size_t> val(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
      train.erase(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
      std::vector<double> train_y;
      for (auto i : train) train_y.push_back(labels[i].speed);
      Standardizer ys(train_y);
      nn::ParamStore params;
      nn::Rng init(seed * 31 + f);
      nn::Linear lin(params, "speed", z.d, 1, init);
      auto loss_of = [&](const std::vector<std::size_t>& ids) {
        std::vector<std::size_t> rows;
        std::vector<double> y;
        for (auto i : ids) {
          rows.push_back(labels[i].road);
          y.push_back(ys.fwd(labels[i].speed));
        }
        return ad::mse_loss(lin(ad::embedding_lookup(table, rows)), Tensor::from({ids.size(), 1}, std::move(y)));
      };
      fit_head(params, train, head.speed_batch, head, rng, loss_of, [&] { return loss_of(val).item(); }, "speed");
      ad::NoGradGuard guard;
      std::vector<std::size_t> rows;
      std::vector<double> truth;
      for (auto i : test) {
        rows.push_back(labels[i].road);
        truth.push_back(labels[i].speed);
      }
      auto pred = lin(ad::embedding_lookup(table, rows)).to_vector();
      for (auto& p : pred) p = ys.inv(p);
      mae_sum += mean_absolute_error(pred, truth);
      rmse_sum += root_mean_squared_error(pred, truth);
    }
    report.per_seed.push_back({{"MAE", mae_sum / static_cast<double>(head.folds)},
                               {"RMSE", rmse_sum / static_cast<double>(head.folds)}});
  }
  report.finalize();
  return report;
}

EvalReport eval_travel_time(const Embedding& z_raw, const std::vector<Trajectory>& trajectories,
                            std::span<const std::uint64_t> seeds, const HeadConfig& head) {
  auto trajs = eligible_trajectories(trajectories);
  for (const auto* t : trajs)
    for (auto r : t->road_ids) require_same_rows(z_raw, r);
  const Embedding z = standardize_columns(z_raw);
  const Tensor table = z.tensor();
  std::vector<double> duration;
  for (const auto* t : trajs) duration.push_back(static_cast<double>(t->timestamps.back() - t->timestamps.front()));
  EvalReport report;
  report.task = "travel_time";
  report.metric_names = {"MAE", "RMSE"};
  report.split = "70/30 trajectory split, 10% of train held out for early stopping";
  report.extra["model"] = "GRU";
  report.extra["hidden"] = head.hidden;
  report.extra["unit"] = "seconds";
  for (auto seed : seeds) {
    report.seeds.push_back(seed);
    auto split = split_trajectories(trajs.size(), seed, head.test_fraction, head.val_fraction);
    std::vector<double> train_y;
    for (auto i : split.train) train_y.push_back(duration[i]);
    Standardizer ys(train_y);
    nn::ParamStore params;
    nn::Rng init(seed * 31 + 7), rng(seed * 31 + 8);
    nn::GRU gru(params, "gru", z.d, head.hidden, init);
    nn::Linear out(params, "out", head.hidden, 1, init);
    auto predict = [&](std::span<const std::size_t> ids) { return out(gru.run(table, road_sequences(trajs, ids, false))); };
    auto loss_of = [&](const std::vector<std::size_t>& ids) {
      std::vector<double> y;
      for (auto i : ids) y.push_back(ys.fwd(duration[i]));
      return ad::mse_loss(predict(ids), Tensor::from({ids.size(), 1}, std::move(y)));
    };
    fit_head(params, split.train, head.batch, head, rng, loss_of,
             [&] { return loss_of(split.validation).item(); }, "travel_time");
    ad::NoGradGuard guard;
    std::vector<double> pred, truth;
    for (const auto& b : chunk(split.test, 256)) {
      auto p = predict(b).to_vector();
      for (std::size_t k = 0; k < b.size(); ++k) {
        pred.push_back(std::max(0.0, ys.inv(p[k])));
        truth.push_back(duration[b[k]]);
      }
    }
    report.per_seed.push_back({{"MAE", mean_absolute_error(pred, truth)}, {"RMSE", root_mean_squared_error(pred, truth)}});
  }
  report.finalize();
  return report;
}

EvalReport eval_destination(const Embedding& z_raw, const std::vector<Trajectory>& trajectories,
                            std::span<const std::uint64_t> seeds, const HeadConfig& head) {
  if (z_raw.n < 2) throw DataError("destination prediction needs at least 2 roads");
  auto trajs = eligible_trajectories(trajectories);
  for (const auto* t : trajs)
    for (auto r : t->road_ids) require_same_rows(z_raw, r);
  const Embedding z = standardize_columns(z_raw);
  const Tensor table = z.tensor();
  EvalReport report;
  report.task = "destination";
  report.metric_names = {"ACC@1", "MRR"};
  report.split = "70/30 trajectory split, 10% of train held out for early stopping";
  report.extra["model"] = "GRU";
  report.extra["hidden"] = head.hidden;
  report.extra["classes"] = z.n;
  for (auto seed : seeds) {
    report.seeds.push_back(seed);
    auto split = split_trajectories(trajs.size(), seed, head.test_fraction, head.val_fraction);
    nn::ParamStore params;
    nn::Rng init(seed * 31 + 11), rng(seed * 31 + 12);
    nn::GRU gru(params, "gru", z.d, head.hidden, init);
    nn::Linear out(params, "out", head.hidden, z.n, init);
    auto logits = [&](std::span<const std::size_t> ids) { return out(gru.run(table, road_sequences(trajs, ids, true))); };
    auto labels_of = [&](std::span<const std::size_t> ids) {
      std::vector<std::size_t> y;
      for (auto i : ids) y.push_back(trajs[i]->road_ids.back());
      return y;
    };
    auto loss_of = [&](const std::vector<std::size_t>& ids) {
      auto y = labels_of(ids);
      return ad::cross_entropy_loss(logits(ids), y);
    };
    fit_head(params, split.train, head.batch, head, rng, loss_of,
             [&] { return loss_of(split.validation).item(); }, "destination");
    ad::NoGradGuard guard;
    std::vector<double> scores;
    std::vector<std::size_t> truth;
    for (const auto& b : chunk(split.test, 256)) {
      auto s = logits(b).to_vector();
      scores.insert(scores.end(), s.begin(), s.end());
      auto y = labels_of(b);
      truth.insert(truth.end(), y.begin(), y.end());
    }
    auto m = ranking_metrics(scores, z.n, truth);
    report.per_seed.push_back({{"ACC@1", m.acc1}, {"MRR", m.mrr}});
  }
  report.finalize();
  return report;
}

}  // namespace dst
