// SPDX-License-Identifier: Apache-2.0

#include "dst/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst {

namespace fs = std::filesystem;

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Salt : std::uint64_t { kCity = 1, kTrips, kHypergraph, kSpatial, kTemporal, kGate };

void log(const std::string& stage, const std::string& msg) { std::cerr << "[dst " << stage << "] " << msg << '\n'; }

Embedding to_embedding(std::size_t n, std::size_t d, std::vector<double> v) { return Embedding{n, d, std::move(v)}; }

}  // namespace

City synthesize_city(const RunConfig& cfg, std::uint64_t seed) {
  City c;
  c.network = generate_synthetic_city(static_cast<int>(cfg.synth_rows), static_cast<int>(cfg.synth_cols),
                                      static_cast<int>(cfg.synth_rings), derive(seed, kCity));
  c.trajectories = simulate_trajectories(c.network, cfg.synth_trajectories, derive(seed, kTrips));
  return c;
}

HypergraphOptions hypergraph_options(const RunConfig& cfg) {
  HypergraphOptions o;
  o.k_zones = cfg.k_zones;
  o.radius_m = cfg.radius_m;
  o.seed = derive(cfg.seed, kHypergraph);
  o.functional = !cfg.no_hg1;
  o.same_type = !cfg.no_hg2;
  o.oneway = !cfg.no_hg3;
  return o;
}

Preprocessed preprocess(const City& city, const RunConfig& cfg) {
  Preprocessed p;
  auto disc = discretize_features(city.network, cfg.bins);
  p.codec = std::move(disc.codec);
  p.codes = std::move(disc.table);
  p.warnings = std::move(disc.warnings);
  p.edge_features = compute_edge_features(city.network);
  p.codec.edge_mean = p.edge_features.mean;
  p.codec.edge_std = p.edge_features.std;
  p.hypergraph = build_hypergraph(city.network, hypergraph_options(cfg));
  p.dynamics = extract_traffic_dynamics(city.trajectories, city.network.size(), static_cast<int>(cfg.tz_offset_hours));
  return p;
}

Preprocessed preprocess_with_codec(const City& city, const RunConfig& cfg, const FeatureCodec& codec) {
  Preprocessed p;
  p.codec = codec;
  p.codes = encode_features(city.network, codec);
  p.edge_features = compute_edge_features(city.network, codec.edge_mean, codec.edge_std);
  p.hypergraph = build_hypergraph(city.network, hypergraph_options(cfg));
  p.dynamics = extract_traffic_dynamics(city.trajectories, city.network.size(), static_cast<int>(cfg.tz_offset_hours));
  return p;
}

SpatialConfig spatial_config(const RunConfig& cfg) {
  SpatialConfig s;
  s.d = cfg.d;
  s.d_f = cfg.d_f;
  s.temperature = cfg.temperature;
  s.epochs = cfg.epochs_spatial;
  s.batch = cfg.batch_contrastive;
  s.optimizer.lr = cfg.lr;
  s.no_mixhop = cfg.no_mixhop;
  s.freeze_mixhop = cfg.freeze_mixhop;
  s.hyper_positives = cfg.hyper_positives;
  s.projection = !cfg.no_projection;
  s.seed = derive(cfg.seed, kSpatial);
  return s;
}

TemporalConfig temporal_config(const RunConfig& cfg) {
  TemporalConfig t;
  t.d_t = cfg.d_t;
  t.d_out = cfg.d;
  t.bidirectional = cfg.bidirectional;
  t.lambda_reg = cfg.lambda_reg;
  t.lambda_cls = cfg.lambda_cls;
  t.epochs = cfg.epochs_temporal;
  t.batch = cfg.batch_traffic;
  t.optimizer.lr = cfg.lr;
  t.seed = derive(cfg.seed, kTemporal);
  return t;
}

HeadConfig head_config(const RunConfig& cfg) {
  HeadConfig h;
  h.hidden = cfg.eval_hidden;
  h.epochs = cfg.eval_epochs;
  return h;
}

namespace {

SpatialInputs spatial_inputs(const City& city, const Preprocessed& pre, const RunConfig& cfg) {
  return make_spatial_inputs(city.network, pre.codes, pre.edge_features, pre.hypergraph, cfg.raw_degrees);
}

}  // namespace

TrainedBranches train_branches(const City& city, const Preprocessed& pre, const RunConfig& cfg) {
  TrainedBranches t;
  std::optional<MixHopMatrix> mixhop;
  if (!cfg.no_mixhop) mixhop = row_normalize(accumulate_mixhop(city.trajectories, city.network.size()));
  auto inputs = spatial_inputs(city, pre, cfg);
  t.spatial = std::make_unique<SpatialModel>(pre.codec.vocab_sizes(), mixhop ? &*mixhop : nullptr, spatial_config(cfg));
  t.spatial_loss = train_spatial(*t.spatial, inputs);
  auto se = spatial_embeddings(*t.spatial, inputs);
  t.z_graph = to_embedding(se.n, se.d, std::move(se.graph));
  t.z_hyper = to_embedding(se.n, se.d, std::move(se.hyper));
  if (!cfg.no_tm) {
    t.temporal = std::make_unique<TemporalModel>(temporal_config(cfg));
    t.temporal->transform = SequenceTransform::fit(pre.dynamics);
    auto seqs = build_sequences(pre.dynamics, t.temporal->transform);
    t.temporal_loss = train_temporal(*t.temporal, seqs);
    t.z_dyn = to_embedding(city.network.size(), cfg.d, t.temporal->road_embeddings(seqs));
  }
  return t;
}

BranchEmbeddings apply_branches(const SpatialModel& spatial, const TemporalModel* temporal, const City& city,
                                const Preprocessed& pre, const RunConfig& cfg) {
  BranchEmbeddings b;
  auto se = spatial_embeddings(spatial, spatial_inputs(city, pre, cfg));
  b.z_graph = to_embedding(se.n, se.d, std::move(se.graph));
  b.z_hyper = to_embedding(se.n, se.d, std::move(se.hyper));
  if (temporal) {
    auto seqs = build_sequences(pre.dynamics, temporal->transform);
    b.z_dyn = to_embedding(city.network.size(), temporal->config().d_out, temporal->road_embeddings(seqs));
  }
  return b;
}

FusedRepresentation fuse_branches(const BranchEmbeddings& b, const City& city, const RunConfig& cfg) {
  auto mode = fusion_mode_from_string(cfg.fusion);
  GateFitConfig gate;
  if (mode == FusionMode::kGated) {
    gate.labels = compute_speed_labels(city.network, city.trajectories);
    gate.lr = cfg.lr * 10;
    gate.seed = derive(cfg.seed, kGate);
  }
  return fuse(b.z_graph, b.z_hyper, b.z_dyn ? &*b.z_dyn : nullptr, mode, &gate);
}

std::vector<EvalReport> evaluate_all(const Embedding& z, const City& city, const RunConfig& cfg) {
  auto seeds = eval_seeds(cfg.seed, cfg.eval_seeds);
  auto head = head_config(cfg);
  std::vector<EvalReport> out;
  out.push_back(eval_speed_inference(z, compute_speed_labels(city.network, city.trajectories), seeds, head));
  out.push_back(eval_travel_time(z, city.trajectories, seeds, head));
  out.push_back(eval_destination(z, city.trajectories, seeds, head));
  for (auto& r : out) r.config_hash = cfg.hash();
  return out;
}

std::vector<EvalReport> zero_shot_transfer(const SpatialModel& spatial, const TemporalModel* temporal,
                                           const FeatureCodec& source_codec, const City& target, const RunConfig& cfg) {
  if (spatial.uses_mixhop())
    throw ConfigError("transfer needs a source model trained with no_mixhop (the mix-hop matrix is city-specific)");
  if (cfg.fusion == "gated") throw ConfigError("transfer supports concat and sum fusion only");
  auto pre = preprocess_with_codec(target, cfg, source_codec);
  auto branches = apply_branches(spatial, temporal, target, pre, cfg);
  auto fused = fuse_branches(branches, target, cfg);
  auto reports = evaluate_all(fused.z, target, cfg);
  for (auto& r : reports) {
    r.extra["unk_codes"] = pre.codes.unk_count;
    r.extra["transfer"] = true;
  }
  return reports;
}

// ---- workdir stages ------------------------------------------------------------

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
  fs::create_directories(workdir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    path_.clear();
    throw ConfigError("workdir " + workdir.string() + " is locked by another run (remove .lock if stale)");
  }
  std::fclose(f);
}

WorkdirLock::~WorkdirLock() {
  if (!path_.empty()) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> s{"synth",      "preprocess", "mixhop", "train-spatial", "train-temporal",
                                          "fuse",       "eval",       "transfer"};
  return s;
}

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.workdir.empty()) {
    if (const char* env = std::getenv("DST_WORKDIR")) cfg_.workdir = env;
  }
  if (cfg_.workdir.empty()) throw ConfigError("no workdir: pass --workdir or set DST_WORKDIR");
  workdir_ = cfg_.workdir;
}

Pipeline::Paths Pipeline::data_paths() const {
  Paths p;
  p.roads = cfg_.roads.empty() ? artifact("data/roads.csv") : fs::path(cfg_.roads);
  p.edges = cfg_.edges.empty() ? artifact("data/edges.csv") : fs::path(cfg_.edges);
  p.trajectories = cfg_.trajectories.empty() ? artifact("data/trajectories.jsonl") : fs::path(cfg_.trajectories);
  return p;
}

void Pipeline::require(const fs::path& p, const std::string& producer) const {
  if (!fs::exists(p)) throw MissingArtifact(p.string(), producer);
}

City Pipeline::load_city() const {
  auto p = data_paths();
  const std::string producer = cfg_.roads.empty() ? "synth" : "user input";
  require(p.roads, producer);
  require(p.edges, producer);
  require(p.trajectories, producer);
  City c;
  c.network = load_network(p.roads, p.edges);
  auto loaded = load_trajectories(p.trajectories, c.network, cfg_.lenient);
  if (loaded.violations > 0)
    log("load", std::to_string(loaded.violations) + " unreachable transitions; " + std::to_string(loaded.dropped) +
                    " trajectories dropped");
  c.trajectories = std::move(loaded.trajectories);
  return c;
}

namespace {

std::string rel(const fs::path& p, const fs::path& root) {
  auto r = p.lexically_relative(root);
  return (!r.empty() && *r.begin() != "..") ? r.generic_string() : p.generic_string();
}

nlohmann::json hashes(const std::vector<fs::path>& files, const fs::path& root) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : files) j[rel(f, root)] = fs::exists(f) ? io::hash_file(f) : "";
  return j;
}

}  // namespace

bool Pipeline::up_to_date(const std::string& stage, const std::vector<fs::path>& inputs,
                          const std::vector<fs::path>& outputs) const {
  auto manifest = artifact("manifest.jsonl");
  if (!fs::exists(manifest)) return false;
  std::ifstream is(manifest);
  std::string line;
  nlohmann::json last;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("stage", "") == stage) last = j;
  }
  if (last.is_null()) return false;
  if (last.value("config_hash", "") != cfg_.hash()) return false;
  for (const auto& f : outputs)
    if (!fs::exists(f)) return false;
  return last["inputs"] == hashes(inputs, workdir_) && last["outputs"] == hashes(outputs, workdir_);
}

void Pipeline::record(const std::string& stage, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                      double seconds) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["config_hash"] = cfg_.hash();
  j["inputs"] = hashes(inputs, workdir_);
  j["outputs"] = hashes(outputs, workdir_);
  j["wall_time_s"] = seconds;
  j["config"] = cfg_.to_ini();
  std::ofstream os(artifact("manifest.jsonl"), std::ios::app);
  os << j.dump() << '\n';
}

bool Pipeline::run(const std::string& stage) {
  struct Io {
    std::vector<fs::path> in, out;
  };
  auto d = data_paths();
  auto a = [&](const char* n) { return artifact(n); };
  std::vector<fs::path> data{d.roads, d.edges, d.trajectories};
  Io io;
  void (Pipeline::*fn)() = nullptr;
  if (stage == "synth") {
    io = {{}, data};
    fn = &Pipeline::stage_synth;
  } else if (stage == "preprocess") {
    io = {data, {a("codec.json"), a("codes.csv"), a("edge_features.bin"), a("hypergraph.jsonl"), a("dynamics.dstd")}};
    fn = &Pipeline::stage_preprocess;
  } else if (stage == "mixhop") {
    io = {data, {a("mixhop.dstp")}};
    fn = &Pipeline::stage_mixhop;
  } else if (stage == "train-spatial") {
    io.in = data;
    for (const char* n : {"codec.json", "edge_features.bin", "hypergraph.jsonl"}) io.in.push_back(a(n));
    if (!cfg_.no_mixhop) io.in.push_back(a("mixhop.dstp"));
    io.out = {a("spatial.ckpt"), a("spatial_loss.csv"), a("z_graph.bin"), a("z_hyper.bin")};
    fn = &Pipeline::stage_train_spatial;
  } else if (stage == "train-temporal") {
    if (cfg_.no_tm) {
      log(stage, "temporal branch disabled (no_tm); skipping");
      return false;
    }
    io = {{a("dynamics.dstd")}, {a("temporal.ckpt"), a("temporal_loss.csv"), a("z_dyn.bin")}};
    fn = &Pipeline::stage_train_temporal;
  } else if (stage == "fuse") {
    io.in = {a("z_graph.bin"), a("z_hyper.bin")};
    if (!cfg_.no_tm) io.in.push_back(a("z_dyn.bin"));
    if (cfg_.fusion == "gated") io.in.insert(io.in.end(), data.begin(), data.end());
    io.out = {a("z_fused.bin"), a("fused.json")};
    fn = &Pipeline::stage_fuse;
  } else if (stage == "eval") {
    io.in = data;
    io.in.push_back(a("z_fused.bin"));
    io.out = {a("reports/speed_inference.json"), a("reports/travel_time.json"), a("reports/destination.json"),
              a("reports/summary.csv")};
    fn = &Pipeline::stage_eval;
  } else if (stage == "transfer") {
    io.in = {a("spatial.ckpt"), a("codec.json")};
    if (!cfg_.no_tm) io.in.push_back(a("temporal.ckpt"));
    for (const auto* p : {&cfg_.target_roads, &cfg_.target_edges, &cfg_.target_trajectories})
      if (!p->empty()) io.in.emplace_back(*p);
    io.out = {a("reports/transfer_speed_inference.json"), a("reports/transfer_travel_time.json"),
              a("reports/transfer_destination.json")};
    fn = &Pipeline::stage_transfer;
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  if (up_to_date(stage, io.in, io.out)) {
    log(stage, "up to date; skipped");
    return false;
  }
  auto t0 = std::chrono::steady_clock::now();
  (this->*fn)();
  double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record(stage, io.in, io.out, sec);
  log(stage, "done in " + std::to_string(sec) + " s");
  return true;
}

void Pipeline::run_all() {
  if (cfg_.roads.empty()) run("synth");
  for (const char* s : {"preprocess", "mixhop", "train-spatial", "train-temporal", "fuse", "eval"}) run(s);
  if (cfg_.no_mixhop) run("transfer");
}

void Pipeline::stage_synth() {
  if (!cfg_.roads.empty()) throw ConfigError("synth writes into the workdir; unset the input paths to use it");
  auto city = synthesize_city(cfg_, cfg_.seed);
  auto d = data_paths();
  write_network(city.network, d.roads, d.edges);
  write_trajectories(city.trajectories, city.network, d.trajectories);
  log("synth", std::to_string(city.network.size()) + " roads, " + std::to_string(city.trajectories.size()) +
                   " trajectories");
}

void Pipeline::stage_preprocess() {
  auto city = load_city();
  auto pre = preprocess(city, cfg_);
  for (const auto& w : pre.warnings) log("preprocess", "warning: " + w);
  pre.codec.save(artifact("codec.json"));
  {
    auto os = io::open_out(artifact("codes.csv"), false);
    os << "road_id";
    for (const auto& c : pre.codec.columns) os << ',' << c.name;
    os << '\n';
    for (std::size_t r = 0; r < pre.codes.rows; ++r) {
      os << city.network.road(r).id;
      for (std::size_t c = 0; c < pre.codes.cols; ++c) os << ',' << pre.codes.at(r, c);
      os << '\n';
    }
  }
  const auto e = city.network.edges().size();
  nn::save_archive(artifact("edge_features.bin"),
                   {{"values", ad::Tensor::from({e, 2}, pre.edge_features.values)},
                    {"mean", ad::Tensor::from({2}, {pre.edge_features.mean[0], pre.edge_features.mean[1]})},
                    {"std", ad::Tensor::from({2}, {pre.edge_features.std[0], pre.edge_features.std[1]})}});
  pre.hypergraph.save(artifact("hypergraph.jsonl"));
  pre.dynamics.save(artifact("dynamics.dstd"));
  log("preprocess", std::to_string(pre.hypergraph.edge_count()) + " hyperedges, " +
                        std::to_string(pre.dynamics.total()) + " road visits");
}

void Pipeline::stage_mixhop() {
  auto city = load_city();
  auto raw = accumulate_mixhop(city.trajectories, city.network.size());
  row_normalize(raw).save(artifact("mixhop.dstp"));
  log("mixhop", std::to_string(raw.nonzeros()) + " nonzero co-occurrence cells");
}

namespace {

EdgeFeatures load_edge_features(const fs::path& p) {
  EdgeFeatures ef;
  for (auto& [name, t] : nn::load_archive(p)) {
    if (name == "values") ef.values = t.to_vector();
    if (name == "mean") ef.mean = {t.data()[0], t.data()[1]};
    if (name == "std") ef.std = {t.data()[0], t.data()[1]};
  }
  return ef;
}

void write_csv(const fs::path& p, const std::string& header, const std::vector<std::vector<double>>& cols) {
  auto os = io::open_out(p, false);
  os << header << '\n';
  char buf[64];
  for (std::size_t i = 0; i < (cols.empty() ? 0 : cols[0].size()); ++i) {
    os << i;
    for (const auto& c : cols) {
      std::snprintf(buf, sizeof buf, "%.17g", c[i]);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace

void Pipeline::stage_train_spatial() {
  for (const char* n : {"codec.json", "edge_features.bin", "hypergraph.jsonl"}) require(artifact(n), "preprocess");
  if (!cfg_.no_mixhop) require(artifact("mixhop.dstp"), "mixhop");
  auto city = load_city();
  auto codec = FeatureCodec::load(artifact("codec.json"));
  auto codes = encode_features(city.network, codec);
  auto ef = load_edge_features(artifact("edge_features.bin"));
  auto hg = Hypergraph::load(artifact("hypergraph.jsonl"), city.network.size());
  std::optional<MixHopMatrix> mh;
  if (!cfg_.no_mixhop) mh = MixHopMatrix::load(artifact("mixhop.dstp"));
  auto inputs = make_spatial_inputs(city.network, codes, ef, hg, cfg_.raw_degrees);
  SpatialModel model(codec.vocab_sizes(), mh ? &*mh : nullptr, spatial_config(cfg_));
  std::vector<double> losses;
  try {
    losses = train_spatial(model, inputs);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("stage train-spatial: ") + e.what());
  }
  model.save(artifact("spatial.ckpt"));
  write_csv(artifact("spatial_loss.csv"), "step,loss", {losses});
  auto se = spatial_embeddings(model, inputs);
  to_embedding(se.n, se.d, se.graph).save(artifact("z_graph.bin"));
  to_embedding(se.n, se.d, se.hyper).save(artifact("z_hyper.bin"));
  log("train-spatial", "loss " + std::to_string(losses.front()) + " -> " + std::to_string(losses.back()));
}

void Pipeline::stage_train_temporal() {
  require(artifact("dynamics.dstd"), "preprocess");
  auto dyn = TrafficDynamics::load(artifact("dynamics.dstd"));
  auto tcfg = temporal_config(cfg_);
  TemporalModel model(tcfg);
  model.transform = SequenceTransform::fit(dyn);
  auto seqs = build_sequences(dyn, model.transform);
  TemporalHistory hist;
  try {
    hist = train_temporal(model, seqs);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("stage train-temporal: ") + e.what());
  }
  model.save(artifact("temporal.ckpt"));
  write_csv(artifact("temporal_loss.csv"), "step,loss_reg,loss_cls", {hist.regression, hist.classification});
  to_embedding(dyn.roads, tcfg.d_out, model.road_embeddings(seqs)).save(artifact("z_dyn.bin"));
  log("train-temporal", "classification accuracy " + std::to_string(classification_accuracy(model, seqs)));
}

void Pipeline::stage_fuse() {
  require(artifact("z_graph.bin"), "train-spatial");
  require(artifact("z_hyper.bin"), "train-spatial");
  if (!cfg_.no_tm) require(artifact("z_dyn.bin"), "train-temporal");
  BranchEmbeddings b;
  b.z_graph = Embedding::load(artifact("z_graph.bin"));
  b.z_hyper = Embedding::load(artifact("z_hyper.bin"));
  if (!cfg_.no_tm) b.z_dyn = Embedding::load(artifact("z_dyn.bin"));
  City city;
  if (cfg_.fusion == "gated") city = load_city();
  auto fused = fuse_branches(b, city, cfg_);
  fused.z.save(artifact("z_fused.bin"));
  nlohmann::json j;
  j["mode"] = to_string(fused.mode);
  j["rows"] = fused.z.n;
  j["width"] = fused.z.d;
  j["provenance"] = {{"z_graph", io::hash_file(artifact("z_graph.bin"))},
                     {"z_hyper", io::hash_file(artifact("z_hyper.bin"))},
                     {"z_dyn", cfg_.no_tm ? "" : io::hash_file(artifact("z_dyn.bin"))}};
  io::open_out(artifact("fused.json"), false) << j.dump(2) << '\n';
}

namespace {

void write_reports(const fs::path& dir, const std::string& prefix, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) io::open_out(dir / (prefix + r.task + ".json"), false) << r.to_json().dump(2) << '\n';
}

}  // namespace

void Pipeline::stage_eval() {
  require(artifact("z_fused.bin"), "fuse");
  auto city = load_city();
  auto z = Embedding::load(artifact("z_fused.bin"));
  if (z.n != city.network.size()) throw DataError("fused embedding rows differ from the road count");
  auto reports = evaluate_all(z, city, cfg_);
  write_reports(artifact("reports"), "", reports);
  auto os = io::open_out(artifact("reports/summary.csv"), false);
  for (const auto& r : reports) os << r.csv_header() << '\n' << r.csv_row() << '\n';
  for (const auto& r : reports)
    for (const auto& m : r.metric_names) log("eval", r.task + " " + m + " = " + std::to_string(r.metrics.at(m)));
}

void Pipeline::stage_transfer() {
  require(artifact("spatial.ckpt"), "train-spatial");
  require(artifact("codec.json"), "preprocess");
  if (!cfg_.no_tm) require(artifact("temporal.ckpt"), "train-temporal");
  if (!cfg_.no_mixhop) throw ConfigError("transfer needs a source model trained with no_mixhop = true");
  auto codec = FeatureCodec::load(artifact("codec.json"));
  SpatialModel spatial(codec.vocab_sizes(), nullptr, spatial_config(cfg_));
  spatial.load(artifact("spatial.ckpt"));
  std::unique_ptr<TemporalModel> temporal;
  if (!cfg_.no_tm) {
    temporal = std::make_unique<TemporalModel>(temporal_config(cfg_));
    temporal->load(artifact("temporal.ckpt"));
  }
  City target;
  if (cfg_.target_roads.empty()) {
    target = synthesize_city(cfg_, cfg_.target_seed);
  } else {
    if (cfg_.target_edges.empty() || cfg_.target_trajectories.empty())
      throw ConfigError("target_roads, target_edges and target_trajectories must be set together");
    target.network = load_network(cfg_.target_roads, cfg_.target_edges);
    target.trajectories = load_trajectories(cfg_.target_trajectories, target.network, cfg_.lenient).trajectories;
  }
  auto reports = zero_shot_transfer(spatial, temporal.get(), codec, target, cfg_);
  write_reports(artifact("reports"), "transfer_", reports);
  log("transfer", "target " + std::to_string(target.network.size()) + " roads, " +
                      std::to_string(reports[0].extra["unk_codes"].get<std::size_t>()) + " UNK codes");
}

}  // namespace dst
