// SPDX-License-Identifier: Apache-2.0

#include "dst/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "dst/errors.hpp"
#include "dst/io.hpp"

namespace dst {

std::vector<ConfigField> config_fields(RunConfig& c) {
  return {
      {"paths", "roads", &c.roads, "roads CSV (default: <workdir>/data/roads.csv)"},
      {"paths", "edges", &c.edges, "edges CSV (default: <workdir>/data/edges.csv)"},
      {"paths", "trajectories", &c.trajectories, "trajectories JSONL (default: <workdir>/data/trajectories.jsonl)"},
      {"paths", "workdir", &c.workdir, "artifact directory"},
      {"dims", "d", &c.d, "spatial embedding width"},
      {"dims", "d_t", &c.d_t, "transformer width"},
      {"dims", "d_f", &c.d_f, "per-feature embedding width"},
      {"training", "epochs_spatial", &c.epochs_spatial, "contrastive training epochs"},
      {"training", "epochs_temporal", &c.epochs_temporal, "temporal training epochs"},
      {"training", "batch_contrastive", &c.batch_contrastive, "contrastive mini-batch size"},
      {"training", "batch_traffic", &c.batch_traffic, "traffic sequence batch size"},
      {"training", "lr", &c.lr, "AdamW learning rate of both branches"},
      {"training", "lambda_reg", &c.lambda_reg, "next-step regression weight"},
      {"training", "lambda_cls", &c.lambda_cls, "weekday/weekend classification weight"},
      {"training", "temperature", &c.temperature, "contrastive temperature"},
      {"hypergraph", "k_zones", &c.k_zones, "functional-zone clusters"},
      {"hypergraph", "radius_m", &c.radius_m, "one-way proximity radius in meters"},
      {"ablation", "no_mixhop", &c.no_mixhop, "replace the mix-hop matrix with the identity"},
      {"ablation", "no_hg1", &c.no_hg1, "drop functional-zone hyperedges"},
      {"ablation", "no_hg2", &c.no_hg2, "drop same-type hyperedges"},
      {"ablation", "no_hg3", &c.no_hg3, "drop one-way proximity hyperedges"},
      {"ablation", "no_tm", &c.no_tm, "skip the temporal branch"},
      {"ablation", "freeze_mixhop", &c.freeze_mixhop, "keep the mix-hop matrix fixed"},
      {"ablation", "raw_degrees", &c.raw_degrees, "hypergraph propagation with raw degree matrices"},
      {"ablation", "bidirectional", &c.bidirectional, "disable the causal mask"},
      {"ablation", "hyper_positives", &c.hyper_positives, "treat same-hyperedge roads as positives"},
      {"ablation", "no_projection", &c.no_projection, "no projection heads before the contrastive loss"},
      {"fusion", "fusion", &c.fusion, "concat | sum | gated"},
      {"run", "seed", &c.seed, "master seed"},
      {"run", "profile", &c.profile, "desk | paper"},
      {"synth", "synth_rows", &c.synth_rows, "synthetic grid rows"},
      {"synth", "synth_cols", &c.synth_cols, "synthetic grid columns"},
      {"synth", "synth_rings", &c.synth_rings, "one-way ring roads"},
      {"synth", "synth_trajectories", &c.synth_trajectories, "simulated trajectories"},
      {"preprocess", "bins", &c.bins, "equal-width bins for continuous features"},
      {"preprocess", "lenient", &c.lenient, "split trajectories at unreachable steps instead of dropping them"},
      {"preprocess", "tz_offset_hours", &c.tz_offset_hours, "timezone offset for hour-of-day bucketing"},
      {"eval", "eval_hidden", &c.eval_hidden, "recurrent head hidden size"},
      {"eval", "eval_epochs", &c.eval_epochs, "downstream head epochs"},
      {"eval", "eval_seeds", &c.eval_seeds, "repeated evaluation seeds"},
      {"transfer", "target_roads", &c.target_roads, "target city roads CSV (synthesized when empty)"},
      {"transfer", "target_edges", &c.target_edges, "target city edges CSV"},
      {"transfer", "target_trajectories", &c.target_trajectories, "target city trajectories JSONL"},
      {"transfer", "target_seed", &c.target_seed, "seed of the synthesized target city"},
  };
}

RunConfig RunConfig::for_profile(const std::string& name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.profile = "paper";
    c.d = 128;
    c.d_t = 64;
    c.epochs_spatial = 5000;
    c.epochs_temporal = 100;
    c.lr = 1e-3;
    c.eval_hidden = 64;
    return c;
  }
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(d, "d");
  positive(d_t, "d_t");
  positive(d_f, "d_f");
  positive(epochs_spatial, "epochs_spatial");
  positive(epochs_temporal, "epochs_temporal");
  positive(batch_traffic, "batch_traffic");
  positive(k_zones, "k_zones");
  positive(eval_hidden, "eval_hidden");
  positive(eval_epochs, "eval_epochs");
  positive(eval_seeds, "eval_seeds");
  positive(synth_trajectories, "synth_trajectories");
  if (batch_contrastive < 2) throw ConfigError("batch_contrastive must be at least 2");
  if (bins < 2) throw ConfigError("bins must be at least 2");
  if (d_t % 2 != 0) throw ConfigError("d_t must be even");
  if (d_t % 4 != 0) throw ConfigError("d_t must be divisible by the 4 attention heads");
  if (d % 4 != 0) throw ConfigError("d must be divisible by the 4 attention heads");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (lambda_reg < 0 || lambda_cls < 0 || (lambda_reg == 0 && lambda_cls == 0))
    throw ConfigError("lambda_reg and lambda_cls must be non-negative and not both zero");
  if (!(radius_m >= 0)) throw ConfigError("radius_m must be non-negative");
  if (fusion != "concat" && fusion != "sum" && fusion != "gated")
    throw ConfigError("fusion must be concat, sum or gated, got '" + fusion + "'");
  if (profile != "desk" && profile != "paper") throw ConfigError("profile must be desk or paper");
  if (no_hg1 && no_hg2 && no_hg3) throw ConfigError("at least one hyperedge kind must stay enabled");
  if (synth_rows < 2 * synth_rings + 2 || synth_cols < 2 * synth_rings + 2)
    throw ConfigError("synthetic grid too small for the requested rings");
}

namespace {

std::string render(const ConfigField& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.17g", *p);
          return buf;
        } else {
          return std::to_string(*p);
        }
      },
      f.target);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("invalid value '" + value + "' for '" + key + "'");
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string RunConfig::to_ini() const {
  RunConfig copy = *this;
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << render(f) << '\n';
  }
  return os.str();
}

std::string RunConfig::hash() const {
  RunConfig copy = *this;
  copy.workdir.clear();
  return io::hex64(io::fnv1a(copy.to_ini()));
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& section) {
  for (auto& f : config_fields(cfg)) {
    if (f.key != key) continue;
    if (!section.empty() && f.section != section)
      throw ConfigError("key '" + key + "' belongs in section [" + f.section + "], found in [" + section + "]");
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1" || value == "yes") *p = true;
            else if (value == "false" || value == "0" || value == "no") *p = false;
            else throw ConfigError("invalid boolean '" + value + "' for '" + key + "'");
          } else if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else if constexpr (std::is_same_v<T, double>) {
            try {
              std::size_t used = 0;
              double v = std::stod(value, &used);
              if (used != value.size()) throw std::invalid_argument(value);
              *p = v;
            } catch (const std::exception&) {
              throw ConfigError("invalid number '" + value + "' for '" + key + "'");
            }
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        f.target);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    auto where = origin + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const auto& f : config_fields(cfg)) known = known || f.section == section;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside any [section]");
    try {
      set_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), section);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " not found");
  apply_config_text(cfg, io::read_text(path), path.string());
}

}  // namespace dst
