// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `key = value` file with `[section]` headers,
// named profiles and command-line overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace dst {

static_assert(sizeof(std::size_t) == sizeof(std::uint64_t) && std::is_same_v<std::size_t, std::uint64_t>,
              "seed fields share the unsigned count slot");

struct RunConfig {
  // [paths]
  std::string roads, edges, trajectories, workdir;
  // [dims]
  std::size_t d = 32, d_t = 32, d_f = 8;
  // [training]
  std::size_t epochs_spatial = 300, epochs_temporal = 20;
  std::size_t batch_contrastive = 128, batch_traffic = 32;
  double lr = 1e-3;
  double lambda_reg = 10.0, lambda_cls = 1.0;
  double temperature = 0.1;
  // [hypergraph]
  std::size_t k_zones = 8;
  double radius_m = 200.0;
  // [ablation]
  bool no_mixhop = false, no_hg1 = false, no_hg2 = false, no_hg3 = false, no_tm = false;
  bool freeze_mixhop = false, raw_degrees = false, bidirectional = false;
  bool hyper_positives = false, no_projection = false;
  // [fusion]
  std::string fusion = "concat";
  // [run]
  std::uint64_t seed = 0;
  std::string profile = "desk";
  // [synth]
  std::size_t synth_rows = 8, synth_cols = 8, synth_rings = 1, synth_trajectories = 2000;
  // [preprocess]
  std::size_t bins = 10;
  bool lenient = false;
  std::int64_t tz_offset_hours = 0;
  // [eval]
  std::size_t eval_hidden = 32, eval_epochs = 100, eval_seeds = 5;
  // [transfer]
  std::string target_roads, target_edges, target_trajectories;
  std::uint64_t target_seed = 1;

  /// The "desk" or "paper" profile; throws ConfigError for any other name.
  static RunConfig for_profile(const std::string& name);

  /// Throws ConfigError on non-positive dims or epochs, bad fusion mode, etc.
  void validate() const;

  /// Canonical `[section]` rendering of every field.
  std::string to_ini() const;
  /// FNV-1a of to_ini() with the workdir blanked.
  std::string hash() const;
};

/// A single configurable field with its owning section.
struct ConfigField {
  std::string section, key;
  std::variant<std::size_t*, std::int64_t*, double*, bool*, std::string*> target;  // seeds are std::size_t-compatible
  std::string help;
};
std::vector<ConfigField> config_fields(RunConfig& cfg);

/// Sets `key` from its textual value; throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& section = "");

/// Applies a config file over `cfg`. Keys must appear under their own section.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");

}  // namespace dst
