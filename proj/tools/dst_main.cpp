// SPDX-License-Identifier: Apache-2.0
//
// dst: command-line front end for the road representation pipeline.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dst/config.hpp"
#include "dst/errors.hpp"
#include "dst/gradcheck.hpp"
#include "dst/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

int gradcheck() {
  auto results = dst::run_gradient_suite();
  bool ok = true;
  std::printf("%-34s %-12s %s\n", "layer", "max_rel_err", "status");
  for (const auto& r : results) {
    std::printf("%-34s %-12.3e %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Road network representation learning pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, profile, workdir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "INI config file with [section] headers");
  app.add_option("--workdir", workdir, "artifact directory (falls back to DST_WORKDIR)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--profile", profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));

  // One override per RunConfig field; booleans may be given bare.
  dst::RunConfig scratch;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_opts;
  for (const auto& f : dst::config_fields(scratch)) {
    if (f.key == "workdir" || f.key == "seed" || f.key == "profile") continue;
    std::string names = "--" + flag_name(f.key);
    if (flag_name(f.key) != f.key) names += ",--" + f.key;
    auto* opt = app.add_option(names, overrides[f.key], f.help);
    if (std::holds_alternative<bool*>(f.target)) opt->expected(0, 1);
    opt->group("Config overrides");
    override_opts[f.key] = opt;
  }

  std::map<std::string, CLI::App*> stage_cmds;
  for (const auto& stage : dst::Pipeline::stages())
    stage_cmds[stage] = app.add_subcommand(stage, "run the " + stage + " stage");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run every stage in order, skipping up-to-date ones");
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (gradcheck_cmd->parsed()) return gradcheck();

  try {
    std::string base = profile;
    if (base.empty() && !config_path.empty()) {
      dst::RunConfig probe;
      dst::apply_config_file(probe, config_path);
      base = probe.profile;
    }
    if (base.empty()) base = "desk";
    auto cfg = dst::RunConfig::for_profile(base);
    if (!config_path.empty()) dst::apply_config_file(cfg, config_path);
    cfg.profile = base;
    for (const auto& [key, opt] : override_opts) {
      if (opt->count() == 0) continue;
      const auto& v = overrides[key];
      dst::set_config_value(cfg, key, v.empty() ? "true" : v);
    }
    if (seed) cfg.seed = *seed;
    if (!workdir.empty()) cfg.workdir = workdir;

    dst::Pipeline pipe(cfg);
    dst::WorkdirLock lock(pipe.workdir());
    if (pipeline_cmd->parsed()) {
      pipe.run_all();
    } else {
      for (const auto& [stage, cmd] : stage_cmds)
        if (cmd->parsed()) pipe.run(stage);
    }
    return kOk;
  } catch (const dst::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const dst::MissingArtifact& e) {
    std::cerr << e.what() << '\n';
    return kMissing;
  } catch (const dst::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
