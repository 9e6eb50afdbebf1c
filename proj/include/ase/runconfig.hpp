#pragma once

// Run configuration shared by every command.
//
// File grammar, one entry per line:
//   key = value      dotted key, e.g. pretrain.hyper.beta = 0.5
//   # comment        blank lines and text after '#' are ignored
// Lists are comma separated (pretrain.policy_hidden = 256,128). Unknown keys,
// duplicate keys and values of the wrong type are rejected. The preset
// (desk or paper) supplies defaults; explicit keys override them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ase/env.hpp"
#include "ase/eval.hpp"
#include "ase/motion.hpp"
#include "ase/pretrain.hpp"
#include "ase/tasktrain.hpp"

namespace ase::cli {

struct DataConfig {
  int clips_per_kind = 1;
  std::vector<std::string> kinds;  // clip kinds to generate
  int frames = 120;
  double noise_amplitude = 0.02;
  std::string path;  // load this dataset file instead of generating one

  DataConfig();
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::string out = "out";
  int threads = 1;
  env::EnvConfig env;
  DataConfig data;
  pretrain::PretrainRunConfig pretrain;
  tasktrain::TaskTrainConfig task;
  eval::EvalConfig eval;

  static RunConfig preset_named(const std::string& name);  // throws ConfigError

  // Module configs with the run-wide seed, threads and env applied.
  pretrain::PretrainRunConfig pretrain_config() const;
  tasktrain::TaskTrainConfig task_config() const;
  eval::EvalConfig eval_config() const;
  void validate() const;
};

// Every settable key with its current value.
std::map<std::string, nlohmann::json> flatten(const RunConfig& config);

// Parses the file grammar into key -> raw value text.
std::vector<std::pair<std::string, std::string>> parse_entries(const std::string& text);

// Applies entries on top of the preset named by `preset_override`, else the
// file's `preset` key, else desk.
RunConfig parse_config(const std::string& text, const std::optional<std::string>& preset_override = {});
RunConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override = {});

// Applies one key = value override to an existing config.
void set_value(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace ase::cli
