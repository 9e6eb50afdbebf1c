#pragma once

// Binary checkpoint container:
//   "ASECKPT1" | u64 LE manifest length | manifest JSON | float32 LE payload
// The manifest's "arrays" table lists {name, shape} in payload order and
// "total_floats" the payload length.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ase/nn.hpp"

namespace ase::ckpt {

inline constexpr char kMagic[] = "ASECKPT1";
inline constexpr int kVersion = 1;

struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<nn::ParamArray<float>> arrays;

  // Appends every array of `set` under "<prefix>/<name>".
  void add_set(const std::string& prefix, const nn::ParamSet<float>& set);
  // Rebuilds a set laid out like `like` from the arrays stored under `prefix`.
  // Throws ConfigError when an array is missing or has a different shape.
  nn::ParamSet<float> get_set(const std::string& prefix, const nn::ParamSet<float>& like) const;
  // All arrays stored under `prefix`, in stored order, with the prefix removed.
  nn::ParamSet<float> get_prefixed(const std::string& prefix) const;
  bool has_array(const std::string& name) const;
};

std::string encode(const Checkpoint& ckpt);
Checkpoint decode(const std::string& bytes);

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

nlohmann::json spec_to_json(const nn::MlpSpec& spec);
nn::MlpSpec spec_from_json(const nlohmann::json& j);

}  // namespace ase::ckpt
