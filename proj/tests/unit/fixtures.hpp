#pragma once

// Small configurations shared by the training tests.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ase/motion.hpp"
#include "ase/pretrain.hpp"
#include "ase/rng.hpp"

namespace ase::testing {

inline motion::MotionDataset tiny_dataset(std::uint64_t seed = 5) {
  Rng rng(seed);
  motion::ClipParams params;
  params.frames = 60;
  return motion::build_default_dataset(
      rng, 1, {motion::ClipKind::kIdle, motion::ClipKind::kWalk, motion::ClipKind::kTurn}, params);
}

inline pretrain::PretrainRunConfig tiny_pretrain(std::uint64_t seed = 3) {
  pretrain::PretrainRunConfig c = pretrain::PretrainRunConfig::desk();
  c.num_envs = 3;
  c.steps_per_iteration = 20;
  c.episode_length = 30;
  c.max_hold = 15;
  c.hyper.latent_dim = 3;
  c.disc_enc_batch = 32;
  c.diversity_batch = 16;
  c.policy_hidden = {16};
  c.value_hidden = {16};
  c.disc_hidden = {16};
  c.ppo.epochs = 2;
  c.ppo.minibatches = 2;
  c.seed = seed;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ase_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ase::testing
