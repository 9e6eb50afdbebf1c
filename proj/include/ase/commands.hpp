#pragma once

// The command-line subcommands as library calls. Every command reads a
// RunConfig and writes its outputs under config.out.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ase/gradcheck.hpp"
#include "ase/motion.hpp"
#include "ase/pretrain.hpp"
#include "ase/runconfig.hpp"
#include "ase/tasktrain.hpp"

namespace ase::cli {

// RNG stream (under the master seed) used to synthesize the dataset.
inline constexpr std::uint64_t kDataStream = 2;
// RNG stream used by the evaluation commands.
inline constexpr std::uint64_t kEvalStream = 3;

// data.path when set, else clips synthesized from the seed.
motion::MotionDataset make_dataset(const RunConfig& config);

// Writes <out>/dataset.json.
motion::MotionDataset gen_data(const RunConfig& config);

// Trains from scratch or from a checkpoint. Writes <out>/metrics.csv,
// <out>/llp.ckpt and <out>/dataset.json.
std::vector<pretrain::IterationMetrics> pretrain_command(const RunConfig& config,
                                                         const std::optional<std::filesystem::path>& resume = {});

// Writes <out>/task_metrics.csv and <out>/hlp.ckpt.
std::vector<tasktrain::TaskMetrics> train_task_command(const RunConfig& config, const std::filesystem::path& llp);

struct RolloutOptions {
  std::filesystem::path llp;
  std::optional<std::filesystem::path> hlp;  // task-driven latents
  std::optional<std::vector<double>> latent;  // fixed latent (normalized)
  int episodes = 1;
  int steps = 300;
};

// Writes <out>/rollout.csv. Without hlp or latent a prior latent is held for
// the whole episode.
void rollout_command(const RunConfig& config, const RolloutOptions& options);

// Each writes its CSV under <out> and returns the one-line summary.
std::string eval_coverage_command(const RunConfig& config, const std::filesystem::path& llp);
std::string eval_transitions_command(const RunConfig& config, const std::filesystem::path& llp);
std::string eval_recovery_command(const RunConfig& config, const std::filesystem::path& llp);

// Prints one line per family; returns true when all pass.
bool grad_check_command(int instances, std::uint64_t seed, bool inject_nan, std::ostream& out);

}  // namespace ase::cli
