#pragma once

// Task training: a high-level policy emits unnormalized latents for a frozen
// low-level policy and is trained with PPO on task reward plus the frozen
// discriminator's style reward.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ase/checkpoint.hpp"
#include "ase/env.hpp"
#include "ase/latent.hpp"
#include "ase/pretrain.hpp"
#include "ase/rl.hpp"
#include "ase/rng.hpp"

namespace ase::tasktrain {

using nn::Matrix;

// Desk high-level PPO: stepsize 1e-3. At 3e-4 the policy mean often stays
// near zero for 100 iterations and the normalized latent is noise.
inline rl::PPOConfig desk_ppo() {
  rl::PPOConfig p;
  p.stepsize = 1e-3;
  return p;
}

struct TaskTrainConfig {
  env::Task task = env::Task::kLocation;
  double w_task = 0.9;
  double w_style = 0.1;
  int hold_steps = 5;
  int iterations = 100;
  int num_envs = 64;
  int decisions_per_iteration = 60;  // per env
  int episode_length = 300;          // low-level steps
  int goal_resample_every = 150;     // Reach, Speed and Steering only
  double latent_variance = 0.01;
  std::vector<int> policy_hidden{128, 64};
  std::vector<int> value_hidden{128, 64};
  rl::PPOConfig ppo = desk_ppo();
  env::TaskParams task_params;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

nlohmann::json config_to_json(const TaskTrainConfig& config);
TaskTrainConfig config_from_json(const nlohmann::json& j);

// High-level policy input: [normalized character features ; goal features].
nn::MlpSpec hlp_spec(env::Task task, int latent_dim, const std::vector<int>& hidden);
nn::MlpSpec hlp_value_spec(env::Task task, int latent_dim, const std::vector<int>& hidden);

struct HlpSample {
  Eigen::VectorXf z_bar;  // unnormalized action
  latent::LatentSkill z;  // z_bar / |z_bar|
  double logp = 0.0;      // log density of z_bar
};

// Samples z_bar ~ N(mean, variance I) and normalizes it, redrawing the noise
// while |z_bar| is too small to normalize.
HlpSample hlp_act(const Eigen::VectorXf& mean, double variance, Rng& rng);
HlpSample hlp_act(const nn::MlpSpec& spec, const nn::ParamSet<float>& params, const Eigen::VectorXf& input,
                  double variance, Rng& rng);

// w_task r_task - w_style log(1 - D).
double combine_reward(double task_reward, double disc_prob, double w_task, double w_style);

double hlp_reward(const core::DiscEncNet<float>& disc, const motion::FeatureStats& stats, env::Task task,
                  const env::CharState& s, const env::Action& a, const env::CharState& s_next,
                  const env::TaskGoal& goal, double w_task, double w_style, const env::EnvConfig& env_config);

struct TaskEnvSlot {
  env::CharState state;
  env::TaskGoal goal;
  int t = 0;
  double episode_task_return = 0.0;
  Rng rng;
};

struct TaskState {
  TaskTrainConfig config;
  int latent_dim = 0;
  rl::Network policy;
  rl::Network value;
  std::vector<TaskEnvSlot> envs;
  Rng update_rng;
  int iteration = 0;
  double last_normalized_return = 0.0;

  nn::GaussianHead action_head() const;
  Eigen::VectorXf input(const pretrain::LowLevelPolicy& llp, const TaskEnvSlot& slot) const;
};

// Throws ConfigError when the task config is invalid.
TaskState init_task_training(const TaskTrainConfig& config, const pretrain::LowLevelPolicy& llp);

struct TaskMetrics {
  int iteration = 0;
  double task_reward_mean = 0.0;   // per low-level step
  double style_reward_mean = 0.0;  // per low-level step
  double normalized_return = 0.0;  // episode task return / episode_length over finished episodes
};

inline constexpr const char* kTaskMetricsHeader = "iteration,task_reward_mean,style_reward_mean,normalized_return";
std::string metrics_row(const TaskMetrics& m);

TaskMetrics run_task_iteration(TaskState& state, const pretrain::LowLevelPolicy& llp);

// Trains to config.iterations, writing <out>/task_metrics.csv and
// <out>/hlp.ckpt.
std::vector<TaskMetrics> run_task_training(TaskState& state, const pretrain::LowLevelPolicy& llp,
                                           const std::filesystem::path& out_dir);

ckpt::Checkpoint to_checkpoint(const TaskState& state);

// Deterministic high-level controller (policy mean, normalized).
struct HighLevelPolicy {
  env::Task task = env::Task::kLocation;
  int latent_dim = 0;
  int hold_steps = 5;
  nn::MlpSpec spec;
  nn::ParamSet<float> params;

  latent::LatentSkill choose(const pretrain::LowLevelPolicy& llp, const env::CharState& s,
                             const env::TaskGoal& goal, Rng& rng) const;
};

HighLevelPolicy high_level_policy(const TaskState& state);
// Throws ConfigError when the checkpoint's latent dimension differs from `latent_dim`.
HighLevelPolicy load_high_level_policy(const std::filesystem::path& path, int latent_dim);

// Picks a latent every hold window.
using LatentChooser =
    std::function<latent::LatentSkill(const env::CharState&, const env::TaskGoal&, Rng&)>;

LatentChooser hlp_chooser(const HighLevelPolicy& hlp, const pretrain::LowLevelPolicy& llp);
LatentChooser random_chooser(int latent_dim);

struct EpisodeResult {
  double task_return = 0.0;
  double final_distance = 0.0;  // root to target (Location, Strike); 0 otherwise
  int steps = 0;
};

// Runs standing-start episodes with the low-level policy mean.
std::vector<EpisodeResult> evaluate_task(const pretrain::LowLevelPolicy& llp, const LatentChooser& chooser,
                                         env::Task task, int episodes, int episode_length, int hold_steps,
                                         const env::TaskParams& params, Rng& rng, int threads = 1);

}  // namespace ase::tasktrain
