#pragma once

// Skill-embedding pre-training: latent-scheduled rollouts, encoder and
// discriminator updates, PPO with the diversity penalty, metrics and
// resumable checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ase/asecore.hpp"
#include "ase/checkpoint.hpp"
#include "ase/env.hpp"
#include "ase/latent.hpp"
#include "ase/motion.hpp"
#include "ase/rl.hpp"
#include "ase/rng.hpp"

namespace ase::pretrain {

using nn::Matrix;

struct PretrainRunConfig {
  std::string preset = "desk";
  int num_envs = 64;
  int iterations = 200;
  int steps_per_iteration = 150;  // per env
  int episode_length = 300;       // T
  double fall_prob = 0.1;
  // Probability that a non-fallen episode starts from a random dataset frame
  // instead of the standing pose.
  double ref_init_prob = 0.5;
  int min_hold = 1;
  int max_hold = 150;
  core::PretrainHyper hyper;
  rl::PPOConfig ppo;
  double action_variance = 0.0025;
  int disc_enc_steps = 2;      // Adam steps per iteration for each of encoder and discriminator
  // Adam stepsize of the discriminator and encoder; slower than the policy so
  // the discriminator does not outrun it.
  double disc_enc_stepsize = 5e-5;
  int disc_enc_batch = 1024;   // K
  int diversity_batch = 512;   // states per minibatch used by the diversity penalty (0 = whole minibatch)
  std::vector<int> policy_hidden{256, 128};
  std::vector<int> value_hidden{256, 128};
  std::vector<int> disc_hidden{128, 128};
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0 = only the final checkpoint
  int threads = 1;
  env::EnvConfig env;

  int samples_per_iteration() const { return num_envs * steps_per_iteration; }
  void validate() const;

  static PretrainRunConfig desk();
  static PretrainRunConfig paper();
  static PretrainRunConfig preset_named(const std::string& name);  // throws ConfigError
};

nlohmann::json config_to_json(const PretrainRunConfig& config);
PretrainRunConfig config_from_json(const nlohmann::json& j);

struct EnvSlot {
  env::CharState state;
  latent::LatentSchedule schedule;
  int t = 0;  // step within the current episode
  Rng rng;
};

// Everything needed to continue training bit-exactly.
struct PretrainState {
  PretrainRunConfig config;
  motion::FeatureStats stats;
  rl::Network policy;
  rl::Network value;
  core::DiscEncNet<float> disc_enc;
  nn::AdamState<float> disc_adam;
  nn::AdamState<float> enc_adam;
  std::vector<EnvSlot> envs;
  Rng update_rng;
  int iteration = 0;  // completed iterations
  std::int64_t samples = 0;

  nn::GaussianHead action_head() const;
};

// RNG stream layout under the master seed: 0 network init, 1 updates,
// 1000 + i environment i.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kUpdateStream = 1;
inline constexpr std::uint64_t kEnvStreamBase = 1000;

PretrainState init_pretraining(const PretrainRunConfig& config, const motion::MotionDataset& dataset);

struct Rollouts {
  rl::TrajectoryBuffer buffer;  // env-major: env i occupies [i S, (i + 1) S)
  Matrix<float> next_obs;       // normalized s' per column
  double style_reward = 0.0;    // means over the batch
  double skill_reward = 0.0;
  double enc_score = 0.0;
};

// Steps every env `steps_per_iteration` times with the current policy and
// latent schedules; rewards come from the current discriminator/encoder.
Rollouts collect_rollouts(PretrainState& state, const motion::MotionDataset& dataset);

struct UpdateStats {
  double loss = 0.0;
  double accuracy = 0.0;  // discriminator only
  double score = 0.0;     // encoder only: mean mu^T z
};

UpdateStats update_encoder(core::DiscEncNet<float>& net, nn::AdamState<float>& adam, const Rollouts& rollouts,
                           int n_steps, int batch, double kappa, Rng& rng);

// Expert frames are given as normalized network features (one matrix per
// clip) so they are not recomputed every step.
UpdateStats update_discriminator(core::DiscEncNet<float>& net, nn::AdamState<float>& adam, const Rollouts& rollouts,
                                 const motion::MotionDataset& dataset, const std::vector<Matrix<float>>& expert,
                                 int n_steps, int batch, double w_gp, double clamp_eps, Rng& rng);

std::vector<Matrix<float>> expert_features(const motion::MotionDataset& dataset, const motion::FeatureStats& stats);

struct IterationMetrics {
  int iteration = 0;
  std::int64_t samples = 0;
  double style_reward = 0.0;
  double skill_reward = 0.0;
  double disc_acc = 0.0;
  double enc_score = 0.0;
  double div_loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_frac = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "iteration,samples,style_reward,skill_reward,disc_acc,enc_score,div_loss,policy_loss,value_loss,clip_frac";
std::string metrics_row(const IterationMetrics& m);

// collect -> encoder -> discriminator -> PPO (+ diversity). Throws
// TrainingFault naming the iteration on any non-finite quantity.
IterationMetrics run_iteration(PretrainState& state, const motion::MotionDataset& dataset,
                               const std::vector<Matrix<float>>& expert);

// Runs until state.iteration == iterations, appending to <out>/metrics.csv
// (rows past the state's iteration are dropped first, so a resumed run
// writes the same file as an uninterrupted one). Checkpoints go to
// <out>/checkpoints/iter_NNNNNN.ckpt every config.checkpoint_every
// iterations and <out>/llp.ckpt at the end.
std::vector<IterationMetrics> run_pretraining(PretrainState& state, const motion::MotionDataset& dataset,
                                              int iterations, const std::filesystem::path& out_dir);

ckpt::Checkpoint to_checkpoint(const PretrainState& state);
PretrainState from_checkpoint(const ckpt::Checkpoint& checkpoint);

// ---- Frozen low-level policy ---------------------------------------------

struct LowLevelPolicy {
  nn::MlpSpec policy_spec;
  nn::ParamSet<float> policy;
  core::DiscEncNet<float> disc_enc;
  motion::FeatureStats stats;
  env::EnvConfig env;
  double action_variance = 0.0025;
  int latent_dim = 0;

  Eigen::VectorXf features(const env::CharState& s) const;
  // Policy mean outputs (7 x B) for normalized observations and latents.
  Matrix<float> mean_actions(const Matrix<float>& obs, const Matrix<float>& latents) const;
  // Deterministic action (policy mean) for one state.
  env::Action act(const env::CharState& s, const latent::LatentSkill& z) const;
};

LowLevelPolicy low_level_policy(const PretrainState& state);
LowLevelPolicy load_low_level_policy(const std::filesystem::path& path);

}  // namespace ase::pretrain
