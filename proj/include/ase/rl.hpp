#pragma once

// Policy-gradient core: GAE(lambda), TD(lambda) targets, the clipped PPO
// objective and value regression.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ase/nn.hpp"
#include "ase/rng.hpp"

namespace ase::rl {

using nn::Matrix;

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double td_lambda = 0.95;
  double clip = 0.2;
  int epochs = 5;
  int minibatches = 4;
  double stepsize = 3e-4;

  void validate() const;
};

// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1},
// delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t, with V_T = bootstrap.
std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda);

// A_t + V_t with A from compute_gae.
std::vector<double> td_lambda_targets(std::span<const double> rewards, std::span<const double> values,
                                      std::span<const std::uint8_t> dones, double bootstrap, double gamma,
                                      double lambda);

// Per-batch advantage normalization (mean 0, std 1, std floored at 1e-6).
std::vector<double> normalize_advantages(std::span<const double> advantages);

struct PolicyLoss {
  double loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::vector<double> grad_logp;  // d loss / d logp_new per sample
};

// -mean min(rho A, clip(rho, 1 - c, 1 + c) A), rho = exp(logp_new - logp_old).
PolicyLoss ppo_policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                           std::span<const double> advantages, double clip, bool normalize = true);

struct ValueLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d prediction
};

// 0.5 mean (prediction - target)^2.
ValueLoss value_loss(std::span<const double> predictions, std::span<const double> targets);

// One contiguous run of steps from a single environment.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  double bootstrap = 0.0;
};

// Flattened rollout storage. Columns of obs/cond/actions line up with the
// per-step vectors. Policy and value inputs are [obs ; cond].
struct TrajectoryBuffer {
  Matrix<float> obs;      // normalized observation features
  Matrix<float> cond;     // latent (pre-training) or goal features (tasks)
  Matrix<float> actions;  // sampled actions in policy-output space
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> logp;
  std::vector<std::uint8_t> dones;
  std::vector<Segment> segments;

  // Filled by compute_targets().
  std::vector<double> advantages;
  std::vector<double> value_targets;

  std::size_t size() const { return rewards.size(); }
  void validate() const;
};

void compute_targets(TrajectoryBuffer& buffer, const PPOConfig& config);

struct Network {
  nn::MlpSpec spec;
  nn::ParamSet<float> params;
  nn::AdamState<float> adam;
};

Matrix<float> network_input(const Matrix<float>& obs, const Matrix<float>& cond);

struct ExtraLoss {
  double loss = 0.0;
  nn::ParamSet<float> grads;
};

// Additional policy loss evaluated per minibatch on (obs, cond) columns.
using ExtraLossFn =
    std::function<ExtraLoss(const Matrix<float>& obs, const Matrix<float>& cond, const nn::ParamSet<float>& params)>;

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double extra_loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

// epochs x minibatches Adam steps on the policy (PPO + extra) and the value
// function (MSE against TD(lambda) targets). Requires compute_targets().
PPOStats ppo_update(Network& policy, Network& value, const nn::GaussianHead& head, const TrajectoryBuffer& buffer,
                    const PPOConfig& config, Rng& rng, const ExtraLossFn& extra = {});

}  // namespace ase::rl
