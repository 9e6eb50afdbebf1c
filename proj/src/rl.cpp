#include "ase/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ase/errors.hpp"

namespace ase::rl {

void PPOConfig::validate() const {
  if (!(gamma >= 0 && gamma <= 1) || !(gae_lambda >= 0 && gae_lambda <= 1) || !(td_lambda >= 0 && td_lambda <= 1))
    throw ConfigError("gamma and lambda must lie in [0, 1]");
  if (!(clip > 0)) throw ConfigError("PPO clip must be > 0");
  if (epochs < 1 || minibatches < 1) throw ConfigError("PPO epochs and minibatches must be >= 1");
  if (!(stepsize > 0)) throw ConfigError("stepsize must be > 0");
}

std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw ConfigError("compute_gae: length mismatch");
  std::vector<double> adv(n);
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * live * next_value - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    adv[i] = next_adv;
    next_value = values[i];
  }
  return adv;
}

std::vector<double> td_lambda_targets(std::span<const double> rewards, std::span<const double> values,
                                      std::span<const std::uint8_t> dones, double bootstrap, double gamma,
                                      double lambda) {
  std::vector<double> t = compute_gae(rewards, values, dones, bootstrap, gamma, lambda);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += values[i];
  return t;
}

std::vector<double> normalize_advantages(std::span<const double> advantages) {
  const auto n = static_cast<double>(advantages.size());
  if (advantages.empty()) return {};
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double std = std::max(std::sqrt(var / n), 1e-6);
  std::vector<double> out(advantages.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (advantages[i] - mean) / std;
  return out;
}

PolicyLoss ppo_policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                           std::span<const double> advantages, double clip, bool normalize) {
  const std::size_t n = logp_new.size();
  if (logp_old.size() != n || advantages.size() != n) throw ConfigError("ppo_policy_loss: length mismatch");
  if (n == 0) throw UsageError("ppo_policy_loss: empty batch");
  const std::vector<double> adv =
      normalize ? normalize_advantages(advantages) : std::vector<double>(advantages.begin(), advantages.end());
  PolicyLoss out;
  out.grad_logp.resize(n);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(logp_new[i] - logp_old[i]);
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double unclipped_obj = ratio * adv[i];
    const double clipped_obj = clipped_ratio * adv[i];
    out.mean_ratio += ratio;
    if (std::abs(ratio - 1.0) > clip) ++clipped;
    if (unclipped_obj <= clipped_obj) {
      out.loss -= unclipped_obj;
      out.grad_logp[i] = -unclipped_obj / static_cast<double>(n);
    } else {
      out.loss -= clipped_obj;
      out.grad_logp[i] = 0.0;
    }
  }
  out.loss /= static_cast<double>(n);
  out.mean_ratio /= static_cast<double>(n);
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return out;
}

ValueLoss value_loss(std::span<const double> predictions, std::span<const double> targets) {
  const std::size_t n = predictions.size();
  if (targets.size() != n) throw ConfigError("value_loss: length mismatch");
  if (n == 0) throw UsageError("value_loss: empty batch");
  ValueLoss out;
  out.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = predictions[i] - targets[i];
    out.loss += 0.5 * d * d;
    out.grad[i] = d / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

void TrajectoryBuffer::validate() const {
  const auto n = static_cast<Eigen::Index>(size());
  if (obs.cols() != n || cond.cols() != n || actions.cols() != n || values.size() != size() ||
      logp.size() != size() || dones.size() != size())
    throw ConfigError("trajectory buffer fields are not aligned");
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.begin != covered || s.end <= s.begin || s.end > size())
      throw ConfigError("trajectory buffer segments must tile the buffer");
    covered = s.end;
  }
  if (covered != size()) throw ConfigError("trajectory buffer segments must tile the buffer");
}

void compute_targets(TrajectoryBuffer& buffer, const PPOConfig& config) {
  buffer.validate();
  buffer.advantages.assign(buffer.size(), 0.0);
  buffer.value_targets.assign(buffer.size(), 0.0);
  for (const auto& seg : buffer.segments) {
    const std::size_t len = seg.end - seg.begin;
    std::span<const double> r(buffer.rewards.data() + seg.begin, len);
    std::span<const double> v(buffer.values.data() + seg.begin, len);
    std::span<const std::uint8_t> d(buffer.dones.data() + seg.begin, len);
    const auto adv = compute_gae(r, v, d, seg.bootstrap, config.gamma, config.gae_lambda);
    const auto tgt = td_lambda_targets(r, v, d, seg.bootstrap, config.gamma, config.td_lambda);
    std::copy(adv.begin(), adv.end(), buffer.advantages.begin() + static_cast<std::ptrdiff_t>(seg.begin));
    std::copy(tgt.begin(), tgt.end(), buffer.value_targets.begin() + static_cast<std::ptrdiff_t>(seg.begin));
  }
}

Matrix<float> network_input(const Matrix<float>& obs, const Matrix<float>& cond) {
  Matrix<float> x(obs.rows() + cond.rows(), obs.cols());
  x << obs, cond;
  return x;
}

namespace {

Matrix<float> gather(const Matrix<float>& m, std::span<const std::size_t> idx) {
  Matrix<float> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

std::vector<double> gather(const std::vector<double>& v, std::span<const std::size_t> idx) {
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

}  // namespace

PPOStats ppo_update(Network& policy, Network& value, const nn::GaussianHead& head, const TrajectoryBuffer& buffer,
                    const PPOConfig& config, Rng& rng, const ExtraLossFn& extra) {
  config.validate();
  buffer.validate();
  if (buffer.advantages.size() != buffer.size() || buffer.value_targets.size() != buffer.size())
    throw UsageError("ppo_update: compute_targets() has not been run on this buffer");
  const std::size_t n = buffer.size();
  if (n == 0) throw UsageError("ppo_update: empty buffer");

  std::vector<std::size_t> order(n);
  PPOStats stats;
  int updates = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int mb = 0; mb < config.minibatches; ++mb) {
      const std::size_t lo = n * static_cast<std::size_t>(mb) / static_cast<std::size_t>(config.minibatches);
      const std::size_t hi = n * static_cast<std::size_t>(mb + 1) / static_cast<std::size_t>(config.minibatches);
      if (hi <= lo) continue;
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Matrix<float> obs = gather(buffer.obs, idx);
      const Matrix<float> cond = gather(buffer.cond, idx);
      const Matrix<float> act = gather(buffer.actions, idx);
      const Matrix<float> input = network_input(obs, cond);

      // Policy.
      nn::MlpCache<float> pcache;
      const Matrix<float> mean = nn::mlp_forward(policy.spec, policy.params, input, &pcache);
      const Eigen::VectorXf logp_f = nn::gaussian_logprob_batch<float>(head, mean, act);
      std::vector<double> logp_new(logp_f.data(), logp_f.data() + logp_f.size());
      const auto logp_old = gather(buffer.logp, idx);
      const auto adv = gather(buffer.advantages, idx);
      const PolicyLoss pl = ppo_policy_loss(logp_new, logp_old, adv, config.clip);
      if (!std::isfinite(pl.loss))
        throw TrainingFault("PPO policy loss is non-finite (epoch " + std::to_string(epoch) + ", minibatch " +
                            std::to_string(mb) + ")");
      Matrix<float> dmean = nn::gaussian_logprob_grad_mean<float>(head, mean, act);
      for (Eigen::Index c = 0; c < dmean.cols(); ++c) dmean.col(c) *= static_cast<float>(pl.grad_logp[c]);
      nn::ParamSet<float> pgrads = nn::mlp_backward(policy.spec, policy.params, pcache, dmean).params;
      if (extra) {
        ExtraLoss el = extra(obs, cond, policy.params);
        if (!std::isfinite(el.loss)) throw TrainingFault("extra policy loss is non-finite");
        pgrads.add_scaled(el.grads, 1.0f);
        stats.extra_loss += el.loss;
      }
      nn::adam_step(policy.params, pgrads, policy.adam);

      // Value function.
      nn::MlpCache<float> vcache;
      const Matrix<float> pred = nn::mlp_forward(value.spec, value.params, input, &vcache);
      std::vector<double> pred_d(pred.data(), pred.data() + pred.size());
      const auto targets = gather(buffer.value_targets, idx);
      const ValueLoss vl = value_loss(pred_d, targets);
      if (!std::isfinite(vl.loss)) throw TrainingFault("value loss is non-finite");
      Matrix<float> dv(1, pred.cols());
      for (Eigen::Index c = 0; c < dv.cols(); ++c) dv(0, c) = static_cast<float>(vl.grad[c]);
      nn::adam_step(value.params, nn::mlp_backward(value.spec, value.params, vcache, dv).params, value.adam);

      stats.policy_loss += pl.loss;
      stats.value_loss += vl.loss;
      stats.mean_ratio += pl.mean_ratio;
      stats.clip_fraction += pl.clip_fraction;
      ++updates;
    }
  }
  if (updates > 0) {
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.extra_loss /= updates;
    stats.mean_ratio /= updates;
    stats.clip_fraction /= updates;
  }
  return stats;
}

}  // namespace ase::rl
