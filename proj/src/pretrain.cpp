#include "ase/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ase/config_json.hpp"
#include "ase/errors.hpp"
#include "ase/parallel.hpp"

namespace ase::pretrain {

namespace {

void check_hidden(const std::vector<int>& dims, const char* what) {
  if (dims.empty()) throw ConfigError(std::string(what) + " needs at least one hidden layer");
  for (int d : dims)
    if (d < 1) throw ConfigError(std::string(what) + " hidden sizes must be >= 1");
}

nn::MlpSpec policy_spec(const PretrainRunConfig& c) {
  return {env::kObsDim + c.hyper.latent_dim, c.policy_hidden, env::kActionDim, nn::OutputActivation::kLinear};
}

nn::MlpSpec value_spec(const PretrainRunConfig& c) {
  return {env::kObsDim + c.hyper.latent_dim, c.value_hidden, 1, nn::OutputActivation::kLinear};
}

Eigen::VectorXf features_of(const motion::FeatureStats& stats, const env::CharState& s, const env::EnvConfig& cfg) {
  return motion::network_features(stats, env::observe(s, cfg));
}

void start_episode(EnvSlot& slot, const PretrainRunConfig& c, const motion::MotionDataset& dataset) {
  slot.state = env::reset(c.env, slot.rng, c.fall_prob);
  if (!env::is_fallen(slot.state, c.env) && c.ref_init_prob > 0.0 && slot.rng.bernoulli(c.ref_init_prob)) {
    int f = slot.rng.uniform_int(0, static_cast<int>(dataset.total_frames()) - 1);
    std::size_t clip = 0;
    while (f >= static_cast<int>(dataset.clips[clip].frames.size())) f -= static_cast<int>(dataset.clips[clip++].frames.size());
    slot.state = env::state_from_observation(dataset.clips[clip].frames[static_cast<std::size_t>(f)], slot.state.heading);
  }
  slot.schedule = latent::make_schedule(slot.rng, c.episode_length, c.min_hold, c.max_hold, c.hyper.latent_dim);
  slot.t = 0;
}

nlohmann::json adam_to_json(const nn::AdamState<float>& a) {
  return {{"stepsize", a.config.stepsize},
          {"beta1", a.config.beta1},
          {"beta2", a.config.beta2},
          {"epsilon", a.config.epsilon},
          {"step_count", a.step_count}};
}

nn::AdamState<float> adam_from(const ckpt::Checkpoint& ck, const std::string& name, const nn::ParamSet<float>& like) {
  const auto& j = ck.manifest.at("adam").at(name);
  nn::AdamState<float> a;
  a.config.stepsize = j.at("stepsize").get<double>();
  a.config.beta1 = j.at("beta1").get<double>();
  a.config.beta2 = j.at("beta2").get<double>();
  a.config.epsilon = j.at("epsilon").get<double>();
  a.step_count = j.at("step_count").get<std::int64_t>();
  a.first_moment = ck.get_set("adam." + name + ".m", like);
  a.second_moment = ck.get_set("adam." + name + ".v", like);
  return a;
}

nlohmann::json state_to_json(const env::CharState& s) {
  return {{"position", {s.position.x(), s.position.y()}},
          {"heading", s.heading},
          {"velocity", {s.velocity.x(), s.velocity.y()}},
          {"ang_vel", s.ang_vel},
          {"height", s.height},
          {"upright", s.upright},
          {"joints", {s.joint1, s.joint2}},
          {"joint_vels", {s.joint1_vel, s.joint2_vel}}};
}

env::CharState state_from_json(const nlohmann::json& j) {
  env::CharState s;
  const auto p = j.at("position").get<std::vector<double>>();
  const auto v = j.at("velocity").get<std::vector<double>>();
  const auto q = j.at("joints").get<std::vector<double>>();
  const auto qd = j.at("joint_vels").get<std::vector<double>>();
  if (p.size() != 2 || v.size() != 2 || q.size() != 2 || qd.size() != 2)
    throw ConfigError("malformed character state in checkpoint");
  s.position = {p[0], p[1]};
  s.heading = j.at("heading").get<double>();
  s.velocity = {v[0], v[1]};
  s.ang_vel = j.at("ang_vel").get<double>();
  s.height = j.at("height").get<double>();
  s.upright = j.at("upright").get<double>();
  s.joint1 = q[0];
  s.joint2 = q[1];
  s.joint1_vel = qd[0];
  s.joint2_vel = qd[1];
  return s;
}

nlohmann::json schedule_to_json(const latent::LatentSchedule& s) {
  nlohmann::json skills = nlohmann::json::array();
  for (const auto& z : s.skills) skills.push_back(std::vector<float>(z.z().data(), z.z().data() + z.dim()));
  return {{"min_hold", s.min_hold}, {"max_hold", s.max_hold}, {"index", s.index}, {"skills", std::move(skills)}};
}

latent::LatentSchedule schedule_from_json(const nlohmann::json& j) {
  latent::LatentSchedule s;
  s.min_hold = j.at("min_hold").get<int>();
  s.max_hold = j.at("max_hold").get<int>();
  s.index = j.at("index").get<std::vector<int>>();
  for (const auto& jz : j.at("skills")) {
    const auto v = jz.get<std::vector<float>>();
    s.skills.push_back(latent::LatentSkill::from_stored(Eigen::Map<const Eigen::VectorXf>(v.data(), v.size())));
  }
  for (int id : s.index)
    if (id < 0 || id >= static_cast<int>(s.skills.size())) throw ConfigError("latent schedule index out of range");
  return s;
}

nlohmann::json stats_to_json(const motion::FeatureStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

motion::FeatureStats stats_from_json(const nlohmann::json& j) {
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("std").get<std::vector<double>>();
  if (m.size() != env::kObsDim || s.size() != env::kObsDim) throw ConfigError("malformed feature stats in checkpoint");
  motion::FeatureStats out;
  out.mean = Eigen::Map<const env::Observation>(m.data());
  out.std = Eigen::Map<const env::Observation>(s.data());
  return out;
}

Matrix<float> gather_cols(const Matrix<float>& m, const std::vector<Eigen::Index>& idx) {
  Matrix<float> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void PretrainRunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper");
  if (num_envs < 1) throw ConfigError("pretrain.num_envs must be >= 1");
  if (iterations < 0) throw ConfigError("pretrain.iterations must be >= 0");
  if (steps_per_iteration < 1) throw ConfigError("pretrain.steps_per_iteration must be >= 1");
  if (episode_length < 1) throw ConfigError("pretrain.episode_length must be >= 1");
  if (!(fall_prob >= 0.0 && fall_prob <= 1.0)) throw ConfigError("pretrain.fall_prob must lie in [0, 1]");
  if (!(ref_init_prob >= 0.0 && ref_init_prob <= 1.0)) throw ConfigError("pretrain.ref_init_prob must lie in [0, 1]");
  if (!(1 <= min_hold && min_hold <= max_hold && max_hold <= episode_length))
    throw ConfigError("pretrain hold bounds require 1 <= min_hold <= max_hold <= episode_length");
  hyper.validate();
  ppo.validate();
  if (!(action_variance > 0)) throw ConfigError("pretrain.action_variance must be > 0");
  if (!(disc_enc_stepsize > 0)) throw ConfigError("pretrain.disc_enc_stepsize must be > 0");
  if (disc_enc_steps < 0 || disc_enc_batch < 1) throw ConfigError("disc/enc steps must be >= 0 and batch >= 1");
  if (diversity_batch < 0) throw ConfigError("pretrain.diversity_batch must be >= 0");
  check_hidden(policy_hidden, "policy");
  check_hidden(value_hidden, "value");
  check_hidden(disc_hidden, "disc_enc");
  if (checkpoint_every < 0) throw ConfigError("pretrain.checkpoint_every must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  env.validate();
}

PretrainRunConfig PretrainRunConfig::desk() {
  PretrainRunConfig c;
  c.hyper.w_gp = 0.2;
  return c;
}

PretrainRunConfig PretrainRunConfig::paper() {
  PretrainRunConfig c;
  c.preset = "paper";
  c.num_envs = 4096;
  c.steps_per_iteration = 32;  // 4096 x 32 = 131072 samples per iteration
  c.hyper.latent_dim = 64;
  c.ppo.stepsize = 2e-5;
  c.disc_enc_stepsize = 2e-5;
  c.ppo.minibatches = 8;  // 131072 / 16384
  c.disc_enc_batch = 4096;
  c.diversity_batch = 0;
  c.policy_hidden = {1024, 1024, 512};
  c.value_hidden = {1024, 1024, 512};
  c.disc_hidden = {1024, 1024, 512};
  return c;
}

PretrainRunConfig PretrainRunConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

nlohmann::json config_to_json(const PretrainRunConfig& c) {
  return {{"preset", c.preset},
          {"num_envs", c.num_envs},
          {"iterations", c.iterations},
          {"steps_per_iteration", c.steps_per_iteration},
          {"episode_length", c.episode_length},
          {"fall_prob", c.fall_prob},
          {"ref_init_prob", c.ref_init_prob},
          {"min_hold", c.min_hold},
          {"max_hold", c.max_hold},
          {"hyper", c.hyper},
          {"ppo", c.ppo},
          {"action_variance", c.action_variance},
          {"disc_enc_steps", c.disc_enc_steps},
          {"disc_enc_stepsize", c.disc_enc_stepsize},
          {"disc_enc_batch", c.disc_enc_batch},
          {"diversity_batch", c.diversity_batch},
          {"policy_hidden", c.policy_hidden},
          {"value_hidden", c.value_hidden},
          {"disc_hidden", c.disc_hidden},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"threads", c.threads},
          {"env", c.env}};
}

PretrainRunConfig config_from_json(const nlohmann::json& j) {
  PretrainRunConfig c;
  j.at("preset").get_to(c.preset);
  j.at("num_envs").get_to(c.num_envs);
  j.at("iterations").get_to(c.iterations);
  j.at("steps_per_iteration").get_to(c.steps_per_iteration);
  j.at("episode_length").get_to(c.episode_length);
  j.at("fall_prob").get_to(c.fall_prob);
  j.at("ref_init_prob").get_to(c.ref_init_prob);
  j.at("min_hold").get_to(c.min_hold);
  j.at("max_hold").get_to(c.max_hold);
  j.at("hyper").get_to(c.hyper);
  j.at("ppo").get_to(c.ppo);
  j.at("action_variance").get_to(c.action_variance);
  j.at("disc_enc_steps").get_to(c.disc_enc_steps);
  j.at("disc_enc_stepsize").get_to(c.disc_enc_stepsize);
  j.at("disc_enc_batch").get_to(c.disc_enc_batch);
  j.at("diversity_batch").get_to(c.diversity_batch);
  j.at("policy_hidden").get_to(c.policy_hidden);
  j.at("value_hidden").get_to(c.value_hidden);
  j.at("disc_hidden").get_to(c.disc_hidden);
  j.at("seed").get_to(c.seed);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("threads").get_to(c.threads);
  j.at("env").get_to(c.env);
  c.validate();
  return c;
}

nn::GaussianHead PretrainState::action_head() const {
  return nn::GaussianHead::isotropic(env::kActionDim, config.action_variance);
}

PretrainState init_pretraining(const PretrainRunConfig& config, const motion::MotionDataset& dataset) {
  config.validate();
  PretrainState st;
  st.config = config;
  st.stats = dataset.stats;
  Rng init = Rng::stream(config.seed, kInitStream);
  const nn::AdamConfig adam{config.ppo.stepsize};

  st.policy.spec = policy_spec(config);
  st.policy.params = nn::init_mlp<float>(st.policy.spec, "policy", init, 0.01);
  st.policy.adam = nn::make_adam(st.policy.params, adam);
  st.value.spec = value_spec(config);
  st.value.params = nn::init_mlp<float>(st.value.spec, "value", init);
  st.value.adam = nn::make_adam(st.value.params, adam);
  st.disc_enc = core::make_disc_enc<float>(env::kObsDim, config.hyper.latent_dim, config.disc_hidden, init);
  const nn::AdamConfig disc_adam{config.disc_enc_stepsize};
  st.disc_adam = nn::make_adam(st.disc_enc.params, disc_adam);
  st.enc_adam = nn::make_adam(st.disc_enc.params, disc_adam);

  st.update_rng = Rng::stream(config.seed, kUpdateStream);
  st.envs.resize(static_cast<std::size_t>(config.num_envs));
  for (std::size_t i = 0; i < st.envs.size(); ++i) {
    st.envs[i].rng = Rng::stream(config.seed, kEnvStreamBase + i);
    start_episode(st.envs[i], config, dataset);
  }
  return st;
}

Rollouts collect_rollouts(PretrainState& st, const motion::MotionDataset& dataset) {
  const PretrainRunConfig& c = st.config;
  const int n_env = c.num_envs;
  const int steps = c.steps_per_iteration;
  const int d = c.hyper.latent_dim;
  const auto total = static_cast<Eigen::Index>(n_env) * steps;
  const nn::GaussianHead head = st.action_head();
  const double sd = std::sqrt(c.action_variance);

  Rollouts out;
  rl::TrajectoryBuffer& b = out.buffer;
  b.obs.resize(env::kObsDim, total);
  b.cond.resize(d, total);
  b.actions.resize(env::kActionDim, total);
  b.rewards.assign(static_cast<std::size_t>(total), 0.0);
  b.values.assign(static_cast<std::size_t>(total), 0.0);
  b.logp.assign(static_cast<std::size_t>(total), 0.0);
  b.dones.assign(static_cast<std::size_t>(total), 0);
  out.next_obs.resize(env::kObsDim, total);

  Matrix<float> obs(env::kObsDim, n_env);
  for (int i = 0; i < n_env; ++i) obs.col(i) = features_of(st.stats, st.envs[i].state, c.env);
  Matrix<float> z(d, n_env);
  Matrix<float> next(env::kObsDim, n_env);
  Matrix<float> act(env::kActionDim, n_env);

  double style_sum = 0.0;
  double skill_sum = 0.0;
  double score_sum = 0.0;
  for (int k = 0; k < steps; ++k) {
    for (int i = 0; i < n_env; ++i) z.col(i) = st.envs[i].schedule.at(st.envs[i].t).z();
    const Matrix<float> input = core::policy_input(obs, z);
    const Matrix<float> mean = nn::mlp_forward(st.policy.spec, st.policy.params, input);
    const Matrix<float> vals = nn::mlp_forward(st.value.spec, st.value.params, input);

    parallel_for(static_cast<std::size_t>(n_env), c.threads, [&](std::size_t ui) {
      const auto i = static_cast<Eigen::Index>(ui);
      EnvSlot& slot = st.envs[ui];
      for (int j = 0; j < env::kActionDim; ++j)
        act(j, i) = mean(j, i) + static_cast<float>(sd * slot.rng.normal());
      slot.state = env::step(slot.state, env::decode_action(act.col(i)), c.env);
      next.col(i) = features_of(st.stats, slot.state, c.env);
    });

    const Eigen::VectorXf logp = nn::gaussian_logprob_batch<float>(head, mean, act);
    const core::RewardBatch rew =
        core::pretrain_rewards(st.disc_enc, core::transition_input<float>(obs, next), z, c.hyper);

    // Time-limit truncation: fold gamma V(s_T) into the last reward and
    // close the episode so every segment needs only one bootstrap.
    std::vector<Eigen::Index> timed_out;
    for (int i = 0; i < n_env; ++i)
      if (++st.envs[i].t == c.episode_length) timed_out.push_back(i);
    std::vector<double> tail_value(static_cast<std::size_t>(n_env), 0.0);
    if (!timed_out.empty()) {
      const Matrix<float> v_next = nn::mlp_forward(
          st.value.spec, st.value.params, core::policy_input(gather_cols(next, timed_out), gather_cols(z, timed_out)));
      for (std::size_t q = 0; q < timed_out.size(); ++q)
        tail_value[static_cast<std::size_t>(timed_out[q])] = v_next(0, static_cast<Eigen::Index>(q));
    }

    for (int i = 0; i < n_env; ++i) {
      const auto col = static_cast<Eigen::Index>(i) * steps + k;
      const auto ucol = static_cast<std::size_t>(col);
      b.obs.col(col) = obs.col(i);
      b.cond.col(col) = z.col(i);
      b.actions.col(col) = act.col(i);
      out.next_obs.col(col) = next.col(i);
      b.values[ucol] = vals(0, i);
      b.logp[ucol] = logp(i);
      b.rewards[ucol] = rew.total[static_cast<std::size_t>(i)];
      style_sum += rew.style[static_cast<std::size_t>(i)];
      skill_sum += rew.skill[static_cast<std::size_t>(i)];
      score_sum += rew.enc_score[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index i : timed_out) {
      const auto ucol = static_cast<std::size_t>(i * steps + k);
      b.rewards[ucol] += c.ppo.gamma * tail_value[static_cast<std::size_t>(i)];
      b.dones[ucol] = 1;
      start_episode(st.envs[static_cast<std::size_t>(i)], c, dataset);
      next.col(i) = features_of(st.stats, st.envs[static_cast<std::size_t>(i)].state, c.env);
    }
    obs = next;
  }

  for (int i = 0; i < n_env; ++i) z.col(i) = st.envs[i].schedule.at(st.envs[i].t).z();
  const Matrix<float> boot = nn::mlp_forward(st.value.spec, st.value.params, core::policy_input(obs, z));
  for (int i = 0; i < n_env; ++i) {
    const auto begin = static_cast<std::size_t>(i) * static_cast<std::size_t>(steps);
    b.segments.push_back({begin, begin + static_cast<std::size_t>(steps), static_cast<double>(boot(0, i))});
  }

  const auto n = static_cast<double>(total);
  out.style_reward = style_sum / n;
  out.skill_reward = skill_sum / n;
  out.enc_score = score_sum / n;
  return out;
}

UpdateStats update_encoder(core::DiscEncNet<float>& net, nn::AdamState<float>& adam, const Rollouts& rollouts,
                           int n_steps, int batch, double kappa, Rng& rng) {
  UpdateStats stats;
  const auto n = static_cast<int>(rollouts.buffer.obs.cols());
  if (n_steps <= 0) return stats;
  if (n == 0) throw UsageError("update_encoder: empty rollout buffer");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
  for (int s = 0; s < n_steps; ++s) {
    for (auto& i : idx) i = rng.uniform_int(0, n - 1);
    const Matrix<float> input =
        core::transition_input<float>(gather_cols(rollouts.buffer.obs, idx), gather_cols(rollouts.next_obs, idx));
    const core::EncoderLoss<float> loss =
        core::encoder_loss_and_grads(net, input, gather_cols(rollouts.buffer.cond, idx), kappa);
    nn::adam_step(net.params, loss.grads, adam);
    stats.loss += loss.loss;
    stats.score += loss.score;
  }
  stats.loss /= n_steps;
  stats.score /= n_steps;
  return stats;
}

std::vector<Matrix<float>> expert_features(const motion::MotionDataset& dataset, const motion::FeatureStats& stats) {
  std::vector<Matrix<float>> out;
  for (const auto& clip : dataset.clips) {
    Matrix<float> m(env::kObsDim, static_cast<Eigen::Index>(clip.frames.size()));
    for (std::size_t f = 0; f < clip.frames.size(); ++f)
      m.col(static_cast<Eigen::Index>(f)) = motion::network_features(stats, clip.frames[f]);
    out.push_back(std::move(m));
  }
  return out;
}

UpdateStats update_discriminator(core::DiscEncNet<float>& net, nn::AdamState<float>& adam, const Rollouts& rollouts,
                                 const motion::MotionDataset& dataset, const std::vector<Matrix<float>>& expert,
                                 int n_steps, int batch, double w_gp, double clamp_eps, Rng& rng) {
  UpdateStats stats;
  const auto n = static_cast<int>(rollouts.buffer.obs.cols());
  if (n_steps <= 0) return stats;
  if (n == 0) throw UsageError("update_discriminator: empty rollout buffer");
  if (expert.size() != dataset.clips.size()) throw ConfigError("expert features do not match the dataset");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
  Matrix<float> real(2 * env::kObsDim, batch);
  for (int s = 0; s < n_steps; ++s) {
    for (auto& i : idx) i = rng.uniform_int(0, n - 1);
    const Matrix<float> fake =
        core::transition_input<float>(gather_cols(rollouts.buffer.obs, idx), gather_cols(rollouts.next_obs, idx));
    const auto pairs = motion::sample_expert_transitions(dataset, rng, batch);
    for (int k = 0; k < batch; ++k) {
      const auto& m = expert[static_cast<std::size_t>(pairs[k].clip)];
      real.col(k) << m.col(pairs[k].frame), m.col(pairs[k].frame + 1);
    }
    const core::DiscLoss<float> loss = core::disc_loss_and_grads(net, real, fake, w_gp, clamp_eps);
    nn::adam_step(net.params, loss.grads, adam);
    stats.loss += loss.loss;
    stats.accuracy += loss.accuracy;
  }
  stats.loss /= n_steps;
  stats.accuracy /= n_steps;
  return stats;
}

std::string metrics_row(const IterationMetrics& m) {
  std::ostringstream out;
  out << m.iteration << ',' << m.samples << ',' << fmt(m.style_reward) << ',' << fmt(m.skill_reward) << ','
      << fmt(m.disc_acc) << ',' << fmt(m.enc_score) << ',' << fmt(m.div_loss) << ',' << fmt(m.policy_loss) << ','
      << fmt(m.value_loss) << ',' << fmt(m.clip_frac);
  return out.str();
}

IterationMetrics run_iteration(PretrainState& st, const motion::MotionDataset& dataset,
                               const std::vector<Matrix<float>>& expert) {
  const PretrainRunConfig& c = st.config;
  const int next_iteration = st.iteration + 1;
  try {
    Rollouts ro = collect_rollouts(st, dataset);
    update_encoder(st.disc_enc, st.enc_adam, ro, c.disc_enc_steps, c.disc_enc_batch, c.hyper.kappa, st.update_rng);
    const UpdateStats disc = update_discriminator(st.disc_enc, st.disc_adam, ro, dataset, expert, c.disc_enc_steps,
                                                  c.disc_enc_batch, c.hyper.w_gp, c.hyper.clamp_eps, st.update_rng);
    rl::compute_targets(ro.buffer, c.ppo);

    const nn::GaussianHead head = st.action_head();
    rl::ExtraLossFn extra;
    if (c.hyper.w_div > 0) {
      extra = [&](const Matrix<float>& obs, const Matrix<float>&, const nn::ParamSet<float>& params) {
        const Eigen::Index cols =
            c.diversity_batch > 0 ? std::min<Eigen::Index>(obs.cols(), c.diversity_batch) : obs.cols();
        const core::DiversityLoss<float> div = core::diversity_loss_and_grads<float>(
            st.policy.spec, params, head, obs.leftCols(cols), c.hyper.latent_dim, st.update_rng, c.hyper.w_div);
        return rl::ExtraLoss{div.loss, div.grads};
      };
    }
    const rl::PPOStats ppo = rl::ppo_update(st.policy, st.value, head, ro.buffer, c.ppo, st.update_rng, extra);

    st.iteration = next_iteration;
    st.samples += static_cast<std::int64_t>(ro.buffer.size());
    IterationMetrics m;
    m.iteration = st.iteration;
    m.samples = st.samples;
    m.style_reward = ro.style_reward;
    m.skill_reward = ro.skill_reward;
    m.disc_acc = disc.accuracy;
    m.enc_score = ro.enc_score;
    m.div_loss = ppo.extra_loss;
    m.policy_loss = ppo.policy_loss;
    m.value_loss = ppo.value_loss;
    m.clip_frac = ppo.clip_fraction;
    return m;
  } catch (const TrainingFault& e) {
    throw TrainingFault("pre-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  } catch (const OptimizationError& e) {
    throw TrainingFault("pre-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  } catch (const SimulationFault& e) {
    throw TrainingFault("pre-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  }
}

std::vector<IterationMetrics> run_pretraining(PretrainState& st, const motion::MotionDataset& dataset,
                                              int iterations, const std::filesystem::path& out_dir) {
  if (!(dataset.stats.mean == st.stats.mean && dataset.stats.std == st.stats.std))
    throw ConfigError("dataset feature statistics differ from the ones this run was started with");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path metrics_path = out_dir / "metrics.csv";

  std::vector<std::string> kept;
  if (st.iteration > 0) {
    std::ifstream in(metrics_path);
    std::string line;
    std::getline(in, line);
    while (static_cast<int>(kept.size()) < st.iteration && std::getline(in, line)) kept.push_back(line);
  }
  std::ofstream csv(metrics_path, std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + metrics_path.string());
  csv << kMetricsHeader << '\n';
  for (const auto& line : kept) csv << line << '\n';
  csv.flush();

  const auto expert = expert_features(dataset, st.stats);
  std::vector<IterationMetrics> rows;
  while (st.iteration < iterations) {
    IterationMetrics m = run_iteration(st, dataset, expert);
    csv << metrics_row(m) << '\n';
    csv.flush();
    rows.push_back(m);
    if (st.config.checkpoint_every > 0 && st.iteration % st.config.checkpoint_every == 0) {
      std::filesystem::create_directories(out_dir / "checkpoints");
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%06d.ckpt", st.iteration);
      ckpt::save(to_checkpoint(st), out_dir / "checkpoints" / name);
    }
  }
  ckpt::save(to_checkpoint(st), out_dir / "llp.ckpt");
  return rows;
}

ckpt::Checkpoint to_checkpoint(const PretrainState& st) {
  ckpt::Checkpoint ck;
  auto& m = ck.manifest;
  m["kind"] = "pretrain";
  m["latent_dim"] = st.config.hyper.latent_dim;
  m["config"] = config_to_json(st.config);
  m["nets"] = {{"policy", ckpt::spec_to_json(st.policy.spec)},
               {"value", ckpt::spec_to_json(st.value.spec)},
               {"disc_enc", ckpt::spec_to_json(st.disc_enc.spec)}};
  m["feature_stats"] = stats_to_json(st.stats);
  m["rng"] = {{"update", st.update_rng.serialize()}};
  m["iteration"] = st.iteration;
  m["samples"] = st.samples;
  m["adam"] = {{"policy", adam_to_json(st.policy.adam)},
               {"value", adam_to_json(st.value.adam)},
               {"disc", adam_to_json(st.disc_adam)},
               {"enc", adam_to_json(st.enc_adam)}};
  nlohmann::json envs = nlohmann::json::array();
  for (const auto& e : st.envs)
    envs.push_back({{"state", state_to_json(e.state)},
                    {"t", e.t},
                    {"rng", e.rng.serialize()},
                    {"schedule", schedule_to_json(e.schedule)}});
  m["runtime"] = {{"envs", std::move(envs)}};

  ck.add_set("policy", st.policy.params);
  ck.add_set("value", st.value.params);
  ck.add_set("disc_enc", st.disc_enc.params);
  ck.add_set("adam.policy.m", st.policy.adam.first_moment);
  ck.add_set("adam.policy.v", st.policy.adam.second_moment);
  ck.add_set("adam.value.m", st.value.adam.first_moment);
  ck.add_set("adam.value.v", st.value.adam.second_moment);
  ck.add_set("adam.disc.m", st.disc_adam.first_moment);
  ck.add_set("adam.disc.v", st.disc_adam.second_moment);
  ck.add_set("adam.enc.m", st.enc_adam.first_moment);
  ck.add_set("adam.enc.v", st.enc_adam.second_moment);
  return ck;
}

PretrainState from_checkpoint(const ckpt::Checkpoint& ck) {
  const auto& m = ck.manifest;
  if (m.value("kind", "") != "pretrain") throw ConfigError("checkpoint is not a pre-training checkpoint");
  try {
    PretrainState st;
    st.config = config_from_json(m.at("config"));
    if (m.at("latent_dim").get<int>() != st.config.hyper.latent_dim)
      throw ConfigError("checkpoint latent_dim disagrees with its config");
    st.stats = stats_from_json(m.at("feature_stats"));
    st.policy.spec = ckpt::spec_from_json(m.at("nets").at("policy"));
    st.value.spec = ckpt::spec_from_json(m.at("nets").at("value"));
    st.disc_enc.spec = ckpt::spec_from_json(m.at("nets").at("disc_enc"));
    if (!(st.policy.spec == policy_spec(st.config)) || !(st.value.spec == value_spec(st.config)) ||
        !(st.disc_enc.spec == core::disc_enc_spec(env::kObsDim, st.config.hyper.latent_dim, st.config.disc_hidden)))
      throw ConfigError("checkpoint network specs disagree with its config");
    st.policy.params = ck.get_prefixed("policy");
    st.value.params = ck.get_prefixed("value");
    st.disc_enc.params = ck.get_prefixed("disc_enc");
    nn::check_mlp_params(st.policy.spec, st.policy.params);
    nn::check_mlp_params(st.value.spec, st.value.params);
    nn::check_mlp_params(st.disc_enc.spec, st.disc_enc.params);
    st.policy.adam = adam_from(ck, "policy", st.policy.params);
    st.value.adam = adam_from(ck, "value", st.value.params);
    st.disc_adam = adam_from(ck, "disc", st.disc_enc.params);
    st.enc_adam = adam_from(ck, "enc", st.disc_enc.params);
    st.update_rng = Rng::deserialize(m.at("rng").at("update").get<std::string>());
    st.iteration = m.at("iteration").get<int>();
    st.samples = m.at("samples").get<std::int64_t>();
    for (const auto& je : m.at("runtime").at("envs")) {
      EnvSlot slot;
      slot.state = state_from_json(je.at("state"));
      slot.t = je.at("t").get<int>();
      slot.rng = Rng::deserialize(je.at("rng").get<std::string>());
      slot.schedule = schedule_from_json(je.at("schedule"));
      if (slot.schedule.length() != st.config.episode_length || slot.t < 0 || slot.t >= slot.schedule.length())
        throw ConfigError("checkpoint environment runtime state is inconsistent");
      st.envs.push_back(std::move(slot));
    }
    if (static_cast<int>(st.envs.size()) != st.config.num_envs)
      throw ConfigError("checkpoint environment count disagrees with its config");
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pre-training checkpoint manifest: ") + e.what());
  }
}

// ---- Frozen low-level policy ---------------------------------------------

Eigen::VectorXf LowLevelPolicy::features(const env::CharState& s) const { return features_of(stats, s, env); }

Matrix<float> LowLevelPolicy::mean_actions(const Matrix<float>& obs, const Matrix<float>& latents) const {
  return nn::mlp_forward(policy_spec, policy, core::policy_input(obs, latents));
}

env::Action LowLevelPolicy::act(const env::CharState& s, const latent::LatentSkill& z) const {
  if (z.dim() != latent_dim) throw ConfigError("latent dimension does not match the low-level policy");
  const Matrix<float> obs = features(s);
  const Matrix<float> lat = z.z();
  const Matrix<float> mean = mean_actions(obs, lat);
  return env::decode_action(mean.col(0));
}

LowLevelPolicy low_level_policy(const PretrainState& st) {
  LowLevelPolicy llp;
  llp.policy_spec = st.policy.spec;
  llp.policy = st.policy.params;
  llp.disc_enc = st.disc_enc;
  llp.stats = st.stats;
  llp.env = st.config.env;
  llp.action_variance = st.config.action_variance;
  llp.latent_dim = st.config.hyper.latent_dim;
  return llp;
}

LowLevelPolicy load_low_level_policy(const std::filesystem::path& path) {
  return low_level_policy(from_checkpoint(ckpt::load(path)));
}

}  // namespace ase::pretrain
