#include "ase/tasktrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ase/config_json.hpp"
#include "ase/errors.hpp"
#include "ase/parallel.hpp"

namespace ase::tasktrain {

namespace {

inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kUpdateStream = 1;
inline constexpr std::uint64_t kEnvStreamBase = 1000;

bool resamples_goal(env::Task task) {
  return task == env::Task::kReach || task == env::Task::kSpeed || task == env::Task::kSteering;
}

void start_episode(TaskEnvSlot& slot, const TaskTrainConfig& c, const env::EnvConfig& env_config) {
  slot.state = env::reset(env_config, slot.rng, 0.0);
  slot.goal = env::sample_goal(c.task, slot.rng, slot.state, c.task_params);
  slot.t = 0;
  slot.episode_task_return = 0.0;
}

double target_distance(const env::CharState& s, const env::TaskGoal& goal) {
  if (const auto* g = std::get_if<env::LocationGoal>(&goal)) return (s.position - g->target).norm();
  if (const auto* g = std::get_if<env::StrikeGoal>(&goal)) return (s.position - g->target).norm();
  return 0.0;
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

void check_hidden(const std::vector<int>& dims, const char* what) {
  if (dims.empty()) throw ConfigError(std::string(what) + " needs at least one hidden layer");
  for (int d : dims)
    if (d < 1) throw ConfigError(std::string(what) + " hidden sizes must be >= 1");
}

}  // namespace

void TaskTrainConfig::validate() const {
  if (hold_steps < 1) throw ConfigError("task.hold_steps must be >= 1");
  if (iterations < 0) throw ConfigError("task.iterations must be >= 0");
  if (num_envs < 1) throw ConfigError("task.num_envs must be >= 1");
  if (decisions_per_iteration < 1) throw ConfigError("task.decisions_per_iteration must be >= 1");
  if (episode_length < 1) throw ConfigError("task.episode_length must be >= 1");
  if (goal_resample_every < 1) throw ConfigError("task.goal_resample_every must be >= 1");
  if (!(latent_variance > 0)) throw ConfigError("task.latent_variance must be > 0");
  if (!(std::isfinite(w_task) && std::isfinite(w_style))) throw ConfigError("task reward weights must be finite");
  check_hidden(policy_hidden, "task policy");
  check_hidden(value_hidden, "task value");
  ppo.validate();
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

nlohmann::json config_to_json(const TaskTrainConfig& c) {
  return {{"task", env::to_string(c.task)},
          {"w_task", c.w_task},
          {"w_style", c.w_style},
          {"hold_steps", c.hold_steps},
          {"iterations", c.iterations},
          {"num_envs", c.num_envs},
          {"decisions_per_iteration", c.decisions_per_iteration},
          {"episode_length", c.episode_length},
          {"goal_resample_every", c.goal_resample_every},
          {"latent_variance", c.latent_variance},
          {"policy_hidden", c.policy_hidden},
          {"value_hidden", c.value_hidden},
          {"ppo", c.ppo},
          {"task_params", c.task_params},
          {"seed", c.seed},
          {"threads", c.threads}};
}

TaskTrainConfig config_from_json(const nlohmann::json& j) {
  TaskTrainConfig c;
  try {
    c.task = env::task_from_string(j.at("task").get<std::string>());
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  j.at("w_task").get_to(c.w_task);
  j.at("w_style").get_to(c.w_style);
  j.at("hold_steps").get_to(c.hold_steps);
  j.at("iterations").get_to(c.iterations);
  j.at("num_envs").get_to(c.num_envs);
  j.at("decisions_per_iteration").get_to(c.decisions_per_iteration);
  j.at("episode_length").get_to(c.episode_length);
  j.at("goal_resample_every").get_to(c.goal_resample_every);
  j.at("latent_variance").get_to(c.latent_variance);
  j.at("policy_hidden").get_to(c.policy_hidden);
  j.at("value_hidden").get_to(c.value_hidden);
  j.at("ppo").get_to(c.ppo);
  j.at("task_params").get_to(c.task_params);
  j.at("seed").get_to(c.seed);
  j.at("threads").get_to(c.threads);
  c.validate();
  return c;
}

nn::MlpSpec hlp_spec(env::Task task, int latent_dim, const std::vector<int>& hidden) {
  return {env::kObsDim + env::goal_feature_dim(task), hidden, latent_dim, nn::OutputActivation::kLinear};
}

nn::MlpSpec hlp_value_spec(env::Task task, int latent_dim, const std::vector<int>& hidden) {
  (void)latent_dim;
  return {env::kObsDim + env::goal_feature_dim(task), hidden, 1, nn::OutputActivation::kLinear};
}

HlpSample hlp_act(const Eigen::VectorXf& mean, double variance, Rng& rng) {
  if (!(variance > 0)) throw ConfigError("hlp_act: variance must be > 0");
  const double sd = std::sqrt(variance);
  const nn::GaussianHead head = nn::GaussianHead::isotropic(static_cast<int>(mean.size()), variance);
  for (;;) {
    Eigen::VectorXf z_bar(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) z_bar(i) = mean(i) + static_cast<float>(sd * rng.normal());
    if (auto z = latent::normalize(z_bar)) return {z_bar, *z, nn::gaussian_logprob<double>(head, mean, z_bar)};
  }
}

HlpSample hlp_act(const nn::MlpSpec& spec, const nn::ParamSet<float>& params, const Eigen::VectorXf& input,
                  double variance, Rng& rng) {
  return hlp_act(Eigen::VectorXf(nn::mlp_forward(spec, params, nn::Vector<float>(input))), variance, rng);
}

double combine_reward(double task_reward, double disc_prob, double w_task, double w_style) {
  return w_task * task_reward + w_style * core::style_reward(disc_prob);
}

double hlp_reward(const core::DiscEncNet<float>& disc, const motion::FeatureStats& stats, env::Task task,
                  const env::CharState& s, const env::Action& a, const env::CharState& s_next,
                  const env::TaskGoal& goal, double w_task, double w_style, const env::EnvConfig& env_config) {
  const Matrix<float> x = motion::network_features(stats, env::observe(s, env_config));
  const Matrix<float> y = motion::network_features(stats, env::observe(s_next, env_config));
  const double d = core::disc_prob<float>(disc, core::transition_input<float>(x, y))(0);
  return combine_reward(env::task_reward(task, s, a, s_next, goal, env_config), d, w_task, w_style);
}

nn::GaussianHead TaskState::action_head() const {
  return nn::GaussianHead::isotropic(latent_dim, config.latent_variance);
}

Eigen::VectorXf TaskState::input(const pretrain::LowLevelPolicy& llp, const TaskEnvSlot& slot) const {
  const Eigen::VectorXf g = env::goal_features(slot.goal, slot.state).cast<float>();
  Eigen::VectorXf x(env::kObsDim + g.size());
  x << llp.features(slot.state), g;
  return x;
}

TaskState init_task_training(const TaskTrainConfig& config, const pretrain::LowLevelPolicy& llp) {
  config.validate();
  if (llp.latent_dim < 1) throw ConfigError("low-level policy has no latent space");
  TaskState st;
  st.config = config;
  st.latent_dim = llp.latent_dim;
  Rng init = Rng::stream(config.seed, kInitStream);
  const nn::AdamConfig adam{config.ppo.stepsize};
  st.policy.spec = hlp_spec(config.task, st.latent_dim, config.policy_hidden);
  st.policy.params = nn::init_mlp<float>(st.policy.spec, "hlp", init, 0.01);
  st.policy.adam = nn::make_adam(st.policy.params, adam);
  st.value.spec = hlp_value_spec(config.task, st.latent_dim, config.value_hidden);
  st.value.params = nn::init_mlp<float>(st.value.spec, "hlp_value", init);
  st.value.adam = nn::make_adam(st.value.params, adam);
  st.update_rng = Rng::stream(config.seed, kUpdateStream);
  st.envs.resize(static_cast<std::size_t>(config.num_envs));
  for (std::size_t i = 0; i < st.envs.size(); ++i) {
    st.envs[i].rng = Rng::stream(config.seed, kEnvStreamBase + i);
    start_episode(st.envs[i], config, llp.env);
  }
  return st;
}

std::string metrics_row(const TaskMetrics& m) {
  std::ostringstream out;
  out << m.iteration << ',' << fmt(m.task_reward_mean) << ',' << fmt(m.style_reward_mean) << ','
      << fmt(m.normalized_return);
  return out.str();
}

TaskMetrics run_task_iteration(TaskState& st, const pretrain::LowLevelPolicy& llp) {
  const TaskTrainConfig& c = st.config;
  const int n_env = c.num_envs;
  const int decisions = c.decisions_per_iteration;
  const int d = st.latent_dim;
  const int in_dim = st.policy.spec.input_dim;
  const int goal_dim = env::goal_feature_dim(c.task);
  const auto total = static_cast<Eigen::Index>(n_env) * decisions;
  const nn::GaussianHead head = st.action_head();
  const int next_iteration = st.iteration + 1;

  try {
    rl::TrajectoryBuffer b;
    b.obs.resize(env::kObsDim, total);
    b.cond.resize(goal_dim, total);
    b.actions.resize(d, total);
    b.rewards.assign(static_cast<std::size_t>(total), 0.0);
    b.values.assign(static_cast<std::size_t>(total), 0.0);
    b.logp.assign(static_cast<std::size_t>(total), 0.0);
    b.dones.assign(static_cast<std::size_t>(total), 0);

    double task_sum = 0.0;
    double style_sum = 0.0;
    std::int64_t low_steps = 0;
    double finished_return = 0.0;
    int finished = 0;

    Matrix<float> input(in_dim, n_env);
    Matrix<float> lat(d, n_env);
    Matrix<float> obs(env::kObsDim, n_env);
    Matrix<float> next(env::kObsDim, n_env);
    std::vector<env::CharState> before(static_cast<std::size_t>(n_env));
    std::vector<env::Action> actions(static_cast<std::size_t>(n_env));
    std::vector<double> task_r(static_cast<std::size_t>(n_env));
    for (int k = 0; k < decisions; ++k) {
      for (int i = 0; i < n_env; ++i) input.col(i) = st.input(llp, st.envs[static_cast<std::size_t>(i)]);
      const Matrix<float> mean = nn::mlp_forward(st.policy.spec, st.policy.params, input);
      const Matrix<float> vals = nn::mlp_forward(st.value.spec, st.value.params, input);
      std::vector<HlpSample> samples;
      samples.reserve(static_cast<std::size_t>(n_env));
      for (int i = 0; i < n_env; ++i) {
        samples.push_back(hlp_act(Eigen::VectorXf(mean.col(i)), c.latent_variance, st.envs[i].rng));
        lat.col(i) = samples.back().z.z();
      }

      std::vector<double> window_reward(static_cast<std::size_t>(n_env), 0.0);
      std::vector<std::uint8_t> active(static_cast<std::size_t>(n_env), 1);
      std::vector<std::uint8_t> ended(static_cast<std::size_t>(n_env), 0);
      std::vector<std::uint8_t> timed_out(static_cast<std::size_t>(n_env), 0);
      for (int h = 0; h < c.hold_steps; ++h) {
        std::vector<Eigen::Index> live;
        for (int i = 0; i < n_env; ++i)
          if (active[static_cast<std::size_t>(i)]) live.push_back(i);
        if (live.empty()) break;
        for (Eigen::Index i : live) obs.col(i) = llp.features(st.envs[static_cast<std::size_t>(i)].state);
        const Matrix<float> a_mean = llp.mean_actions(gather_cols(obs, live), gather_cols(lat, live));
        parallel_for(live.size(), c.threads, [&](std::size_t q) {
          const auto i = static_cast<std::size_t>(live[q]);
          TaskEnvSlot& slot = st.envs[i];
          if (resamples_goal(c.task) && slot.t > 0 && slot.t % c.goal_resample_every == 0)
            slot.goal = env::sample_goal(c.task, slot.rng, slot.state, c.task_params);
          before[i] = slot.state;
          actions[i] = env::decode_action(a_mean.col(static_cast<Eigen::Index>(q)));
          slot.state = env::step(slot.state, actions[i], llp.env);
          env::advance_goal(slot.goal, before[i], slot.state, llp.env, c.task_params);
          task_r[i] = env::task_reward(c.task, before[i], actions[i], slot.state, slot.goal, llp.env);
          next.col(static_cast<Eigen::Index>(i)) = llp.features(slot.state);
        });
        const Eigen::VectorXf dp =
            core::disc_prob<float>(llp.disc_enc, core::transition_input<float>(gather_cols(obs, live),
                                                                               gather_cols(next, live)));
        for (std::size_t q = 0; q < live.size(); ++q) {
          const auto i = static_cast<std::size_t>(live[q]);
          TaskEnvSlot& slot = st.envs[i];
          window_reward[i] += combine_reward(task_r[i], dp(static_cast<Eigen::Index>(q)), c.w_task, c.w_style);
          task_sum += task_r[i];
          style_sum += core::style_reward(dp(static_cast<Eigen::Index>(q)));
          ++low_steps;
          slot.episode_task_return += task_r[i];
          ++slot.t;
          if (env::episode_terminated(c.task, slot.state, slot.goal, c.task_params)) {
            ended[i] = 1;
            active[i] = 0;
          } else if (slot.t >= c.episode_length) {
            ended[i] = 1;
            timed_out[i] = 1;
            active[i] = 0;
          }
        }
      }

      // Timeouts fold gamma V(s_T) into the window reward; true terminations
      // bootstrap nothing.
      std::vector<Eigen::Index> folded;
      for (int i = 0; i < n_env; ++i)
        if (timed_out[static_cast<std::size_t>(i)]) folded.push_back(i);
      std::vector<double> tail(static_cast<std::size_t>(n_env), 0.0);
      if (!folded.empty()) {
        Matrix<float> tin(in_dim, static_cast<Eigen::Index>(folded.size()));
        for (std::size_t q = 0; q < folded.size(); ++q)
          tin.col(static_cast<Eigen::Index>(q)) = st.input(llp, st.envs[static_cast<std::size_t>(folded[q])]);
        const Matrix<float> tv = nn::mlp_forward(st.value.spec, st.value.params, tin);
        for (std::size_t q = 0; q < folded.size(); ++q)
          tail[static_cast<std::size_t>(folded[q])] = tv(0, static_cast<Eigen::Index>(q));
      }

      for (int i = 0; i < n_env; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const auto col = static_cast<Eigen::Index>(i) * decisions + k;
        const auto ucol = static_cast<std::size_t>(col);
        b.obs.col(col) = input.col(i).head(env::kObsDim);
        b.cond.col(col) = input.col(i).tail(goal_dim);
        b.actions.col(col) = samples[ui].z_bar;
        b.values[ucol] = vals(0, i);
        b.logp[ucol] = samples[ui].logp;
        b.rewards[ucol] = window_reward[ui] + c.ppo.gamma * tail[ui];
        if (ended[ui]) {
          b.dones[ucol] = 1;
          finished_return += st.envs[ui].episode_task_return / c.episode_length;
          ++finished;
          start_episode(st.envs[ui], c, llp.env);
        }
      }
    }

    for (int i = 0; i < n_env; ++i) input.col(i) = st.input(llp, st.envs[static_cast<std::size_t>(i)]);
    const Matrix<float> boot = nn::mlp_forward(st.value.spec, st.value.params, input);
    for (int i = 0; i < n_env; ++i) {
      const auto begin = static_cast<std::size_t>(i) * static_cast<std::size_t>(decisions);
      b.segments.push_back({begin, begin + static_cast<std::size_t>(decisions), static_cast<double>(boot(0, i))});
    }

    rl::compute_targets(b, c.ppo);
    rl::ppo_update(st.policy, st.value, head, b, c.ppo, st.update_rng);

    st.iteration = next_iteration;
    if (finished > 0) st.last_normalized_return = finished_return / finished;
    TaskMetrics m;
    m.iteration = st.iteration;
    m.task_reward_mean = task_sum / static_cast<double>(low_steps);
    m.style_reward_mean = style_sum / static_cast<double>(low_steps);
    m.normalized_return = st.last_normalized_return;
    return m;
  } catch (const TrainingFault& e) {
    throw TrainingFault("task-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  } catch (const OptimizationError& e) {
    throw TrainingFault("task-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  } catch (const SimulationFault& e) {
    throw TrainingFault("task-training iteration " + std::to_string(next_iteration) + ": " + e.what());
  }
}

std::vector<TaskMetrics> run_task_training(TaskState& st, const pretrain::LowLevelPolicy& llp,
                                           const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "task_metrics.csv";
  std::ofstream csv(path, std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + path.string());
  csv << kTaskMetricsHeader << '\n';
  std::vector<TaskMetrics> rows;
  while (st.iteration < st.config.iterations) {
    rows.push_back(run_task_iteration(st, llp));
    csv << metrics_row(rows.back()) << '\n';
    csv.flush();
  }
  ckpt::save(to_checkpoint(st), out_dir / "hlp.ckpt");
  return rows;
}

ckpt::Checkpoint to_checkpoint(const TaskState& st) {
  ckpt::Checkpoint ck;
  ck.manifest["kind"] = "task";
  ck.manifest["task"] = env::to_string(st.config.task);
  ck.manifest["latent_dim"] = st.latent_dim;
  ck.manifest["config"] = config_to_json(st.config);
  ck.manifest["nets"] = {{"hlp", ckpt::spec_to_json(st.policy.spec)},
                         {"hlp_value", ckpt::spec_to_json(st.value.spec)}};
  ck.manifest["iteration"] = st.iteration;
  ck.add_set("hlp", st.policy.params);
  ck.add_set("hlp_value", st.value.params);
  return ck;
}

HighLevelPolicy high_level_policy(const TaskState& st) {
  return {st.config.task, st.latent_dim, st.config.hold_steps, st.policy.spec, st.policy.params};
}

HighLevelPolicy load_high_level_policy(const std::filesystem::path& path, int latent_dim) {
  const ckpt::Checkpoint ck = ckpt::load(path);
  const auto& m = ck.manifest;
  if (m.value("kind", "") != "task") throw ConfigError("checkpoint is not a task-training checkpoint");
  try {
    HighLevelPolicy hlp;
    const TaskTrainConfig config = config_from_json(m.at("config"));
    hlp.task = config.task;
    hlp.hold_steps = config.hold_steps;
    hlp.latent_dim = m.at("latent_dim").get<int>();
    if (hlp.latent_dim != latent_dim)
      throw ConfigError("high-level policy latent dimension " + std::to_string(hlp.latent_dim) +
                        " does not match the low-level policy's " + std::to_string(latent_dim));
    hlp.spec = ckpt::spec_from_json(m.at("nets").at("hlp"));
    if (!(hlp.spec == hlp_spec(hlp.task, hlp.latent_dim, config.policy_hidden)))
      throw ConfigError("checkpoint network spec disagrees with its config");
    hlp.params = ck.get_prefixed("hlp");
    nn::check_mlp_params(hlp.spec, hlp.params);
    return hlp;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed task checkpoint manifest: ") + e.what());
  }
}

latent::LatentSkill HighLevelPolicy::choose(const pretrain::LowLevelPolicy& llp, const env::CharState& s,
                                            const env::TaskGoal& goal, Rng& rng) const {
  if (llp.latent_dim != latent_dim) throw ConfigError("latent dimension does not match the low-level policy");
  const Eigen::VectorXf g = env::goal_features(goal, s).cast<float>();
  nn::Vector<float> x(env::kObsDim + g.size());
  x << llp.features(s), g;
  const nn::Vector<float> mean = nn::mlp_forward(spec, params, x);
  if (auto z = latent::normalize(Eigen::VectorXf(mean))) return *z;
  return latent::sample_prior(rng, latent_dim);
}

LatentChooser hlp_chooser(const HighLevelPolicy& hlp, const pretrain::LowLevelPolicy& llp) {
  if (hlp.latent_dim != llp.latent_dim) throw ConfigError("latent dimension does not match the low-level policy");
  return [&hlp, &llp](const env::CharState& s, const env::TaskGoal& goal, Rng& rng) {
    return hlp.choose(llp, s, goal, rng);
  };
}

LatentChooser random_chooser(int latent_dim) {
  return [latent_dim](const env::CharState&, const env::TaskGoal&, Rng& rng) {
    return latent::sample_prior(rng, latent_dim);
  };
}

std::vector<EpisodeResult> evaluate_task(const pretrain::LowLevelPolicy& llp, const LatentChooser& chooser,
                                         env::Task task, int episodes, int episode_length, int hold_steps,
                                         const env::TaskParams& params, Rng& rng, int threads) {
  if (episodes < 1 || episode_length < 1 || hold_steps < 1)
    throw ConfigError("evaluate_task needs episodes, episode_length and hold_steps >= 1");
  const std::uint64_t base = rng.next_u64();
  std::vector<EpisodeResult> out(static_cast<std::size_t>(episodes));
  parallel_for(out.size(), threads, [&](std::size_t e) {
    Rng r = Rng::stream(base, e);
    env::CharState s = env::reset(llp.env, r, 0.0);
    env::TaskGoal goal = env::sample_goal(task, r, s, params);
    latent::LatentSkill z = chooser(s, goal, r);
    EpisodeResult& res = out[e];
    for (int t = 0; t < episode_length; ++t) {
      if (resamples_goal(task) && t > 0 && t % 150 == 0) goal = env::sample_goal(task, r, s, params);
      if (t > 0 && t % hold_steps == 0) z = chooser(s, goal, r);
      const env::Action a = llp.act(s, z);
      const env::CharState prev = s;
      s = env::step(s, a, llp.env);
      env::advance_goal(goal, prev, s, llp.env, params);
      res.task_return += env::task_reward(task, prev, a, s, goal, llp.env);
      res.steps = t + 1;
      if (env::episode_terminated(task, s, goal, params)) break;
    }
    res.final_distance = target_distance(s, goal);
  });
  return out;
}

}  // namespace ase::tasktrain
