#include "ase/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ase/asecore.hpp"
#include "ase/checkpoint.hpp"
#include "ase/errors.hpp"
#include "ase/eval.hpp"

namespace ase::cli {

namespace {

std::filesystem::path out_dir(const RunConfig& config) {
  std::filesystem::path p(config.out);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<motion::ClipKind> clip_kinds(const RunConfig& config) {
  std::vector<motion::ClipKind> kinds;
  for (const auto& k : config.data.kinds) kinds.push_back(motion::clip_kind_from_string(k));
  return kinds;
}

eval::LatentController controller(const pretrain::LowLevelPolicy& llp) {
  return [&llp](const env::CharState& s, const latent::LatentSkill& z) { return llp.act(s, z); };
}

double style_reward(const pretrain::LowLevelPolicy& llp, const env::CharState& s, const env::CharState& s_next) {
  const nn::Matrix<float> x = motion::network_features(llp.stats, env::observe(s, llp.env));
  const nn::Matrix<float> y = motion::network_features(llp.stats, env::observe(s_next, llp.env));
  return core::style_reward(core::disc_prob<float>(llp.disc_enc, core::transition_input<float>(x, y))(0));
}

bool resamples_goal(env::Task task) {
  return task == env::Task::kReach || task == env::Task::kSpeed || task == env::Task::kSteering;
}

}  // namespace

motion::MotionDataset make_dataset(const RunConfig& config) {
  if (!config.data.path.empty()) return motion::load_dataset(config.data.path);
  Rng rng = Rng::stream(config.seed, kDataStream);
  motion::ClipParams params;
  params.frames = config.data.frames;
  params.noise_amplitude = config.data.noise_amplitude;
  return motion::build_default_dataset(rng, config.data.clips_per_kind, clip_kinds(config), params);
}

motion::MotionDataset gen_data(const RunConfig& config) {
  motion::MotionDataset ds = make_dataset(config);
  motion::save_dataset(ds, out_dir(config) / "dataset.json");
  return ds;
}

std::vector<pretrain::IterationMetrics> pretrain_command(const RunConfig& config,
                                                         const std::optional<std::filesystem::path>& resume) {
  const motion::MotionDataset ds = make_dataset(config);
  const std::filesystem::path out = out_dir(config);
  motion::save_dataset(ds, out / "dataset.json");
  pretrain::PretrainState st = resume ? pretrain::from_checkpoint(ckpt::load(*resume))
                                      : pretrain::init_pretraining(config.pretrain_config(), ds);
  return pretrain::run_pretraining(st, ds, config.pretrain.iterations, out);
}

std::vector<tasktrain::TaskMetrics> train_task_command(const RunConfig& config, const std::filesystem::path& llp) {
  const pretrain::LowLevelPolicy low = pretrain::load_low_level_policy(llp);
  tasktrain::TaskState st = tasktrain::init_task_training(config.task_config(), low);
  return tasktrain::run_task_training(st, low, out_dir(config));
}

void rollout_command(const RunConfig& config, const RolloutOptions& options) {
  if (options.episodes < 1 || options.steps < 1) throw UsageError("rollout needs episodes and steps >= 1");
  if (options.hlp && options.latent) throw UsageError("rollout takes either --hlp or --latent, not both");
  const pretrain::LowLevelPolicy llp = pretrain::load_low_level_policy(options.llp);
  std::optional<tasktrain::HighLevelPolicy> hlp;
  if (options.hlp) hlp = tasktrain::load_high_level_policy(*options.hlp, llp.latent_dim);
  std::optional<latent::LatentSkill> fixed;
  if (options.latent) {
    if (static_cast<int>(options.latent->size()) != llp.latent_dim)
      throw UsageError("--latent needs " + std::to_string(llp.latent_dim) + " components");
    const Eigen::VectorXd raw = Eigen::Map<const Eigen::VectorXd>(options.latent->data(), llp.latent_dim);
    fixed = latent::normalize(raw);
    if (!fixed) throw UsageError("--latent must not be the zero vector");
  }

  const std::filesystem::path path = out_dir(config) / "rollout.csv";
  std::ofstream csv(path);
  if (!csv) throw ConfigError("cannot write " + path.string());
  csv << "episode,step,x,y,heading";
  for (const auto& name : env::feature_names()) csv << ',' << name;
  for (int i = 0; i < llp.latent_dim; ++i) csv << ",z" << i;
  csv << ",task_reward,style_reward\n";
  csv << std::setprecision(9);

  Rng rng = Rng::stream(config.seed, kEvalStream);
  const env::TaskParams& params = config.task.task_params;
  for (int e = 0; e < options.episodes; ++e) {
    Rng r = Rng::stream(rng.next_u64(), static_cast<std::uint64_t>(e));
    env::CharState s = env::reset(llp.env, r, 0.0);
    const env::Task task = hlp ? hlp->task : config.task.task;
    env::TaskGoal goal = env::sample_goal(task, r, s, params);
    auto choose = [&]() {
      if (hlp) return hlp->choose(llp, s, goal, r);
      if (fixed) return *fixed;
      return latent::sample_prior(r, llp.latent_dim);
    };
    latent::LatentSkill z = choose();
    for (int t = 0; t < options.steps; ++t) {
      if (hlp) {
        if (resamples_goal(task) && t > 0 && t % config.task.goal_resample_every == 0)
          goal = env::sample_goal(task, r, s, params);
        if (t > 0 && t % hlp->hold_steps == 0) z = choose();
      }
      const env::Action a = llp.act(s, z);
      const env::CharState prev = s;
      s = env::step(s, a, llp.env);
      double task_r = 0.0;
      if (hlp) {
        env::advance_goal(goal, prev, s, llp.env, params);
        task_r = env::task_reward(task, prev, a, s, goal, llp.env);
      }
      csv << e << ',' << t << ',' << prev.position.x() << ',' << prev.position.y() << ',' << prev.heading;
      const env::Observation obs = env::observe(prev, llp.env);
      for (int f = 0; f < env::kObsDim; ++f) csv << ',' << obs(f);
      for (int i = 0; i < llp.latent_dim; ++i) csv << ',' << z.z()(i);
      csv << ',' << task_r << ',' << style_reward(llp, prev, s) << '\n';
      if (hlp && env::episode_terminated(task, s, goal, params)) break;
    }
  }
}

std::string eval_coverage_command(const RunConfig& config, const std::filesystem::path& llp_path) {
  const motion::MotionDataset ds = make_dataset(config);
  const pretrain::LowLevelPolicy llp = pretrain::load_low_level_policy(llp_path);
  const eval::EvalConfig ec = config.eval_config();
  const eval::Matcher matcher(ds, ds.stats);
  Rng rng = Rng::stream(config.seed, kEvalStream);
  const std::vector<int> counts = eval::coverage_histogram(eval::controller_source(controller(llp), llp.env), matcher,
                                                           llp.latent_dim, ec.coverage_trajs, ec.coverage_len, rng,
                                                           ec.threads);
  eval::write_coverage_csv(out_dir(config) / "coverage.csv", ds, counts);
  int covered = 0;
  for (int c : counts) covered += c > 0 ? 1 : 0;
  std::ostringstream s;
  s << "coverage: " << covered << " of " << counts.size() << " clips matched over " << ec.coverage_trajs
    << " rollouts";
  return s.str();
}

std::string eval_transitions_command(const RunConfig& config, const std::filesystem::path& llp_path) {
  const motion::MotionDataset ds = make_dataset(config);
  const pretrain::LowLevelPolicy llp = pretrain::load_low_level_policy(llp_path);
  const eval::EvalConfig ec = config.eval_config();
  const eval::Matcher matcher(ds, ds.stats);
  Rng rng = Rng::stream(config.seed, kEvalStream);
  const eval::TransitionMatrix m =
      eval::transition_matrix(eval::controller_source(controller(llp), llp.env), matcher, llp.latent_dim, ec, rng);
  eval::write_transitions_csv(out_dir(config) / "transitions.csv", ds, m);
  std::ostringstream s;
  s << "transitions: " << m.nonzero() << " of " << m.counts.size() * m.counts.size() << " cells observed, coverage "
    << std::setprecision(4) << m.coverage();
  return s.str();
}

std::string eval_recovery_command(const RunConfig& config, const std::filesystem::path& llp_path) {
  const pretrain::LowLevelPolicy llp = pretrain::load_low_level_policy(llp_path);
  const eval::EvalConfig ec = config.eval_config();
  Rng rng = Rng::stream(config.seed, kEvalStream);
  const auto trials = eval::recovery_probe(controller(llp), llp.env, llp.latent_dim, ec, rng);
  eval::write_recovery_csv(out_dir(config) / "recovery.csv", trials);
  std::ostringstream s;
  s << "recovery: success rate " << std::setprecision(4) << eval::success_rate(trials) << " over " << trials.size()
    << " trials";
  return s.str();
}

bool grad_check_command(int instances, std::uint64_t seed, bool inject_nan, std::ostream& out) {
  const auto results = gradcheck::run_all(instances, seed, inject_nan);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " instances=" << r.instances
        << " max_rel_error=" << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat;
    if (!r.note.empty()) out << " (" << r.note << ")";
    out << '\n';
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace ase::cli
