#include "ase/eval.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "ase/errors.hpp"
#include "ase/parallel.hpp"

namespace ase::eval {

Matcher::Matcher(const motion::MotionDataset& dataset, const motion::FeatureStats& stats) : stats_(stats) {
  if (dataset.clips.empty()) throw ConfigError("cannot match against an empty dataset");
  for (const auto& clip : dataset.clips) {
    Eigen::Matrix<double, env::kObsDim, Eigen::Dynamic> m(env::kObsDim, static_cast<Eigen::Index>(clip.frames.size()));
    for (std::size_t f = 0; f < clip.frames.size(); ++f)
      m.col(static_cast<Eigen::Index>(f)) = motion::normalize_features(stats, clip.frames[f]);
    clips_.push_back(std::move(m));
  }
}

TransitionMatch Matcher::match(const Observation& s, const Observation& s_next) const {
  const Observation a = motion::normalize_features(stats_, s);
  const Observation b = motion::normalize_features(stats_, s_next);
  TransitionMatch best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < clips_.size(); ++c) {
    const auto& m = clips_[c];
    // Per-frame distances to a and b, then sum over consecutive pairs.
    const Eigen::RowVectorXd da = (m.colwise() - a).colwise().squaredNorm();
    const Eigen::RowVectorXd db = (m.colwise() - b).colwise().squaredNorm();
    for (Eigen::Index f = 0; f + 1 < m.cols(); ++f) {
      const double d = da(f) + db(f + 1);
      if (d < best.distance) {
        best.distance = d;
        best.clip = static_cast<int>(c);
        best.frame = static_cast<int>(f);
      }
    }
  }
  return best;
}

MatchResult Matcher::match_trajectory(const std::vector<Observation>& frames) const {
  if (frames.size() < 2) throw UsageError("match_trajectory needs at least two frames");
  MatchResult result;
  std::vector<int> votes(clips_.size(), 0);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    result.transitions.push_back(match(frames[t], frames[t + 1]));
    ++votes[static_cast<std::size_t>(result.transitions.back().clip)];
  }
  result.majority_clip = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  return result;
}

TransitionMatch match_transition(const motion::MotionDataset& dataset, const motion::FeatureStats& stats,
                                 const Observation& s, const Observation& s_next) {
  return Matcher(dataset, stats).match(s, s_next);
}

MatchResult match_trajectory(const motion::MotionDataset& dataset, const motion::FeatureStats& stats,
                             const std::vector<Observation>& frames) {
  return Matcher(dataset, stats).match_trajectory(frames);
}

TrajectorySource controller_source(LatentController controller, env::EnvConfig config) {
  return [controller = std::move(controller), config](const LatentFn& latent_at, int steps, Rng& rng) {
    env::CharState s = env::reset(config, rng, 0.0);
    std::vector<Observation> frames;
    frames.reserve(static_cast<std::size_t>(steps) + 1);
    frames.push_back(env::observe(s, config));
    for (int t = 0; t < steps; ++t) {
      s = env::step(s, controller(s, latent_at(t)), config);
      frames.push_back(env::observe(s, config));
    }
    return frames;
  };
}

LatentController zero_action_controller() {
  return [](const env::CharState&, const latent::LatentSkill&) { return env::Action{}; };
}

void EvalConfig::validate() const {
  if (coverage_trajs < 1 || transition_trajs < 1 || recovery_trials < 1)
    throw ConfigError("eval trial counts must be >= 1");
  if (coverage_len < 1 || destination_len < 1) throw ConfigError("eval trajectory lengths must be >= 1");
  if (!(1 <= switch_min && switch_min <= switch_max)) throw ConfigError("eval switch bounds require 1 <= min <= max");
  if (!(0.0 <= impulse_min && impulse_min <= impulse_max)) throw ConfigError("eval impulse bounds are invalid");
  if (recovery_timeout < 1) throw ConfigError("eval.recovery_timeout must be >= 1");
  if (!(1 <= recovery_min_hold && recovery_min_hold <= recovery_max_hold && recovery_max_hold <= recovery_timeout))
    throw ConfigError("eval recovery hold bounds are invalid");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::vector<int> coverage_histogram(const TrajectorySource& source, const Matcher& matcher, int latent_dim,
                                    int n_trajs, int traj_len, Rng& rng, int threads) {
  if (n_trajs < 1 || traj_len < 1) throw ConfigError("coverage needs n_trajs >= 1 and traj_len >= 1");
  const std::uint64_t base = rng.next_u64();
  std::vector<int> majority(static_cast<std::size_t>(n_trajs));
  parallel_for(majority.size(), threads, [&](std::size_t i) {
    Rng trial = Rng::stream(base, i);
    const latent::LatentSkill z = latent::sample_prior(trial, latent_dim);
    const auto frames = source([&](int) -> const latent::LatentSkill& { return z; }, traj_len, trial);
    majority[i] = matcher.match_trajectory(frames).majority_clip;
  });
  std::vector<int> counts(static_cast<std::size_t>(matcher.num_clips()), 0);
  for (int m : majority) ++counts[static_cast<std::size_t>(m)];
  return counts;
}

int TransitionMatrix::total() const {
  int n = 0;
  for (const auto& row : counts)
    for (int c : row) n += c;
  return n;
}

int TransitionMatrix::nonzero() const {
  int n = 0;
  for (const auto& row : counts)
    for (int c : row) n += c > 0 ? 1 : 0;
  return n;
}

double TransitionMatrix::coverage() const {
  const auto c = static_cast<double>(counts.size());
  return c == 0 ? 0.0 : static_cast<double>(nonzero()) / (c * c);
}

TransitionMatrix transition_matrix(const TrajectorySource& source, const Matcher& matcher, int latent_dim,
                                   const EvalConfig& config, Rng& rng) {
  config.validate();
  const std::uint64_t base = rng.next_u64();
  const auto n = static_cast<std::size_t>(config.transition_trajs);
  std::vector<std::pair<int, int>> cells(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    Rng trial = Rng::stream(base, i);
    const latent::LatentSkill zs = latent::sample_prior(trial, latent_dim);
    const latent::LatentSkill zd = latent::sample_prior(trial, latent_dim);
    const int switch_at = trial.uniform_int(config.switch_min, config.switch_max);
    const auto frames = source(
        [&](int t) -> const latent::LatentSkill& { return t < switch_at ? zs : zd; },
        switch_at + config.destination_len, trial);
    const auto mid = frames.begin() + switch_at;
    const std::vector<Observation> before(frames.begin(), mid + 1);
    const std::vector<Observation> after(mid, frames.end());
    cells[i] = {matcher.match_trajectory(before).majority_clip, matcher.match_trajectory(after).majority_clip};
  });
  TransitionMatrix m;
  const auto c = static_cast<std::size_t>(matcher.num_clips());
  m.counts.assign(c, std::vector<int>(c, 0));
  for (const auto& [src, dst] : cells) ++m.counts[static_cast<std::size_t>(src)][static_cast<std::size_t>(dst)];
  return m;
}

std::vector<RecoveryTrial> recovery_probe(const LatentController& controller, const env::EnvConfig& env_config,
                                          int latent_dim, const EvalConfig& config, Rng& rng) {
  config.validate();
  const std::uint64_t base = rng.next_u64();
  std::vector<RecoveryTrial> trials(static_cast<std::size_t>(config.recovery_trials));
  parallel_for(trials.size(), config.threads, [&](std::size_t i) {
    Rng trial = Rng::stream(base, i);
    env::CharState s = env::reset(env_config, trial, 0.0);
    const double magnitude = trial.uniform(config.impulse_min, config.impulse_max);
    const double angle = trial.uniform(0.0, 2.0 * std::numbers::pi);
    RecoveryTrial& out = trials[i];
    out.impulse = magnitude * Eigen::Vector2d(std::cos(angle), std::sin(angle));
    s = env::apply_perturbation(s, out.impulse, env_config);
    const latent::LatentSchedule schedule = latent::make_schedule(
        trial, config.recovery_timeout, config.recovery_min_hold, config.recovery_max_hold, latent_dim);
    out.steps = config.recovery_timeout;
    for (int t = 0; t <= config.recovery_timeout; ++t) {
      if (env::is_recovered(s, env_config)) {
        out.steps = t;
        out.success = true;
        break;
      }
      if (t == config.recovery_timeout) break;
      s = env::step(s, controller(s, schedule.at(t)), env_config);
    }
  });
  return trials;
}

double success_rate(const std::vector<RecoveryTrial>& trials) {
  if (trials.empty()) return 0.0;
  int ok = 0;
  for (const auto& t : trials) ok += t.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(trials.size());
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_coverage_csv(const std::filesystem::path& path, const motion::MotionDataset& dataset,
                        const std::vector<int>& counts) {
  if (counts.size() != dataset.clips.size()) throw ConfigError("coverage counts do not match the dataset");
  auto out = open_csv(path);
  out << "clip_name,count\n";
  for (std::size_t c = 0; c < counts.size(); ++c) out << dataset.clips[c].name << ',' << counts[c] << '\n';
}

void write_transitions_csv(const std::filesystem::path& path, const motion::MotionDataset& dataset,
                           const TransitionMatrix& matrix) {
  if (matrix.counts.size() != dataset.clips.size()) throw ConfigError("transition matrix does not match the dataset");
  auto out = open_csv(path);
  out << "source,dest,count\n";
  for (std::size_t s = 0; s < matrix.counts.size(); ++s)
    for (std::size_t d = 0; d < matrix.counts.size(); ++d)
      out << dataset.clips[s].name << ',' << dataset.clips[d].name << ',' << matrix.counts[s][d] << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", matrix.coverage());
  out << "# coverage " << buf << '\n';
}

void write_recovery_csv(const std::filesystem::path& path, const std::vector<RecoveryTrial>& trials) {
  auto out = open_csv(path);
  out << "trial,impulse,steps,success\n";
  char buf[64];
  for (std::size_t i = 0; i < trials.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", trials[i].impulse.norm());
    out << i << ',' << buf << ',' << trials[i].steps << ',' << (trials[i].success ? 1 : 0) << '\n';
  }
}

}  // namespace ase::eval
