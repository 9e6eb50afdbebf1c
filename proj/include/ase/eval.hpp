#pragma once

// Diagnostics: nearest-clip transition matching, dataset coverage,
// skill-transition matrix and the fall-recovery probe.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ase/env.hpp"
#include "ase/latent.hpp"
#include "ase/motion.hpp"
#include "ase/rng.hpp"

namespace ase::eval {

using env::Observation;

struct TransitionMatch {
  int clip = -1;
  int frame = -1;  // first frame of the matched pair
  double distance = 0.0;
};

struct MatchResult {
  std::vector<TransitionMatch> transitions;
  int majority_clip = -1;
};

// Dataset frames normalized once with the given stats.
class Matcher {
 public:
  Matcher(const motion::MotionDataset& dataset, const motion::FeatureStats& stats);

  // argmin over every consecutive frame pair of |s - f_t|^2 + |s' - f_t+1|^2
  // in normalized units. Ties resolve to the lowest clip (then frame) index.
  TransitionMatch match(const Observation& s, const Observation& s_next) const;
  // Majority vote over all transitions; ties resolve to the lowest clip index.
  // Throws UsageError for fewer than two frames.
  MatchResult match_trajectory(const std::vector<Observation>& frames) const;

  int num_clips() const { return static_cast<int>(clips_.size()); }

 private:
  motion::FeatureStats stats_;
  std::vector<Eigen::Matrix<double, env::kObsDim, Eigen::Dynamic>> clips_;
};

TransitionMatch match_transition(const motion::MotionDataset& dataset, const motion::FeatureStats& stats,
                                 const Observation& s, const Observation& s_next);
MatchResult match_trajectory(const motion::MotionDataset& dataset, const motion::FeatureStats& stats,
                             const std::vector<Observation>& frames);

// Action chosen for a state while conditioned on a skill.
using LatentController = std::function<env::Action(const env::CharState&, const latent::LatentSkill&)>;

// Produces steps + 1 observations while conditioned on latent_at(t).
using LatentFn = std::function<const latent::LatentSkill&(int)>;
using TrajectorySource = std::function<std::vector<Observation>(const LatentFn& latent_at, int steps, Rng& rng)>;

// Rolls a controller out from a standing reset (random heading drawn from rng).
TrajectorySource controller_source(LatentController controller, env::EnvConfig config);

// Controller that does nothing (zero commands, zero balance effort).
LatentController zero_action_controller();

struct EvalConfig {
  int coverage_trajs = 200;
  int coverage_len = 90;
  int transition_trajs = 200;
  int switch_min = 150;
  int switch_max = 200;
  int destination_len = 150;
  int recovery_trials = 100;
  double impulse_min = 2.0;  // m/s
  double impulse_max = 6.0;
  int recovery_timeout = 300;
  int recovery_min_hold = 1;
  int recovery_max_hold = 150;
  int threads = 1;

  void validate() const;
};

// Per-clip counts of majority matches over n_trajs rollouts, each with a
// single prior latent. Trial i uses its own RNG stream derived from one draw
// of `rng`, so a longer run extends a shorter one.
std::vector<int> coverage_histogram(const TrajectorySource& source, const Matcher& matcher, int latent_dim,
                                    int n_trajs, int traj_len, Rng& rng, int threads = 1);

struct TransitionMatrix {
  std::vector<std::vector<int>> counts;  // [source][destination]
  int total() const;
  int nonzero() const;
  // Observed cells / C^2.
  double coverage() const;
};

TransitionMatrix transition_matrix(const TrajectorySource& source, const Matcher& matcher, int latent_dim,
                                   const EvalConfig& config, Rng& rng);

struct RecoveryTrial {
  Eigen::Vector2d impulse = Eigen::Vector2d::Zero();
  int steps = 0;  // steps until recovered (the timeout when unsuccessful)
  bool success = false;
};

// Standing start, impulse of uniform magnitude in [impulse_min, impulse_max]
// in a random direction, then the controller runs under a random latent
// schedule until is_recovered or the timeout.
std::vector<RecoveryTrial> recovery_probe(const LatentController& controller, const env::EnvConfig& env_config,
                                          int latent_dim, const EvalConfig& config, Rng& rng);
double success_rate(const std::vector<RecoveryTrial>& trials);

void write_coverage_csv(const std::filesystem::path& path, const motion::MotionDataset& dataset,
                        const std::vector<int>& counts);
void write_transitions_csv(const std::filesystem::path& path, const motion::MotionDataset& dataset,
                           const TransitionMatrix& matrix);
void write_recovery_csv(const std::filesystem::path& path, const std::vector<RecoveryTrial>& trials);

}  // namespace ase::eval
