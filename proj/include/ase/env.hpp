#pragma once

// Planar character simulator and the downstream task definitions.
//
// The character is a point root with heading, a posture height, an
// uprightness scalar and a two-link sword arm driven by PD controllers.
// Control runs at 30 Hz with 4 physics substeps (120 Hz).

#include <Eigen/Dense>

#include <array>
#include <string>
#include <variant>

#include "ase/rng.hpp"

namespace ase::env {

inline constexpr int kObsDim = 11;
inline constexpr int kActionDim = 7;

using Observation = Eigen::Matrix<double, kObsDim, 1>;

// Feature order of Observation (and of every motion clip frame).
enum Feature : int {
  kHeight = 0,
  kUpright,
  kLocalVelFwd,
  kLocalVelLat,
  kAngVel,
  kJoint1,
  kJoint2,
  kJoint1Vel,
  kJoint2Vel,
  kTipFwd,
  kTipLat,
};

const std::array<std::string, kObsDim>& feature_names();

struct EnvConfig {
  double dt_control = 1.0 / 30.0;
  int substeps = 4;
  double accel_max = 8.0;       // m/s^2
  double ang_accel_max = 10.0;  // rad/s^2
  double drag = 0.8;            // 1/s
  double ang_drag = 2.0;        // 1/s
  double height_rate = 2.0;     // 1/s
  double joint_kp = 40.0;
  double joint_kd = 4.0;
  double link1 = 0.4;  // m
  double link2 = 0.4;  // m
  double recover_gain = 2.0;  // 1/s
  double fall_threshold = 0.3;
  double recover_threshold = 0.8;
  double recovered_height = 0.8;
  double disturbance_gain = 0.15;  // uprightness lost per m/s of impulse

  double dt_physics() const { return dt_control / substeps; }
  void validate() const;
};

struct CharState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  double ang_vel = 0.0;
  double height = 1.0;
  double upright = 1.0;
  double joint1 = 0.0;
  double joint2 = 0.0;
  double joint1_vel = 0.0;
  double joint2_vel = 0.0;

  bool all_finite() const;
  friend bool operator==(const CharState&, const CharState&) = default;
};

struct Action {
  double fwd = 0.0;      // [-1, 1]
  double lat = 0.0;      // [-1, 1]
  double turn = 0.0;     // [-1, 1]
  double posture = 0.0;  // [-1, 1]
  double balance = 0.0;  // [0, 1]
  double target1 = 0.0;  // [-pi, pi]
  double target2 = 0.0;  // [-pi, pi]

  Action clamped() const;
};

// Maps a policy output vector (7 reals, nominally in [-1, 1]) to an Action:
// the first four pass through, balance = (x + 1) / 2, joint targets = pi * x.
// The result is clamped.
Action decode_action(const Eigen::Ref<const Eigen::VectorXf>& policy_output);

CharState reset(const EnvConfig& config, Rng& rng, double fall_prob);

// One control step (config.substeps physics substeps). Throws SimulationFault
// on non-finite input or output.
CharState step(const CharState& state, const Action& action, const EnvConfig& config);

Observation observe(const CharState& state, const EnvConfig& config = {});

Eigen::Vector2d sword_tip_local(const CharState& state, const EnvConfig& config = {});
Eigen::Vector2d sword_tip_world(const CharState& state, const EnvConfig& config = {});

// World <-> character-local frame rotations.
Eigen::Vector2d to_local(const CharState& state, const Eigen::Vector2d& world_vec);
Eigen::Vector2d to_world(const CharState& state, const Eigen::Vector2d& local_vec);

// Character at the origin with the given heading whose observation matches
// `obs` (the sword-tip features are implied by the joints).
CharState state_from_observation(const Observation& obs, double heading);

CharState apply_perturbation(const CharState& state, const Eigen::Vector2d& impulse, const EnvConfig& config);

bool is_fallen(const CharState& state, const EnvConfig& config = {});
bool is_recovered(const CharState& state, const EnvConfig& config = {});

// ---- Tasks ----------------------------------------------------------------

enum class Task { kReach, kSpeed, kSteering, kLocation, kStrike };

const char* to_string(Task task);
Task task_from_string(const std::string& name);  // throws UsageError

struct ReachGoal {
  Eigen::Vector2d target;  // world frame
};
struct SpeedGoal {
  Eigen::Vector2d direction;  // unit, world frame
  double speed = 0.0;
};
struct SteeringGoal {
  Eigen::Vector2d direction;  // unit, world frame
  Eigen::Vector2d facing;     // unit, world frame
  double speed = 1.5;
};
struct LocationGoal {
  Eigen::Vector2d target;  // world frame
};
struct StrikeGoal {
  Eigen::Vector2d target;  // world frame
  double tilt = 0.0;       // rad, 0 upright .. pi/2 knocked flat
  double tilt_rate = 0.0;  // rad/s
};

using TaskGoal = std::variant<ReachGoal, SpeedGoal, SteeringGoal, LocationGoal, StrikeGoal>;

Task task_of(const TaskGoal& goal);

struct TaskParams {
  double reach_radius = 1.0;
  double speed_cap = 4.0;
  double steering_speed = 1.5;
  double location_radius = 5.0;
  double strike_min_dist = 2.0;
  double strike_max_dist = 5.0;
  double strike_contact_radius = 0.2;
  double strike_min_tip_speed = 1.0;
  double strike_tilt_gain = 1.0;  // tilt rate (rad/s) per m/s of tip speed
  double strike_body_radius = 0.3;
};

TaskGoal sample_goal(Task task, Rng& rng, const CharState& state, const TaskParams& params = {});

// Number of goal features the high-level policy observes for `task`.
int goal_feature_dim(Task task);

// Goal expressed in the character's local frame.
Eigen::VectorXd goal_features(const TaskGoal& goal, const CharState& state);

// Task reward in [0, 1] for the transition state -> next_state.
// Throws UsageError when the goal variant does not belong to `task`.
double task_reward(Task task, const CharState& state, const Action& action, const CharState& next_state,
                   const TaskGoal& goal, const EnvConfig& config = {});

// Advances goal-side dynamics (Strike target tilt) over one control step.
void advance_goal(TaskGoal& goal, const CharState& state, const CharState& next_state, const EnvConfig& config,
                  const TaskParams& params = {});

// Early termination: Strike ends when the root touches the target.
bool episode_terminated(Task task, const CharState& state, const TaskGoal& goal, const TaskParams& params = {});

}  // namespace ase::env
