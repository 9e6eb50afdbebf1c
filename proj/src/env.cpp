#include "ase/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ase/errors.hpp"

namespace ase::env {

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Matrix2d rotation(double angle) {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

Eigen::Vector2d heading_vector(double heading) { return {std::cos(heading), std::sin(heading)}; }

Eigen::Vector2d random_unit(Rng& rng) {
  const double a = rng.uniform(-kPi, kPi);
  return heading_vector(a);
}

Eigen::Vector2d uniform_in_annulus(Rng& rng, double r_min, double r_max) {
  const double u = rng.uniform();
  const double r = std::sqrt(r_min * r_min + u * (r_max * r_max - r_min * r_min));
  return r * random_unit(rng);
}

template <typename Goal>
const Goal& expect_goal(Task task, const TaskGoal& goal) {
  const Goal* g = std::get_if<Goal>(&goal);
  if (!g) {
    throw UsageError(std::string("goal variant '") + to_string(task_of(goal)) + "' does not match task '" +
                     to_string(task) + "'");
  }
  return *g;
}

}  // namespace

const std::array<std::string, kObsDim>& feature_names() {
  static const std::array<std::string, kObsDim> names = {
      "height",   "upright",  "local_vel_fwd", "local_vel_lat", "ang_vel", "joint1",
      "joint2",   "joint1_vel", "joint2_vel",  "tip_fwd",       "tip_lat"};
  return names;
}

void EnvConfig::validate() const {
  const double positives[] = {dt_control, accel_max,  ang_accel_max, drag,    ang_drag,         height_rate,
                              joint_kp,   joint_kd,   link1,         link2,   recover_gain,     disturbance_gain,
                              recovered_height};
  for (double v : positives)
    if (!(v > 0.0)) throw ConfigError("environment constants must be positive");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(0.0 < fall_threshold && fall_threshold < recover_threshold && recover_threshold < 1.0))
    throw ConfigError("require 0 < fall_threshold < recover_threshold < 1");
}

bool CharState::all_finite() const {
  return position.allFinite() && velocity.allFinite() && std::isfinite(heading) && std::isfinite(ang_vel) &&
         std::isfinite(height) && std::isfinite(upright) && std::isfinite(joint1) && std::isfinite(joint2) &&
         std::isfinite(joint1_vel) && std::isfinite(joint2_vel);
}

Action Action::clamped() const {
  Action a;
  a.fwd = std::clamp(fwd, -1.0, 1.0);
  a.lat = std::clamp(lat, -1.0, 1.0);
  a.turn = std::clamp(turn, -1.0, 1.0);
  a.posture = std::clamp(posture, -1.0, 1.0);
  a.balance = std::clamp(balance, 0.0, 1.0);
  a.target1 = std::clamp(target1, -kPi, kPi);
  a.target2 = std::clamp(target2, -kPi, kPi);
  return a;
}

Action decode_action(const Eigen::Ref<const Eigen::VectorXf>& out) {
  if (out.size() != kActionDim) throw ConfigError("policy output must have 7 entries");
  Action a;
  a.fwd = out(0);
  a.lat = out(1);
  a.turn = out(2);
  a.posture = out(3);
  a.balance = 0.5 * (static_cast<double>(out(4)) + 1.0);
  a.target1 = kPi * std::clamp(static_cast<double>(out(5)), -1.0, 1.0);
  a.target2 = kPi * std::clamp(static_cast<double>(out(6)), -1.0, 1.0);
  return a.clamped();
}

CharState reset(const EnvConfig& config, Rng& rng, double fall_prob) {
  if (!(fall_prob >= 0.0 && fall_prob <= 1.0)) throw ConfigError("fall_prob must lie in [0, 1]");
  CharState s;
  const bool fallen = rng.bernoulli(fall_prob);
  s.heading = rng.uniform(-kPi, kPi);
  if (!fallen) return s;
  s.upright = rng.uniform(0.0, config.fall_threshold);
  s.height = rng.uniform(0.2, 1.0);
  s.joint1 = rng.uniform(-kPi, kPi);
  s.joint2 = rng.uniform(-kPi, kPi);
  s.velocity = Eigen::Vector2d(0.3 * rng.normal(), 0.3 * rng.normal());
  s.ang_vel = 0.3 * rng.normal();
  s.joint1_vel = 0.5 * rng.normal();
  s.joint2_vel = 0.5 * rng.normal();
  return s;
}

CharState step(const CharState& state, const Action& raw_action, const EnvConfig& config) {
  if (!state.all_finite()) throw SimulationFault("step: non-finite input state");
  const Action a = raw_action.clamped();
  if (!(std::isfinite(a.fwd) && std::isfinite(a.lat) && std::isfinite(a.turn) && std::isfinite(a.posture) &&
        std::isfinite(a.balance) && std::isfinite(a.target1) && std::isfinite(a.target2)))
    throw SimulationFault("step: non-finite action");

  const double dt = config.dt_physics();
  CharState s = state;
  for (int k = 0; k < config.substeps; ++k) {
    // Commands are attenuated while fallen.
    const double scale = s.upright < config.fall_threshold ? s.upright : 1.0;
    const Eigen::Vector2d accel = rotation(s.heading) * Eigen::Vector2d(a.fwd, a.lat) * (config.accel_max * scale);
    s.velocity += accel * dt - config.drag * s.velocity * dt;
    s.heading += s.ang_vel * dt;
    s.ang_vel += a.turn * config.ang_accel_max * scale * dt - config.ang_drag * s.ang_vel * dt;
    s.position += s.velocity * dt;
    s.height = std::clamp(s.height + a.posture * config.height_rate * dt, 0.2, 1.0);

    const double acc1 = config.joint_kp * (a.target1 - s.joint1) - config.joint_kd * s.joint1_vel;
    const double acc2 = config.joint_kp * (a.target2 - s.joint2) - config.joint_kd * s.joint2_vel;
    s.joint1_vel += acc1 * dt;
    s.joint2_vel += acc2 * dt;
    s.joint1 += s.joint1_vel * dt;
    s.joint2 += s.joint2_vel * dt;
    // Joint limits stop the joint.
    if (std::abs(s.joint1) > kPi) {
      s.joint1 = std::clamp(s.joint1, -kPi, kPi);
      s.joint1_vel = 0.0;
    }
    if (std::abs(s.joint2) > kPi) {
      s.joint2 = std::clamp(s.joint2, -kPi, kPi);
      s.joint2_vel = 0.0;
    }
    s.upright = std::clamp(s.upright + config.recover_gain * a.balance * dt, 0.0, 1.0);
  }
  if (!s.all_finite()) throw SimulationFault("step: simulation produced a non-finite state");
  return s;
}

Eigen::Vector2d to_local(const CharState& state, const Eigen::Vector2d& world_vec) {
  return rotation(-state.heading) * world_vec;
}

Eigen::Vector2d to_world(const CharState& state, const Eigen::Vector2d& local_vec) {
  return rotation(state.heading) * local_vec;
}

Eigen::Vector2d sword_tip_local(const CharState& s, const EnvConfig& config) {
  return {config.link1 * std::cos(s.joint1) + config.link2 * std::cos(s.joint1 + s.joint2),
          config.link1 * std::sin(s.joint1) + config.link2 * std::sin(s.joint1 + s.joint2)};
}

Eigen::Vector2d sword_tip_world(const CharState& s, const EnvConfig& config) {
  return s.position + to_world(s, sword_tip_local(s, config));
}

Observation observe(const CharState& s, const EnvConfig& config) {
  Observation o;
  const Eigen::Vector2d v = to_local(s, s.velocity);
  const Eigen::Vector2d tip = sword_tip_local(s, config);
  o << s.height, s.upright, v.x(), v.y(), s.ang_vel, s.joint1, s.joint2, s.joint1_vel, s.joint2_vel, tip.x(), tip.y();
  return o;
}

CharState state_from_observation(const Observation& obs, double heading) {
  CharState s;
  s.heading = heading;
  s.height = std::clamp(obs(kHeight), 0.2, 1.0);
  s.upright = std::clamp(obs(kUpright), 0.0, 1.0);
  s.velocity = rotation(heading) * Eigen::Vector2d(obs(kLocalVelFwd), obs(kLocalVelLat));
  s.ang_vel = obs(kAngVel);
  s.joint1 = std::clamp(obs(kJoint1), -kPi, kPi);
  s.joint2 = std::clamp(obs(kJoint2), -kPi, kPi);
  s.joint1_vel = obs(kJoint1Vel);
  s.joint2_vel = obs(kJoint2Vel);
  return s;
}

CharState apply_perturbation(const CharState& state, const Eigen::Vector2d& impulse, const EnvConfig& config) {
  CharState s = state;
  s.velocity += impulse;
  s.upright = std::clamp(s.upright - config.disturbance_gain * impulse.norm(), 0.0, 1.0);
  return s;
}

bool is_fallen(const CharState& s, const EnvConfig& config) { return s.upright < config.fall_threshold; }

bool is_recovered(const CharState& s, const EnvConfig& config) {
  return s.upright >= config.recover_threshold && s.height >= config.recovered_height;
}

// ---- Tasks ----------------------------------------------------------------

const char* to_string(Task task) {
  switch (task) {
    case Task::kReach:
      return "reach";
    case Task::kSpeed:
      return "speed";
    case Task::kSteering:
      return "steering";
    case Task::kLocation:
      return "location";
    case Task::kStrike:
      return "strike";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  for (Task t : {Task::kReach, Task::kSpeed, Task::kSteering, Task::kLocation, Task::kStrike})
    if (name == to_string(t)) return t;
  throw UsageError("unknown task '" + name + "' (expected reach, speed, steering, location or strike)");
}

Task task_of(const TaskGoal& goal) { return static_cast<Task>(goal.index()); }

TaskGoal sample_goal(Task task, Rng& rng, const CharState& state, const TaskParams& params) {
  switch (task) {
    case Task::kReach:
      return ReachGoal{state.position + uniform_in_annulus(rng, 0.0, params.reach_radius)};
    case Task::kSpeed: {
      const Eigen::Vector2d dir = random_unit(rng);
      return SpeedGoal{dir, rng.uniform(0.0, params.speed_cap)};
    }
    case Task::kSteering: {
      const Eigen::Vector2d dir = random_unit(rng);
      const Eigen::Vector2d facing = random_unit(rng);
      return SteeringGoal{dir, facing, params.steering_speed};
    }
    case Task::kLocation:
      return LocationGoal{state.position + uniform_in_annulus(rng, 0.0, params.location_radius)};
    case Task::kStrike:
      return StrikeGoal{state.position + uniform_in_annulus(rng, params.strike_min_dist, params.strike_max_dist), 0.0,
                        0.0};
  }
  throw UsageError("sample_goal: unknown task");
}

int goal_feature_dim(Task task) {
  switch (task) {
    case Task::kReach:
      return 2;
    case Task::kSpeed:
      return 3;
    case Task::kSteering:
      return 4;
    case Task::kLocation:
      return 2;
    case Task::kStrike:
      return 6;
  }
  return 0;
}

Eigen::VectorXd goal_features(const TaskGoal& goal, const CharState& state) {
  Eigen::VectorXd f(goal_feature_dim(task_of(goal)));
  std::visit(
      [&](const auto& g) {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, ReachGoal> || std::is_same_v<G, LocationGoal>) {
          f.head<2>() = to_local(state, g.target - state.position);
        } else if constexpr (std::is_same_v<G, SpeedGoal>) {
          f.head<2>() = to_local(state, g.direction);
          f(2) = g.speed;
        } else if constexpr (std::is_same_v<G, SteeringGoal>) {
          f.head<2>() = to_local(state, g.direction);
          f.tail<2>() = to_local(state, g.facing);
        } else {
          f.head<2>() = to_local(state, g.target - state.position);
          f(2) = 0.0;  // target linear velocity (static target)
          f(3) = 0.0;
          f(4) = g.tilt;
          f(5) = g.tilt_rate;
        }
      },
      goal);
  return f;
}

double task_reward(Task task, const CharState& /*state*/, const Action& /*action*/, const CharState& next,
                   const TaskGoal& goal, const EnvConfig& config) {
  switch (task) {
    case Task::kReach: {
      const auto& g = expect_goal<ReachGoal>(task, goal);
      return std::exp(-5.0 * (g.target - sword_tip_world(next, config)).squaredNorm());
    }
    case Task::kSpeed: {
      const auto& g = expect_goal<SpeedGoal>(task, goal);
      const double err = g.speed - g.direction.dot(next.velocity);
      return std::exp(-0.25 * err * err);
    }
    case Task::kSteering: {
      const auto& g = expect_goal<SteeringGoal>(task, goal);
      const double err = g.speed - g.direction.dot(next.velocity);
      const double facing = std::max(0.0, g.facing.dot(heading_vector(next.heading)));
      return 0.7 * std::exp(-0.25 * err * err) + 0.3 * facing;
    }
    case Task::kLocation: {
      const auto& g = expect_goal<LocationGoal>(task, goal);
      return std::exp(-0.5 * (g.target - next.position).squaredNorm());
    }
    case Task::kStrike: {
      const auto& g = expect_goal<StrikeGoal>(task, goal);
      // Up vector of a target tilted by phi has vertical component cos(phi).
      return 1.0 - std::cos(g.tilt);
    }
  }
  throw UsageError("task_reward: unknown task");
}

void advance_goal(TaskGoal& goal, const CharState& state, const CharState& next, const EnvConfig& config,
                  const TaskParams& params) {
  auto* g = std::get_if<StrikeGoal>(&goal);
  if (!g) return;
  const Eigen::Vector2d tip_before = sword_tip_world(state, config);
  const Eigen::Vector2d tip_after = sword_tip_world(next, config);
  const double tip_speed = (tip_after - tip_before).norm() / config.dt_control;
  const bool contact = (tip_after - g->target).norm() <= params.strike_contact_radius;
  if (contact && tip_speed > params.strike_min_tip_speed)
    g->tilt_rate = std::max(g->tilt_rate, params.strike_tilt_gain * tip_speed);
  g->tilt += g->tilt_rate * config.dt_control;
  if (g->tilt >= 0.5 * kPi) {
    g->tilt = 0.5 * kPi;
    g->tilt_rate = 0.0;
  }
}

bool episode_terminated(Task task, const CharState& state, const TaskGoal& goal, const TaskParams& params) {
  if (task != Task::kStrike) return false;
  const auto& g = expect_goal<StrikeGoal>(task, goal);
  return (state.position - g.target).norm() < params.strike_body_radius;
}

}  // namespace ase::env
