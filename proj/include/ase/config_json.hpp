#pragma once

// JSON mappings for the module configs embedded in checkpoint manifests.

#include <nlohmann/json.hpp>

#include "ase/asecore.hpp"
#include "ase/env.hpp"
#include "ase/rl.hpp"

namespace ase::env {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnvConfig, dt_control, substeps, accel_max, ang_accel_max, drag, ang_drag,
                                   height_rate, joint_kp, joint_kd, link1, link2, recover_gain, fall_threshold,
                                   recover_threshold, recovered_height, disturbance_gain)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TaskParams, reach_radius, speed_cap, steering_speed, location_radius,
                                   strike_min_dist, strike_max_dist, strike_contact_radius, strike_min_tip_speed,
                                   strike_tilt_gain, strike_body_radius)
}  // namespace ase::env

namespace ase::rl {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PPOConfig, gamma, gae_lambda, td_lambda, clip, epochs, minibatches, stepsize)
}  // namespace ase::rl

namespace ase::core {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PretrainHyper, beta, w_gp, w_div, kappa, clamp_eps, latent_dim)
}  // namespace ase::core
