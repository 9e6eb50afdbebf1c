#pragma once

// Hypersphere skill space: prior, normalization, cosine distance and
// per-episode latent schedules.

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "ase/rng.hpp"

namespace ase::latent {

// Unit vector on the (d-1)-sphere. Only constructible through normalize().
class LatentSkill {
 public:
  const Eigen::VectorXf& z() const { return z_; }
  int dim() const { return static_cast<int>(z_.size()); }

  // Restores a previously produced skill bit-exactly (e.g. from a checkpoint).
  // Throws ConfigError unless the vector is unit norm within 1e-5.
  static LatentSkill from_stored(const Eigen::VectorXf& z);

  friend bool operator==(const LatentSkill&, const LatentSkill&) = default;

 private:
  explicit LatentSkill(Eigen::VectorXf z) : z_(std::move(z)) {}
  Eigen::VectorXf z_;

  friend std::optional<LatentSkill> normalize(const Eigen::VectorXd& raw);
};

inline constexpr double kMinRawNorm = 1e-8;

// raw / |raw|; nullopt when |raw| <= 1e-8 (caller must redraw).
std::optional<LatentSkill> normalize(const Eigen::VectorXd& raw);
std::optional<LatentSkill> normalize(const Eigen::VectorXf& raw);

// Uniform sample on the (d-1)-sphere via a normalized standard Gaussian.
LatentSkill sample_prior(Rng& rng, int dim);

// 0.5 (1 - z1.z2), in [0, 1].
double latent_distance(const LatentSkill& a, const LatentSkill& b);

struct LatentSchedule {
  std::vector<LatentSkill> skills;
  std::vector<int> index;  // per timestep, into `skills`
  int min_hold = 1;
  int max_hold = 1;

  int length() const { return static_cast<int>(index.size()); }
  const LatentSkill& at(int t) const { return skills[static_cast<std::size_t>(index[t])]; }
};

// Covers exactly `steps` timesteps with runs of uniform length in
// [min_hold, max_hold] (the last run may be truncated); each run draws a
// fresh prior sample.
LatentSchedule make_schedule(Rng& rng, int steps, int min_hold, int max_hold, int dim);

}  // namespace ase::latent
