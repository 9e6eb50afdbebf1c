#include "ase/latent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ase/errors.hpp"

namespace ase::latent {

std::optional<LatentSkill> normalize(const Eigen::VectorXd& raw) {
  const double norm = raw.norm();
  if (!(norm > kMinRawNorm)) return std::nullopt;
  return LatentSkill((raw / norm).cast<float>());
}

LatentSkill LatentSkill::from_stored(const Eigen::VectorXf& z) {
  const double norm = z.cast<double>().norm();
  if (std::abs(norm - 1.0) > 1e-5) throw ConfigError("stored latent is not unit norm");
  return LatentSkill(z);
}

std::optional<LatentSkill> normalize(const Eigen::VectorXf& raw) { return normalize(Eigen::VectorXd(raw.cast<double>())); }

LatentSkill sample_prior(Rng& rng, int dim) {
  if (dim < 2) throw ConfigError("latent dimension must be >= 2, got " + std::to_string(dim));
  Eigen::VectorXd raw(dim);
  while (true) {
    for (int i = 0; i < dim; ++i) raw(i) = rng.normal();
    if (auto z = normalize(raw)) return *z;
  }
}

double latent_distance(const LatentSkill& a, const LatentSkill& b) {
  if (a.dim() != b.dim()) throw ConfigError("latent_distance: dimension mismatch");
  const double dot = a.z().cast<double>().dot(b.z().cast<double>());
  return std::clamp(0.5 * (1.0 - dot), 0.0, 1.0);
}

LatentSchedule make_schedule(Rng& rng, int steps, int min_hold, int max_hold, int dim) {
  if (!(1 <= min_hold && min_hold <= max_hold && max_hold <= steps))
    throw ConfigError("latent schedule requires 1 <= min_hold <= max_hold <= T");
  LatentSchedule schedule;
  schedule.min_hold = min_hold;
  schedule.max_hold = max_hold;
  schedule.index.reserve(static_cast<std::size_t>(steps));
  while (schedule.length() < steps) {
    const int hold = rng.uniform_int(min_hold, max_hold);
    schedule.skills.push_back(sample_prior(rng, dim));
    const int id = static_cast<int>(schedule.skills.size()) - 1;
    for (int k = 0; k < hold && schedule.length() < steps; ++k) schedule.index.push_back(id);
  }
  return schedule;
}

}  // namespace ase::latent
