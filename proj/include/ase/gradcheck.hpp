#pragma once

// Central finite-difference checks of every differentiable loss, in double
// precision on small random networks.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ase/nn.hpp"

namespace ase::gradcheck {

struct FamilyResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string note;  // failure reason, empty on success
};

// |g_fd - g| / max(|g_fd|, |g|, 1e-12) over the whole parameter vector, with
// central differences of step h.
double relative_error(const std::function<double(const nn::ParamSet<double>&)>& loss,
                      const nn::ParamSet<double>& params, const nn::ParamSet<double>& grads, double h = 1e-6);

inline constexpr double kTolerance = 1e-4;

// Families: discriminator (with the gradient penalty), encoder, PPO policy,
// value, diversity. With inject_nan every instance gets a NaN parameter and
// each family must report failure.
std::vector<FamilyResult> run_all(int instances, std::uint64_t seed, bool inject_nan = false,
                                  double tolerance = kTolerance);

}  // namespace ase::gradcheck
