#pragma once

#include <stdexcept>
#include <string>

namespace ase {

// Invalid configuration: bad shapes, unknown keys, incompatible checkpoints.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward without a matching forward cache.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite gradients or parameters during an optimizer step.
class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite state produced by the character simulator.
class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or rewards during a training loop.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ase
