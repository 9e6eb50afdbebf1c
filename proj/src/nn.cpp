#include "ase/nn.hpp"

namespace ase::nn {

const char* to_string(OutputActivation act) {
  switch (act) {
    case OutputActivation::kLinear:
      return "linear";
    case OutputActivation::kSigmoid:
      return "sigmoid";
    case OutputActivation::kUnitNormalize:
      return "unit-normalize";
  }
  return "linear";
}

OutputActivation output_activation_from_string(const std::string& name) {
  if (name == "linear") return OutputActivation::kLinear;
  if (name == "sigmoid") return OutputActivation::kSigmoid;
  if (name == "unit-normalize") return OutputActivation::kUnitNormalize;
  throw ConfigError("unknown output activation '" + name + "'");
}

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("network dims must be >= 1");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("hidden layer widths must be >= 1");
}

}  // namespace ase::nn
