#include "ase/rng.hpp"

#include <sstream>

#include "ase/errors.hpp"

namespace ase {

Rng Rng::stream(std::uint64_t master_seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                    0x41534531u};
  Rng rng;
  rng.engine_.seed(seq);
  return rng;
}

std::string Rng::serialize() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

Rng Rng::deserialize(const std::string& text) {
  std::istringstream in(text);
  Rng rng;
  in >> rng.engine_;
  if (in.fail()) throw ConfigError("corrupt RNG state in checkpoint");
  return rng;
}

}  // namespace ase
