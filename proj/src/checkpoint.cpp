#include "ase/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ase/errors.hpp"

namespace ase::ckpt {

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void Checkpoint::add_set(const std::string& prefix, const nn::ParamSet<float>& set) {
  for (const auto& a : set) arrays.push_back({prefix + "/" + a.name, a.values, a.is_vector});
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

nn::ParamSet<float> Checkpoint::get_set(const std::string& prefix, const nn::ParamSet<float>& like) const {
  nn::ParamSet<float> out;
  for (const auto& want : like) {
    const std::string full = prefix + "/" + want.name;
    const nn::ParamArray<float>* found = nullptr;
    for (const auto& a : arrays)
      if (a.name == full) found = &a;
    if (!found) throw ConfigError("checkpoint is missing array '" + full + "'");
    if (found->values.rows() != want.values.rows() || found->values.cols() != want.values.cols())
      throw ConfigError("checkpoint array '" + full + "' has an unexpected shape");
    out.add(want.name, found->values, want.is_vector);
  }
  return out;
}

nn::ParamSet<float> Checkpoint::get_prefixed(const std::string& prefix) const {
  const std::string head = prefix + "/";
  nn::ParamSet<float> out;
  for (const auto& a : arrays)
    if (a.name.compare(0, head.size(), head) == 0) out.add(a.name.substr(head.size()), a.values, a.is_vector);
  if (out.count() == 0) throw ConfigError("checkpoint has no arrays under '" + prefix + "'");
  return out;
}

std::string encode(const Checkpoint& ckpt) {
  nlohmann::json manifest = ckpt.manifest;
  manifest["version"] = kVersion;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t total = 0;
  for (const auto& a : ckpt.arrays) {
    table.push_back({{"name", a.name}, {"shape", a.shape()}});
    total += a.size();
  }
  manifest["arrays"] = std::move(table);
  manifest["total_floats"] = total;
  const std::string text = manifest.dump();

  std::string out(kMagic, 8);
  const std::uint64_t len = text.size();
  put_u32_le(out, static_cast<std::uint32_t>(len & 0xffffffffu));
  put_u32_le(out, static_cast<std::uint32_t>(len >> 32));
  out += text;
  out.reserve(out.size() + 4 * total);
  for (const auto& a : ckpt.arrays) {
    const float* data = a.values.data();
    for (Eigen::Index i = 0; i < a.values.size(); ++i) put_u32_le(out, std::bit_cast<std::uint32_t>(data[i]));
  }
  return out;
}

Checkpoint decode(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kMagic) != 0) throw ConfigError("not an ASE checkpoint (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t len = static_cast<std::uint64_t>(get_u32_le(p + 8)) |
                            (static_cast<std::uint64_t>(get_u32_le(p + 12)) << 32);
  if (16 + len > bytes.size()) throw ConfigError("truncated checkpoint manifest");
  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (ckpt.manifest.value("version", 0) != kVersion) throw ConfigError("unsupported checkpoint version");
  const std::uint64_t total = ckpt.manifest.at("total_floats").get<std::uint64_t>();
  const std::size_t payload = 16 + len;
  if (bytes.size() - payload != 4 * total)
    throw ConfigError("checkpoint payload length does not match the manifest");

  std::size_t offset = payload;
  std::uint64_t seen = 0;
  for (const auto& entry : ckpt.manifest.at("arrays")) {
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.empty() || shape.size() > 2) throw ConfigError("checkpoint arrays must be 1-D or 2-D");
    const auto rows = static_cast<Eigen::Index>(shape[0]);
    const auto cols = static_cast<Eigen::Index>(shape.size() == 2 ? shape[1] : 1);
    nn::ParamArray<float> a{entry.at("name").get<std::string>(), nn::Matrix<float>(rows, cols), shape.size() == 1};
    seen += static_cast<std::uint64_t>(rows * cols);
    if (seen > total) throw ConfigError("checkpoint array table exceeds the payload");
    float* data = a.values.data();
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      data[i] = std::bit_cast<float>(get_u32_le(p + offset));
      offset += 4;
    }
    ckpt.arrays.push_back(std::move(a));
  }
  if (seen != total) throw ConfigError("checkpoint array table does not cover the payload");
  ckpt.manifest.erase("arrays");
  ckpt.manifest.erase("total_floats");
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return decode(buf.str());
}

nlohmann::json spec_to_json(const nn::MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dims", spec.hidden_dims},
          {"output_dim", spec.output_dim},
          {"output_activation", nn::to_string(spec.output_activation)}};
}

nn::MlpSpec spec_from_json(const nlohmann::json& j) {
  nn::MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.output_activation = nn::output_activation_from_string(j.at("output_activation").get<std::string>());
  spec.validate();
  return spec;
}

}  // namespace ase::ckpt
