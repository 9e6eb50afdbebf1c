#include "ase/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "ase/config_json.hpp"
#include "ase/errors.hpp"

namespace ase::eval {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, coverage_trajs, coverage_len, transition_trajs, switch_min, switch_max,
                                   destination_len, recovery_trials, impulse_min, impulse_max, recovery_timeout,
                                   recovery_min_hold, recovery_max_hold, threads)
}  // namespace ase::eval

namespace ase::cli {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json to_json(const RunConfig& c) {
  json pre = pretrain::config_to_json(c.pretrain);
  for (const char* k : {"preset", "seed", "threads", "env"}) pre.erase(k);
  json task = tasktrain::config_to_json(c.task);
  task.erase("seed");
  task.erase("threads");
  json ev = c.eval;
  ev.erase("threads");
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"out", c.out},
          {"threads", c.threads},
          {"env", c.env},
          {"data",
           {{"clips_per_kind", c.data.clips_per_kind},
            {"kinds", c.data.kinds},
            {"frames", c.data.frames},
            {"noise_amplitude", c.data.noise_amplitude},
            {"path", c.data.path}}},
          {"pretrain", std::move(pre)},
          {"task", std::move(task)},
          {"eval", std::move(ev)}};
}

RunConfig from_json(const json& j) {
  try {
    RunConfig c;
    j.at("preset").get_to(c.preset);
    j.at("seed").get_to(c.seed);
    j.at("out").get_to(c.out);
    j.at("threads").get_to(c.threads);
    j.at("env").get_to(c.env);
    const json& d = j.at("data");
    d.at("clips_per_kind").get_to(c.data.clips_per_kind);
    d.at("kinds").get_to(c.data.kinds);
    d.at("frames").get_to(c.data.frames);
    d.at("noise_amplitude").get_to(c.data.noise_amplitude);
    d.at("path").get_to(c.data.path);
    json pre = j.at("pretrain");
    pre["preset"] = c.preset;
    pre["seed"] = c.seed;
    pre["threads"] = c.threads;
    pre["env"] = c.env;
    c.pretrain = pretrain::config_from_json(pre);
    json task = j.at("task");
    task["seed"] = c.seed;
    task["threads"] = c.threads;
    c.task = tasktrain::config_from_json(task);
    json ev = j.at("eval");
    ev["threads"] = c.threads;
    ev.get_to(c.eval);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

void flatten_into(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten_into(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

json* find_path(json& root, const std::string& key) {
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

template <typename I>
I parse_integer(const std::string& key, const std::string& text) {
  I v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("key '" + key + "' expects an integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects a number, got '" + text + "'");
}

json parse_like(const std::string& key, const json& like, const std::string& raw) {
  std::string text = trim(raw);
  switch (like.type()) {
    case json::value_t::boolean:
      if (text == "true") return true;
      if (text == "false") return false;
      throw ConfigError("key '" + key + "' expects true or false, got '" + text + "'");
    case json::value_t::number_unsigned:
      return parse_integer<std::uint64_t>(key, text);
    case json::value_t::number_integer:
      return parse_integer<std::int64_t>(key, text);
    case json::value_t::number_float:
      return parse_real(key, text);
    case json::value_t::string:
      if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = text.substr(1, text.size() - 2);
      return text;
    case json::value_t::array: {
      json out = json::array();
      const json elem = like.empty() ? json("") : like.front();
      if (text.empty()) return out;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(parse_like(key, elem, item));
      return out;
    }
    default:
      throw ConfigError("key '" + key + "' cannot be set from a config file");
  }
}

void apply(json& root, const std::string& key, const std::string& value) {
  if (key == "preset") throw ConfigError("preset must be chosen before other keys are applied");
  json* node = find_path(root, key);
  if (node == nullptr || node->is_object()) throw ConfigError("unknown configuration key '" + key + "'");
  *node = parse_like(key, *node, value);
}

}  // namespace

DataConfig::DataConfig() {
  for (motion::ClipKind k : motion::all_clip_kinds()) kinds.emplace_back(motion::to_string(k));
}

RunConfig RunConfig::preset_named(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.pretrain = pretrain::PretrainRunConfig::preset_named(name);
  if (name == "paper") {
    c.task.policy_hidden = {1024, 512};
    c.task.value_hidden = {1024, 512};
    c.task.ppo.stepsize = 2e-5;
  }
  return c;
}

pretrain::PretrainRunConfig RunConfig::pretrain_config() const {
  pretrain::PretrainRunConfig c = pretrain;
  c.preset = preset;
  c.seed = seed;
  c.threads = threads;
  c.env = env;
  return c;
}

tasktrain::TaskTrainConfig RunConfig::task_config() const {
  tasktrain::TaskTrainConfig c = task;
  c.seed = seed;
  c.threads = threads;
  return c;
}

eval::EvalConfig RunConfig::eval_config() const {
  eval::EvalConfig c = eval;
  c.threads = threads;
  return c;
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (out.empty()) throw ConfigError("out must not be empty");
  if (data.clips_per_kind < 1) throw ConfigError("data.clips_per_kind must be >= 1");
  if (data.frames < 2) throw ConfigError("data.frames must be >= 2");
  if (!(data.noise_amplitude >= 0)) throw ConfigError("data.noise_amplitude must be >= 0");
  if (data.kinds.empty()) throw ConfigError("data.kinds must name at least one clip kind");
  for (const auto& k : data.kinds) motion::clip_kind_from_string(k);
  env.validate();
  pretrain_config().validate();
  task_config().validate();
  eval_config().validate();
}

std::map<std::string, nlohmann::json> flatten(const RunConfig& config) {
  std::map<std::string, nlohmann::json> out;
  flatten_into(to_json(config), "", out);
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_entries(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' appears twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

RunConfig parse_config(const std::string& text, const std::optional<std::string>& preset_override) {
  const auto entries = parse_entries(text);
  std::string preset = "desk";
  for (const auto& [k, v] : entries)
    if (k == "preset") preset = v;
  if (preset_override) preset = *preset_override;
  json root = to_json(RunConfig::preset_named(preset));
  for (const auto& [k, v] : entries)
    if (k != "preset") apply(root, k, v);
  return from_json(root);
}

RunConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), preset_override);
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  json root = to_json(config);
  apply(root, key, value);
  config = from_json(root);
}

}  // namespace ase::cli
