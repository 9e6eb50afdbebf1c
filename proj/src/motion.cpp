#include "ase/motion.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ase/errors.hpp"

namespace ase::motion {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// a * sin(2 pi f t + phase) with its exact time derivative.
struct Sinusoid {
  double amplitude = 0.0;
  double freq = 0.0;
  double phase = 0.0;

  double value(double t) const { return amplitude * std::sin(kTwoPi * freq * t + phase); }
  double rate(double t) const { return amplitude * kTwoPi * freq * std::cos(kTwoPi * freq * t + phase); }
};

Sinusoid random_noise(Rng& rng, double amplitude, double f_lo, double f_hi) {
  Sinusoid s;
  s.amplitude = amplitude;
  s.freq = rng.uniform(f_lo, f_hi);
  s.phase = rng.uniform(0.0, kTwoPi);
  return s;
}

struct Profile {
  double vel_fwd = 0.0;
  double vel_lat = 0.0;
  double ang_vel = 0.0;
  double height = 1.0;
  Sinusoid joint1;
  Sinusoid joint2;
  double joint1_offset = 0.0;
  double joint2_offset = 0.0;
};

Profile profile_for(ClipKind kind, const ClipParams& params, Rng& rng) {
  Profile p;
  const double phase = rng.uniform(0.0, kTwoPi);
  const double sign = params.sign >= 0.0 ? 1.0 : -1.0;
  switch (kind) {
    case ClipKind::kWalk:
      p.vel_fwd = 1.2;
      p.joint1 = {0.25, 1.0, phase};
      break;
    case ClipKind::kRun:
      p.vel_fwd = 3.5;
      p.joint1 = {0.4, 1.5, phase};
      break;
    case ClipKind::kWalkBack:
      p.vel_fwd = -1.0;
      p.joint1 = {0.2, 0.9, phase};
      break;
    case ClipKind::kSidestep:
      p.vel_lat = sign * 1.0;
      p.joint1 = {0.15, 0.9, phase};
      break;
    case ClipKind::kTurn:
      p.ang_vel = sign * 1.5;
      break;
    case ClipKind::kIdle:
      break;
    case ClipKind::kCrouchWalk:
      p.vel_fwd = 1.0;
      p.height = 0.5;
      p.joint1 = {0.2, 0.8, phase};
      break;
    case ClipKind::kSwordSwing:
      p.joint1 = {1.0, 0.8, phase};
      p.joint2 = {0.5, 0.8, phase + 0.8};
      p.joint2_offset = 0.6;
      break;
  }
  return p;
}

}  // namespace

const char* to_string(ClipKind kind) {
  switch (kind) {
    case ClipKind::kWalk:
      return "walk";
    case ClipKind::kRun:
      return "run";
    case ClipKind::kWalkBack:
      return "walk-back";
    case ClipKind::kSidestep:
      return "sidestep";
    case ClipKind::kTurn:
      return "turn";
    case ClipKind::kIdle:
      return "idle";
    case ClipKind::kCrouchWalk:
      return "crouch-walk";
    case ClipKind::kSwordSwing:
      return "sword-swing";
  }
  return "?";
}

const std::vector<ClipKind>& all_clip_kinds() {
  static const std::vector<ClipKind> kinds = {ClipKind::kWalk, ClipKind::kRun,        ClipKind::kWalkBack,
                                              ClipKind::kSidestep, ClipKind::kTurn,   ClipKind::kIdle,
                                              ClipKind::kCrouchWalk, ClipKind::kSwordSwing};
  return kinds;
}

ClipKind clip_kind_from_string(const std::string& name) {
  for (ClipKind k : all_clip_kinds())
    if (name == to_string(k)) return k;
  throw ConfigError("unknown motion clip kind '" + name + "'");
}

std::size_t MotionDataset::total_frames() const {
  std::size_t n = 0;
  for (const auto& c : clips) n += c.frames.size();
  return n;
}

std::size_t MotionDataset::total_transitions() const {
  std::size_t n = 0;
  for (const auto& c : clips) n += c.frames.size() - 1;
  return n;
}

MotionClip generate_clip(ClipKind kind, const ClipParams& params, Rng& rng) {
  if (params.frames < 2) throw ConfigError("a motion clip needs at least two frames");
  const Profile p = profile_for(kind, params, rng);
  const double amp = params.noise_amplitude;

  // Velocity-type features get direct smooth noise; angle-type features get
  // slow noise whose derivative enters the joint velocities.
  const Sinusoid n_vfwd = random_noise(rng, amp, 0.2, 2.0);
  const Sinusoid n_vlat = random_noise(rng, amp, 0.2, 2.0);
  const Sinusoid n_ang = random_noise(rng, amp, 0.2, 2.0);
  const Sinusoid n_q1 = random_noise(rng, amp, 0.05, 0.15);
  const Sinusoid n_q2 = random_noise(rng, amp, 0.05, 0.15);
  const Sinusoid n_height = random_noise(rng, amp, 0.1, 0.5);

  const env::EnvConfig geometry;
  MotionClip clip;
  clip.name = to_string(kind);
  clip.frames.reserve(static_cast<std::size_t>(params.frames));
  for (int i = 0; i < params.frames; ++i) {
    const double t = static_cast<double>(i) / kFps;
    env::CharState s;
    // Standing clips sit exactly on the height clamp, which a policy can hold;
    // crouching clips oscillate around their posture. Uprightness stays 1.
    s.height = p.height >= 1.0 ? 1.0 : p.height + n_height.value(t);
    s.upright = 1.0;
    s.joint1 = p.joint1_offset + p.joint1.value(t) + n_q1.value(t);
    s.joint2 = p.joint2_offset + p.joint2.value(t) + n_q2.value(t);
    s.joint1_vel = p.joint1.rate(t) + n_q1.rate(t);
    s.joint2_vel = p.joint2.rate(t) + n_q2.rate(t);
    s.ang_vel = p.ang_vel + n_ang.value(t);
    // Heading 0: local and world frames coincide.
    s.velocity = Eigen::Vector2d(p.vel_fwd + n_vfwd.value(t), p.vel_lat + n_vlat.value(t));
    clip.frames.push_back(env::observe(s, geometry));
  }
  return clip;
}

MotionClip generate_clip(const std::string& kind, const ClipParams& params, Rng& rng) {
  return generate_clip(clip_kind_from_string(kind), params, rng);
}

MotionDataset make_dataset(std::vector<MotionClip> clips) {
  if (clips.empty()) throw ConfigError("motion dataset must contain at least one clip");
  for (const auto& c : clips)
    if (c.frames.size() < 2) throw ConfigError("motion clip '" + c.name + "' has fewer than two frames");
  MotionDataset ds;
  ds.clips = std::move(clips);
  ds.stats = compute_stats(ds);
  return ds;
}

MotionDataset build_default_dataset(Rng& rng, int clips_per_kind, const std::vector<ClipKind>& kinds,
                                    const ClipParams& params) {
  if (clips_per_kind < 1) throw ConfigError("clips_per_kind must be >= 1");
  const auto& use = kinds.empty() ? all_clip_kinds() : kinds;
  std::vector<MotionClip> clips;
  for (ClipKind kind : use) {
    for (int i = 0; i < clips_per_kind; ++i) {
      ClipParams p = params;
      // Alternate directions for the mirrored kinds.
      if (kind == ClipKind::kSidestep || kind == ClipKind::kTurn) p.sign = (i % 2 == 0) ? params.sign : -params.sign;
      MotionClip clip = generate_clip(kind, p, rng);
      clip.name += "_" + std::to_string(i);
      clips.push_back(std::move(clip));
    }
  }
  return make_dataset(std::move(clips));
}

FeatureStats compute_stats(const MotionDataset& dataset) {
  FeatureStats stats;
  const double n = static_cast<double>(dataset.total_frames());
  if (n == 0) throw ConfigError("compute_stats: empty dataset");
  Observation sum = Observation::Zero();
  for (const auto& c : dataset.clips)
    for (const auto& f : c.frames) sum += f;
  stats.mean = sum / n;
  Observation sq = Observation::Zero();
  for (const auto& c : dataset.clips)
    for (const auto& f : c.frames) sq += (f - stats.mean).cwiseAbs2();
  stats.std = (sq / n).cwiseSqrt().cwiseMax(kStdFloor);
  return stats;
}

Observation normalize_features(const FeatureStats& stats, const Observation& s) {
  return (s - stats.mean).cwiseQuotient(stats.std);
}

Observation denormalize_features(const FeatureStats& stats, const Observation& s) {
  return s.cwiseProduct(stats.std) + stats.mean;
}

Eigen::VectorXf network_features(const FeatureStats& stats, const Observation& s) {
  const Observation scaled = (s - stats.mean).cwiseQuotient(stats.std.cwiseMax(kNetworkStdFloor));
  return scaled.cwiseMax(-kInputClip).cwiseMin(kInputClip).cast<float>();
}

std::vector<Transition> sample_expert_transitions(const MotionDataset& dataset, Rng& rng, int count) {
  if (count < 1) throw UsageError("sample_expert_transitions: K must be >= 1");
  const auto total = static_cast<int>(dataset.total_transitions());
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    int idx = rng.uniform_int(0, total - 1);
    int clip = 0;
    while (idx >= static_cast<int>(dataset.clips[clip].frames.size()) - 1) {
      idx -= static_cast<int>(dataset.clips[clip].frames.size()) - 1;
      ++clip;
    }
    out.push_back({clip, idx});
  }
  return out;
}

std::string dataset_to_json(const MotionDataset& dataset) {
  nlohmann::json j;
  j["version"] = 1;
  j["fps"] = kFps;
  j["feature_names"] = env::feature_names();
  j["clips"] = nlohmann::json::array();
  for (const auto& c : dataset.clips) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : c.frames) frames.push_back(std::vector<double>(f.data(), f.data() + f.size()));
    j["clips"].push_back({{"name", c.name}, {"frames", std::move(frames)}});
  }
  return j.dump();
}

MotionDataset dataset_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("dataset file is not valid JSON: ") + e.what());
  }
  if (j.value("version", 0) != 1) throw ConfigError("unsupported dataset version");
  if (j.value("fps", 0) != kFps) throw ConfigError("dataset fps must be 30");
  const auto names = j.at("feature_names").get<std::vector<std::string>>();
  const auto& expected = env::feature_names();
  if (names.size() != expected.size() || !std::equal(names.begin(), names.end(), expected.begin()))
    throw ConfigError("dataset feature_names do not match the observation layout");
  std::vector<MotionClip> clips;
  for (const auto& jc : j.at("clips")) {
    MotionClip clip;
    clip.name = jc.at("name").get<std::string>();
    for (const auto& jf : jc.at("frames")) {
      const auto values = jf.get<std::vector<double>>();
      if (values.size() != static_cast<std::size_t>(env::kObsDim))
        throw ConfigError("clip '" + clip.name + "' has a frame with " + std::to_string(values.size()) + " features");
      clip.frames.push_back(Eigen::Map<const Observation>(values.data()));
    }
    clips.push_back(std::move(clip));
  }
  return make_dataset(std::move(clips));
}

void save_dataset(const MotionDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset file " + path.string());
  out << dataset_to_json(dataset) << '\n';
}

MotionDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read dataset file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return dataset_from_json(buf.str());
}

}  // namespace ase::motion
