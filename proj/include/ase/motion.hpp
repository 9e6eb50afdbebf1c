#pragma once

// Synthetic motion clips, the dataset file format, expert transition
// sampling and feature normalization statistics.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ase/env.hpp"
#include "ase/rng.hpp"

namespace ase::motion {

using env::Observation;

inline constexpr int kFps = 30;
inline constexpr double kStdFloor = 1e-3;
// Normalized features fed to networks are clipped to +-kInputClip.
inline constexpr double kInputClip = 5.0;
// Network inputs divide by max(std, kNetworkStdFloor) so features that are
// nearly constant in the data do not magnify sub-noise deviations.
inline constexpr double kNetworkStdFloor = 0.05;

enum class ClipKind { kWalk, kRun, kWalkBack, kSidestep, kTurn, kIdle, kCrouchWalk, kSwordSwing };

const char* to_string(ClipKind kind);
ClipKind clip_kind_from_string(const std::string& name);  // throws ConfigError
const std::vector<ClipKind>& all_clip_kinds();

struct ClipParams {
  int frames = 120;
  double sign = 1.0;           // direction of sidestep / turn
  double noise_amplitude = 0.02;
};

struct MotionClip {
  std::string name;
  int fps = kFps;
  std::vector<Observation> frames;
};

struct FeatureStats {
  Observation mean = Observation::Zero();
  Observation std = Observation::Ones();
};

struct MotionDataset {
  std::vector<MotionClip> clips;
  FeatureStats stats;

  std::size_t total_frames() const;
  std::size_t total_transitions() const;
};

MotionClip generate_clip(ClipKind kind, const ClipParams& params, Rng& rng);
MotionClip generate_clip(const std::string& kind, const ClipParams& params, Rng& rng);

// `clips_per_kind` clips of each kind in `kinds` (all eight by default).
MotionDataset build_default_dataset(Rng& rng, int clips_per_kind, const std::vector<ClipKind>& kinds = {},
                                    const ClipParams& params = {});

// Takes ownership of clips and computes stats. Throws ConfigError on an empty
// dataset or a clip with fewer than two frames.
MotionDataset make_dataset(std::vector<MotionClip> clips);

// Per-feature population mean/std over all frames; std floored at 1e-3.
FeatureStats compute_stats(const MotionDataset& dataset);

Observation normalize_features(const FeatureStats& stats, const Observation& s);
Observation denormalize_features(const FeatureStats& stats, const Observation& s);
// Scaled as above and clipped to +-kInputClip, as fed to every network.
Eigen::VectorXf network_features(const FeatureStats& stats, const Observation& s);

struct Transition {
  int clip = 0;
  int frame = 0;  // the pair is (frames[frame], frames[frame + 1])
};

// K transitions uniform over all consecutive frame pairs of all clips.
// Throws UsageError when K < 1.
std::vector<Transition> sample_expert_transitions(const MotionDataset& dataset, Rng& rng, int count);

// JSON dataset file (version 1). Stats are recomputed on load.
std::string dataset_to_json(const MotionDataset& dataset);
MotionDataset dataset_from_json(const std::string& text);
void save_dataset(const MotionDataset& dataset, const std::filesystem::path& path);
MotionDataset load_dataset(const std::filesystem::path& path);

}  // namespace ase::motion
