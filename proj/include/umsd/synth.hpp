#pragma once

// Procedural labeled motion for training and evaluation without external
// data. Contents are periodic gaits built from per-joint sinusoid banks;
// styles are parametric edits (amplitude, lean, bounce, tempo, arm swing)
// applied to the joint rotations so a content clip can itself carry a style.

#include "umsd/io.hpp"
#include "umsd/motion.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace umsd {

enum class ContentKind { kWalk, kRun, kKick, kJump };

ContentKind parse_content_kind(const std::string& s);
std::string to_string(ContentKind k);
std::vector<ContentKind> all_content_kinds();

struct StyleParams {
  std::string name = "neutral";
  double amplitude_scale = 1.0;
  double lean_angle = 0.0;  // radians, positive leans forward
  double bounce_gain = 0.0;
  double tempo_scale = 1.0;
  double arm_swing_scale = 1.0;
  /// Std of Gaussian position noise added by apply_style, meters. Zero
  /// makes the seed irrelevant.
  double jitter = 0.0;

  /// amplitude_scale > 0, tempo_scale in [0.5, 2], arm swing > 0, jitter >= 0.
  void validate() const;
  bool is_neutral() const;
  bool operator==(const StyleParams&) const = default;
};

/// neutral, proud, old, angry, sexy, sneaky.
std::vector<StyleParams> default_styles();

/// Periodic gait of `frames` frames at `fps`. The seed perturbs phase,
/// amplitude (+-10%) and speed (+-10%). Throws RangeError for frames < 16.
ContentRepr generate_content(const Skeleton& skel, ContentKind kind, Index frames,
                             std::uint64_t seed, double fps = 60.0);

/// Rotation-space style edit. Tempo resamples time by slerp, so the result
/// has floor((N - 1) / tempo) + 1 frames; every other edit keeps N. Neutral
/// parameters return the input unchanged.
ContentRepr stylize_content(const Skeleton& skel, const ContentRepr& content,
                            const StyleParams& params, double fps = 60.0);

/// Joint positions of the stylized content plus optional jitter. Neutral
/// parameters give forward_kinematics(content) exactly.
StyleRepr apply_style(const Skeleton& skel, const ContentRepr& content,
                      const StyleParams& params, std::uint64_t seed, double fps = 60.0);

/// Content of exactly `frames` frames rendered in a style.
ContentRepr generate_styled(const Skeleton& skel, ContentKind kind, const StyleParams& style,
                            Index frames, std::uint64_t seed, double fps = 60.0);

struct DatasetConfig {
  std::vector<ContentKind> contents = all_content_kinds();
  std::vector<StyleParams> styles = default_styles();
  int clips_per_pair = 2;
  Index min_frames = 32;
  Index max_frames = 64;
  double fps = 60.0;
  std::uint64_t seed = 0;

  void validate() const;
};

DatasetConfig parse_dataset_config(std::string_view json_text);
std::string serialize_dataset_config(const DatasetConfig& config);

/// Writes clips/<content>_<style>_<k>.json and manifest.json under out_dir.
/// Clip seeds derive from (seed, content, style, k), so output does not
/// depend on generation order.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Clips without touching the disk, in manifest order.
std::vector<MotionClip> generate_clips(const DatasetConfig& config, const Skeleton& skel);

/// Style-separability statistics of a position clip: mean torso lean, log
/// root-height variance, log foot speed relative to the hips, and log ratio
/// of wrist to foot speed.
RowVector handcrafted_features(const Skeleton& skel, const StyleRepr& clip, double fps);

/// Leave-one-out 1-nearest-neighbour accuracy on z-scored features.
double nearest_neighbor_accuracy(const Matrix& features, const std::vector<int>& labels);

}  // namespace umsd
