#pragma once

// Inference with a trained checkpoint: stylization by ancestral sampling,
// the same-style reconstruction check, and the evaluation grid.

#include "umsd/metrics.hpp"
#include "umsd/training.hpp"

#include <string>
#include <vector>

namespace umsd {

/// Encodes (content, style), samples the content state from noise and
/// renormalizes the quaternions. Root translation is the content's unless
/// the model diffuses it. Deterministic in seed.
ContentRepr transfer(const Checkpoint& ckpt, const Skeleton& skel, const ContentRepr& content,
                     const StyleRepr& style, std::uint64_t seed);

/// sqrt of the mean squared joint distance over frames and joints.
double position_rmse(const Skeleton& skel, const ContentRepr& a, const ContentRepr& b);

/// First `window` frames with the root moved above the origin.
ContentRepr crop(const ContentRepr& c, Index window);

struct ReconstructionCheck {
  /// Content clip reused as its own style clip.
  double same_clip_rmse = 0.0;
  /// Content paired with a different clip of the same style.
  double validation_rmse = 0.0;
  int pairs = 0;
  bool passed = false;
};

/// Same-style reconstruction on `clips` (cropped to the training window):
/// passes when same_clip_rmse < 1.2 * validation_rmse.
ReconstructionCheck reconstruction_check(const Checkpoint& ckpt, const Skeleton& skel,
                                         const std::vector<MotionClip>& clips, std::uint64_t seed);

inline constexpr double kReconstructionSlack = 1.2;

/// One generated clip per (content label, style label) of the dataset: the
/// first clip of that content (preferring style label 0) stylized by the
/// first clip of that style with a different content when one exists.
std::vector<MotionClip> evaluation_grid(const Checkpoint& ckpt, const Dataset& data,
                                        std::uint64_t seed);

struct EvalExtractors {
  FeatureExtractor style;
  FeatureExtractor content;
};

/// Style and content classifiers trained on the dataset clips.
EvalExtractors train_extractors(const Dataset& data, std::uint64_t seed);

/// FMD and KMD of generated vs real style features, diversity of the
/// generated features, CRA and SRA of the generated clips.
std::vector<MetricRow> compute_metrics(const std::vector<MotionClip>& generated,
                                       const std::vector<MotionClip>& real,
                                       const EvalExtractors& extractors, std::uint64_t seed,
                                       bool* fmd_regularized = nullptr);

}  // namespace umsd
