#pragma once

// Skeletons, pose representations and forward kinematics.
//
// Conventions: y is up, z is forward, x points to the character's left.
// Quaternions are stored (w, x, y, z) and content frames are rows of a
// N x 4J matrix; style frames are rows of a N x 3J matrix of global joint
// positions in meters.

#include "umsd/common.hpp"
#include "umsd/quaternion.hpp"

#include <string>
#include <variant>
#include <vector>

namespace umsd {

struct Skeleton {
  std::vector<int> parents;  // parents[0] == -1
  std::vector<Vector3> offsets;
  std::vector<int> foot_joints;
  std::vector<std::string> names;

  int joint_count() const { return static_cast<int>(parents.size()); }

  /// Throws DimensionError / RangeError if any structural invariant fails.
  void validate() const;

  int find(std::string_view name) const;

  /// Positions of the rest pose with the root at the origin.
  Matrix rest_positions() const;

  /// The 21-joint humanoid used by the synthetic generator.
  static Skeleton humanoid21();

  bool operator==(const Skeleton&) const = default;
};

/// Joint indices of Skeleton::humanoid21().
namespace joints {
inline constexpr int kHips = 0, kSpine = 1, kSpine1 = 2, kSpine2 = 3,
                     kNeck = 4, kHead = 5, kHeadEnd = 6, kLShoulder = 7,
                     kLElbow = 8, kLWrist = 9, kRShoulder = 10, kRElbow = 11,
                     kRWrist = 12, kLHip = 13, kLKnee = 14, kLAnkle = 15,
                     kLToe = 16, kRHip = 17, kRKnee = 18, kRAnkle = 19,
                     kRToe = 20;
inline constexpr int kCount = 21;
inline constexpr double kRootHeight = 0.93;
}  // namespace joints

struct ContentRepr {
  Matrix rotations;         // N x 4J
  Matrix root_translation;  // N x 3

  Index frames() const { return rotations.rows(); }
  int joint_count() const { return static_cast<int>(rotations.cols() / 4); }
  void validate() const;
  bool operator==(const ContentRepr& o) const {
    return rotations == o.rotations && root_translation == o.root_translation;
  }
};

struct StyleRepr {
  Matrix positions;  // N x 3J

  Index frames() const { return positions.rows(); }
  int joint_count() const { return static_cast<int>(positions.cols() / 3); }
  void validate() const;
  bool operator==(const StyleRepr& o) const { return positions == o.positions; }
};

enum class ReprKind { kContent, kStyle };

struct MotionClip {
  std::variant<ContentRepr, StyleRepr> repr;
  double fps = 60.0;
  int content_label = 0;
  int style_label = 0;

  ReprKind kind() const {
    return std::holds_alternative<ContentRepr>(repr) ? ReprKind::kContent
                                                     : ReprKind::kStyle;
  }
  Index frames() const;
  int joint_count() const;
  void validate() const;
  const ContentRepr& content() const { return std::get<ContentRepr>(repr); }
  const StyleRepr& style() const { return std::get<StyleRepr>(repr); }

  bool operator==(const MotionClip&) const = default;
};

// Forward kinematics of one frame. `quats` holds J quaternions (w, x, y, z),
// normalized on the fly; returns J x 3 global positions.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 3> fk_frame(
    const Skeleton& skel, const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& quats,
    const Eigen::Matrix<T, 3, 1>& root) {
  const int J = skel.joint_count();
  Eigen::Matrix<T, Eigen::Dynamic, 3> pos(J, 3);
  std::vector<Eigen::Matrix<T, 3, 3>> global(J);
  for (int j = 0; j < J; ++j) {
    Quat<T> q(quats[4 * j], quats[4 * j + 1], quats[4 * j + 2], quats[4 * j + 3]);
    q.normalize();
    const Eigen::Matrix<T, 3, 3> local = q.toRotationMatrix();
    const int p = skel.parents[j];
    if (p < 0) {
      global[j] = local;
      pos.row(j) = root.transpose();
    } else {
      global[j] = global[p] * local;
      pos.row(j) = pos.row(p) +
                   (global[p] * skel.offsets[j].template cast<T>()).transpose();
    }
  }
  return pos;
}

/// Global joint positions for every frame. Throws DimensionError on a joint
/// count mismatch.
StyleRepr forward_kinematics(const Skeleton& skel, const ContentRepr& content);

/// Unit norm and w >= 0 for every quaternion. Throws DegenerateError when a
/// quaternion has norm below 1e-8.
ContentRepr normalize_quaternions(const ContentRepr& content);

/// Per-frame token matrix plus whatever is needed to rebuild the clip.
struct TokenSequence {
  Matrix tokens;            // N x 4J (content) or N x 3J (style)
  Matrix root_translation;  // N x 3, empty for style clips
  ReprKind kind = ReprKind::kContent;
  double fps = 60.0;
  int content_label = 0;
  int style_label = 0;
};

TokenSequence flatten(const MotionClip& clip);
MotionClip unflatten(const TokenSequence& seq);

/// Content-stream tokens as seen by the attention encoder: [rotations | root].
Matrix content_stream_tokens(const ContentRepr& content);

/// Shift root translation so frame 0 sits above the origin (x = z = 0).
ContentRepr canonicalize_root(const ContentRepr& content);

/// Slice frames [begin, begin + count).
ContentRepr slice_frames(const ContentRepr& c, Index begin, Index count);

/// Feet in contact: height below `height_threshold` and frame-to-frame speed
/// below `speed_threshold`. Returns (N - 1) x |foot_joints|.
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> foot_contact_mask(
    const Skeleton& skel, const StyleRepr& positions,
    double height_threshold = 0.05, double speed_threshold = 0.02);

}  // namespace umsd
