#include "umsd/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace umsd {

void Skeleton::validate() const {
  const int J = joint_count();
  if (J < 1) throw DimensionError("skeleton has no joints");
  if (static_cast<int>(offsets.size()) != J)
    throw DimensionError(fmt::format("skeleton has {} parents but {} offsets",
                                     J, offsets.size()));
  if (!names.empty() && static_cast<int>(names.size()) != J)
    throw DimensionError("skeleton names do not match joint count");
  if (parents[0] != -1) throw RangeError("joint 0 must be the root");
  for (int j = 1; j < J; ++j) {
    if (parents[j] < 0 || parents[j] >= j)
      throw RangeError(fmt::format("joint {} has parent {}; parents must "
                                   "precede children", j, parents[j]));
    if (!(offsets[j].norm() > 0.0))
      throw RangeError(fmt::format("joint {} has a zero rest offset", j));
  }
  for (int f : foot_joints)
    if (f < 0 || f >= J) throw RangeError(fmt::format("foot joint {} out of range", f));
}

int Skeleton::find(std::string_view name) const {
  for (int j = 0; j < joint_count() && j < static_cast<int>(names.size()); ++j)
    if (names[j] == name) return j;
  return -1;
}

Matrix Skeleton::rest_positions() const {
  Matrix p(joint_count(), 3);
  for (int j = 0; j < joint_count(); ++j) {
    if (parents[j] < 0)
      p.row(j).setZero();
    else
      p.row(j) = p.row(parents[j]) + offsets[j].transpose();
  }
  return p;
}

Skeleton Skeleton::humanoid21() {
  using namespace joints;
  Skeleton s;
  s.parents.assign(kCount, -1);
  s.offsets.assign(kCount, Vector3::Zero());
  s.names.assign(kCount, "");
  auto set = [&](int j, const char* name, int parent, double x, double y,
                 double z) {
    s.names[j] = name;
    s.parents[j] = parent;
    s.offsets[j] = Vector3(x, y, z);
  };
  set(kHips, "hips", -1, 0, 0, 0);
  set(kSpine, "spine", kHips, 0, 0.10, 0);
  set(kSpine1, "spine1", kSpine, 0, 0.12, 0);
  set(kSpine2, "spine2", kSpine1, 0, 0.12, 0);
  set(kNeck, "neck", kSpine2, 0, 0.14, 0);
  set(kHead, "head", kNeck, 0, 0.10, 0);
  set(kHeadEnd, "head_end", kHead, 0, 0.12, 0.02);
  set(kLShoulder, "l_shoulder", kSpine2, 0.18, 0.08, 0);
  set(kLElbow, "l_elbow", kLShoulder, 0, -0.28, 0);
  set(kLWrist, "l_wrist", kLElbow, 0, -0.26, 0);
  set(kRShoulder, "r_shoulder", kSpine2, -0.18, 0.08, 0);
  set(kRElbow, "r_elbow", kRShoulder, 0, -0.28, 0);
  set(kRWrist, "r_wrist", kRElbow, 0, -0.26, 0);
  set(kLHip, "l_hip", kHips, 0.09, -0.05, 0);
  set(kLKnee, "l_knee", kLHip, 0, -0.42, 0);
  set(kLAnkle, "l_ankle", kLKnee, 0, -0.42, 0);
  set(kLToe, "l_toe", kLAnkle, 0, -0.04, 0.13);
  set(kRHip, "r_hip", kHips, -0.09, -0.05, 0);
  set(kRKnee, "r_knee", kRHip, 0, -0.42, 0);
  set(kRAnkle, "r_ankle", kRKnee, 0, -0.42, 0);
  set(kRToe, "r_toe", kRAnkle, 0, -0.04, 0.13);
  s.foot_joints = {kLAnkle, kLToe, kRAnkle, kRToe};
  return s;
}

void ContentRepr::validate() const {
  if (rotations.cols() % 4 != 0 || rotations.cols() == 0)
    throw DimensionError("content frames must hold 4J values");
  if (rotations.rows() < 2) throw DimensionError("content clip needs N >= 2 frames");
  if (root_translation.rows() != rotations.rows() || root_translation.cols() != 3)
    throw DimensionError("root translation must be N x 3");
  if (!rotations.allFinite() || !root_translation.allFinite())
    throw DegenerateError("content clip has non-finite values");
}

void StyleRepr::validate() const {
  if (positions.cols() % 3 != 0 || positions.cols() == 0)
    throw DimensionError("style frames must hold 3J values");
  if (positions.rows() < 2) throw DimensionError("style clip needs N >= 2 frames");
  if (!positions.allFinite()) throw DegenerateError("style clip has non-finite values");
}

Index MotionClip::frames() const {
  return std::visit([](const auto& r) { return r.frames(); }, repr);
}

int MotionClip::joint_count() const {
  return std::visit([](const auto& r) { return r.joint_count(); }, repr);
}

void MotionClip::validate() const {
  if (!(fps > 0.0)) throw RangeError("fps must be positive");
  if (content_label < 0 || style_label < 0) throw RangeError("labels must be non-negative");
  std::visit([](const auto& r) { r.validate(); }, repr);
}

StyleRepr forward_kinematics(const Skeleton& skel, const ContentRepr& content) {
  if (content.joint_count() != skel.joint_count() ||
      content.rotations.cols() != 4 * skel.joint_count())
    throw DimensionError(fmt::format("content has {} joints, skeleton has {}",
                                     content.joint_count(), skel.joint_count()));
  if (content.root_translation.rows() != content.frames())
    throw DimensionError("root translation frame count mismatch");
  const int J = skel.joint_count();
  StyleRepr out;
  out.positions.resize(content.frames(), 3 * J);
  for (Index n = 0; n < content.frames(); ++n) {
    const Eigen::Matrix<double, 1, Eigen::Dynamic> row = content.rotations.row(n);
    const Vector3 root = content.root_translation.row(n).transpose();
    const auto pos = fk_frame<double>(skel, row, root);
    for (int j = 0; j < J; ++j) out.positions.block<1, 3>(n, 3 * j) = pos.row(j);
  }
  return out;
}

ContentRepr normalize_quaternions(const ContentRepr& content) {
  ContentRepr out = content;
  for (Index n = 0; n < out.rotations.rows(); ++n) {
    for (Index j = 0; j < out.rotations.cols() / 4; ++j) {
      auto q = out.rotations.block<1, 4>(n, 4 * j);
      const double norm = q.norm();
      if (!(norm >= 1e-8))
        throw DegenerateError(fmt::format(
            "quaternion at frame {} joint {} has norm {:.3g}", n, j, norm));
      q /= norm;
      if (q[0] < 0.0) q = -q;
    }
  }
  return out;
}

TokenSequence flatten(const MotionClip& clip) {
  TokenSequence seq;
  seq.kind = clip.kind();
  seq.fps = clip.fps;
  seq.content_label = clip.content_label;
  seq.style_label = clip.style_label;
  if (seq.kind == ReprKind::kContent) {
    seq.tokens = clip.content().rotations;
    seq.root_translation = clip.content().root_translation;
  } else {
    seq.tokens = clip.style().positions;
  }
  return seq;
}

MotionClip unflatten(const TokenSequence& seq) {
  MotionClip clip;
  clip.fps = seq.fps;
  clip.content_label = seq.content_label;
  clip.style_label = seq.style_label;
  if (seq.kind == ReprKind::kContent)
    clip.repr = ContentRepr{seq.tokens, seq.root_translation};
  else
    clip.repr = StyleRepr{seq.tokens};
  return clip;
}

Matrix content_stream_tokens(const ContentRepr& content) {
  Matrix out(content.frames(), content.rotations.cols() + 3);
  out << content.rotations, content.root_translation;
  return out;
}

ContentRepr canonicalize_root(const ContentRepr& content) {
  ContentRepr out = content;
  const double x0 = content.root_translation(0, 0);
  const double z0 = content.root_translation(0, 2);
  out.root_translation.col(0).array() -= x0;
  out.root_translation.col(2).array() -= z0;
  return out;
}

ContentRepr slice_frames(const ContentRepr& c, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > c.frames())
    throw RangeError("frame slice out of range");
  return {c.rotations.middleRows(begin, count),
          c.root_translation.middleRows(begin, count)};
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> foot_contact_mask(
    const Skeleton& skel, const StyleRepr& positions, double height_threshold,
    double speed_threshold) {
  const Index N = positions.frames();
  const auto F = static_cast<Index>(skel.foot_joints.size());
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(std::max<Index>(N - 1, 0), F);
  for (Index n = 0; n + 1 < N; ++n) {
    for (Index f = 0; f < F; ++f) {
      const int j = skel.foot_joints[f];
      const Vector3 a = positions.positions.block<1, 3>(n, 3 * j).transpose();
      const Vector3 b = positions.positions.block<1, 3>(n + 1, 3 * j).transpose();
      mask(n, f) = a.y() < height_threshold && (b - a).norm() < speed_threshold;
    }
  }
  return mask;
}

}  // namespace umsd
