#pragma once

// Random poses and small skeletons for tests.

#include "umsd/motion.hpp"
#include "umsd/rng.hpp"

namespace umsd::testing {

inline ContentRepr random_content(int joints, Index frames, std::uint64_t seed,
                                  double root_scale = 1.0) {
  Rng rng(seed);
  ContentRepr c;
  c.rotations.resize(frames, 4 * joints);
  for (Index n = 0; n < frames; ++n)
    for (int j = 0; j < joints; ++j) {
      Eigen::Vector4d q;
      for (int k = 0; k < 4; ++k) q[k] = rng.normal();
      q.normalize();
      if (q[0] < 0) q = -q;
      c.rotations.block(n, 4 * j, 1, 4) = q.transpose();
    }
  c.root_translation = rng.normal_matrix(frames, 3) * root_scale;
  return c;
}

inline ContentRepr identity_content(int joints, Index frames) {
  ContentRepr c;
  c.rotations = Matrix::Zero(frames, 4 * joints);
  for (int j = 0; j < joints; ++j) c.rotations.col(4 * j).setOnes();
  c.root_translation = Matrix::Zero(frames, 3);
  return c;
}

/// Root plus a two-link chain.
inline Skeleton chain3() {
  Skeleton s;
  s.parents = {-1, 0, 1};
  s.offsets = {Vector3::Zero(), Vector3(0.0, 0.5, 0.0), Vector3(0.3, 0.0, 0.4)};
  s.foot_joints = {2};
  s.names = {"root", "mid", "tip"};
  return s;
}

inline // Positions by composing 4x4 homogeneous transforms per joint.
Matrix homogeneous_fk(const Skeleton& skel, const ContentRepr& c) {
  const int J = skel.joint_count();
  Matrix out(c.frames(), 3 * J);
  for (Index n = 0; n < c.frames(); ++n) {
    std::vector<Eigen::Matrix4d> world(J);
    for (int j = 0; j < J; ++j) {
      const double w = c.rotations(n, 4 * j), x = c.rotations(n, 4 * j + 1),
                   y = c.rotations(n, 4 * j + 2), z = c.rotations(n, 4 * j + 3);
      const double s = 1.0 / (w * w + x * x + y * y + z * z);
      Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
      local(0, 0) = 1 - 2 * s * (y * y + z * z);
      local(0, 1) = 2 * s * (x * y - w * z);
      local(0, 2) = 2 * s * (x * z + w * y);
      local(1, 0) = 2 * s * (x * y + w * z);
      local(1, 1) = 1 - 2 * s * (x * x + z * z);
      local(1, 2) = 2 * s * (y * z - w * x);
      local(2, 0) = 2 * s * (x * z - w * y);
      local(2, 1) = 2 * s * (y * z + w * x);
      local(2, 2) = 1 - 2 * s * (x * x + y * y);
      const int p = skel.parents[j];
      if (p < 0) {
        for (int k = 0; k < 3; ++k) local(k, 3) = c.root_translation(n, k);
        world[j] = local;
      } else {
        Eigen::Matrix4d shift = Eigen::Matrix4d::Identity();
        shift.block<3, 1>(0, 3) = skel.offsets[j];
        world[j] = world[p] * shift * local;
      }
      out.block(n, 3 * j, 1, 3) = world[j].block<3, 1>(0, 3).transpose();
    }
  }
  return out;
}

}  // namespace umsd::testing
