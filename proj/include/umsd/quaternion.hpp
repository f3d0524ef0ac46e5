#pragma once

// Quaternion helpers over Eigen::Quaternion<T>. Storage convention in token
// streams is (w, x, y, z).

#include <Eigen/Geometry>

#include <cmath>

namespace umsd {

template <typename T>
using Quat = Eigen::Quaternion<T>;

template <typename T>
Quat<T> quat_from_wxyz(const Eigen::Ref<const Eigen::Matrix<T, 4, 1>>& v) {
  return Quat<T>(v[0], v[1], v[2], v[3]);
}

template <typename T>
Eigen::Matrix<T, 4, 1> quat_to_wxyz(const Quat<T>& q) {
  return {q.w(), q.x(), q.y(), q.z()};
}

/// Rotation about a principal axis (0 = x, 1 = y, 2 = z), angle in radians.
template <typename T>
Quat<T> axis_rotation(int axis, T angle) {
  using std::cos;
  using std::sin;
  Quat<T> q(cos(angle / T(2)), T(0), T(0), T(0));
  q.coeffs()[axis] = sin(angle / T(2));  // coeffs() is (x, y, z, w)
  return q;
}

/// Flip to the w >= 0 hemisphere.
template <typename T>
Quat<T> canonical(const Quat<T>& q) {
  if (q.w() < T(0)) return Quat<T>(-q.w(), -q.x(), -q.y(), -q.z());
  return q;
}

/// q^s along the shortest arc from identity; scales the rotation angle.
template <typename T>
Quat<T> quat_pow(const Quat<T>& q_in, T s) {
  using std::atan2;
  using std::cos;
  using std::sin;
  const Quat<T> q = canonical(q_in.normalized());
  const T vnorm = q.vec().norm();
  if (vnorm < T(1e-15)) return Quat<T>::Identity();
  const T half = atan2(vnorm, q.w());
  const T scaled = half * s;
  Quat<T> out;
  out.w() = cos(scaled);
  out.vec() = q.vec() * (sin(scaled) / vnorm);
  return out;
}

/// Shortest-arc spherical interpolation; u in [0, 1].
template <typename T>
Quat<T> slerp_shortest(const Quat<T>& a, const Quat<T>& b, T u) {
  using std::acos;
  using std::sin;
  Quat<T> bb = b;
  T d = a.dot(b);
  if (d < T(0)) {
    bb.coeffs() = -bb.coeffs();
    d = -d;
  }
  if (d > T(1) - T(1e-12)) {
    Quat<T> out;
    out.coeffs() = (T(1) - u) * a.coeffs() + u * bb.coeffs();
    return out.normalized();
  }
  const T theta = acos(d);
  const T sa = sin((T(1) - u) * theta) / sin(theta);
  const T sb = sin(u * theta) / sin(theta);
  Quat<T> out;
  out.coeffs() = sa * a.coeffs() + sb * bb.coeffs();
  return out;
}

}  // namespace umsd
