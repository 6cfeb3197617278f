#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace rfa {

// Quaternions are stored as 4-vectors [w, x, y, z] (Hamilton convention) so
// that the same code runs on double and on automatic-differentiation scalars.
// A state quaternion maps body-frame vectors into the world frame.

template <typename Scalar>
using Quat = Eigen::Matrix<Scalar, 4, 1>;

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

template <typename DerivedA, typename DerivedB>
Quat<typename DerivedA::Scalar> quat_mul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  using S = typename DerivedA::Scalar;
  Quat<S> out;
  out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
  out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
  out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
  out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
  return out;
}

template <typename Derived>
Quat<typename Derived::Scalar> quat_conj(const Eigen::MatrixBase<Derived>& q) {
  Quat<typename Derived::Scalar> out;
  out << q[0], -q[1], -q[2], -q[3];
  return out;
}

template <typename Derived>
Mat3<typename Derived::Scalar> rotation_matrix(const Eigen::MatrixBase<Derived>& q) {
  using S = typename Derived::Scalar;
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> r;
  r(0, 0) = S(1) - S(2) * (y * y + z * z);
  r(0, 1) = S(2) * (x * y - w * z);
  r(0, 2) = S(2) * (x * z + w * y);
  r(1, 0) = S(2) * (x * y + w * z);
  r(1, 1) = S(1) - S(2) * (x * x + z * z);
  r(1, 2) = S(2) * (y * z - w * x);
  r(2, 0) = S(2) * (x * z - w * y);
  r(2, 1) = S(2) * (y * z + w * x);
  r(2, 2) = S(1) - S(2) * (x * x + y * y);
  return r;
}

inline Quat<double> quat_identity() { return Quat<double>(1.0, 0.0, 0.0, 0.0); }

inline Quat<double> quat_from_axis_angle(const Vec3<double>& axis, double angle) {
  const Vec3<double> n = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return Quat<double>(std::cos(0.5 * angle), s * n.x(), s * n.y(), s * n.z());
}

/// Shortest rotation taking unit vector `from` onto unit vector `to`.
inline Quat<double> quat_between(const Vec3<double>& from, const Vec3<double>& to) {
  const double d = from.dot(to);
  if (d < -1.0 + 1e-12) {
    Vec3<double> axis = Vec3<double>::UnitX().cross(from);
    if (axis.norm() < 1e-9) axis = Vec3<double>::UnitY().cross(from);
    return quat_from_axis_angle(axis, M_PI);
  }
  const Vec3<double> c = from.cross(to);
  Quat<double> q(1.0 + d, c.x(), c.y(), c.z());
  return q.normalized();
}

/// Yaw angle of the body x axis projected onto the world x-y plane.
inline double quat_yaw(const Quat<double>& q) {
  return std::atan2(2.0 * (q[0] * q[3] + q[1] * q[2]), 1.0 - 2.0 * (q[2] * q[2] + q[3] * q[3]));
}

/// Angle between the body z axis and the world z axis.
inline double quat_tilt(const Quat<double>& q) {
  const double c = rotation_matrix(q)(2, 2);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace rfa
