#pragma once

#include <cmath>

#include "rfa/quaternion.hpp"

namespace rfa {

/// Attitude error split into a rotation about z and a tilt whose axis lies in
/// the x-y plane, error = yaw (x) tilt.
template <typename Scalar>
struct AttitudeDecomposition {
  Quat<Scalar> error;
  Quat<Scalar> yaw;
  Quat<Scalar> tilt;
  /// [tilt_x, tilt_y, error_x^2 + error_y^2, yaw_z]
  Eigen::Matrix<Scalar, 4, 1> reduced;
  /// Set when the tilt is (numerically) pi and the split is not unique.
  bool singular = false;
};

inline constexpr double kTiltSingularity = 1e-9;

/// Error between a reference and a current attitude, tilt-prioritized.
///
/// Both quaternions map body to world. The error is conj(q_ref) (x) q, the
/// rotation from the reference body frame to the current body frame. The tilt
/// factor has zero z component and a non-negative scalar part, so it does not
/// depend on the sign of either input.
template <typename Scalar>
AttitudeDecomposition<Scalar> attitude_error_decompose(const Quat<Scalar>& q_ref,
                                                       const Quat<Scalar>& q) {
  using std::sqrt;
  AttitudeDecomposition<Scalar> d;
  d.error = quat_mul(quat_conj(q_ref), q);
  const Scalar w = d.error[0], x = d.error[1], y = d.error[2], z = d.error[3];
  const Scalar n2 = w * w + z * z;
  if (n2 < Scalar(kTiltSingularity * kTiltSingularity)) {
    // 180 degree tilt: the error itself is a pure tilt about an axis in the
    // x-y plane (body x if the components vanish entirely).
    d.singular = true;
    d.yaw = Quat<Scalar>(Scalar(1), Scalar(0), Scalar(0), Scalar(0));
    d.tilt = Quat<Scalar>(Scalar(0), x, y, Scalar(0));
    const Scalar tn = sqrt(x * x + y * y);
    if (tn > Scalar(0)) {
      d.tilt /= tn;
    } else {
      d.tilt = Quat<Scalar>(Scalar(0), Scalar(1), Scalar(0), Scalar(0));
    }
  } else {
    const Scalar n = sqrt(n2);
    d.yaw = Quat<Scalar>(w / n, Scalar(0), Scalar(0), z / n);
    d.tilt = Quat<Scalar>(n, (w * x + y * z) / n, (w * y - x * z) / n, Scalar(0));
  }
  d.reduced << d.tilt[1], d.tilt[2], x * x + y * y, d.yaw[3];
  return d;
}

}  // namespace rfa
