#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "rfa/quaternion.hpp"

namespace rfa {

class KeyValueFile;

inline constexpr int kStateDim = 17;
inline constexpr int kInputDim = 4;
inline constexpr int kNumRotors = 4;

/// Offsets into the packed state vector [eta, q, v, w_B, t].
namespace sx {
inline constexpr int pos = 0;
inline constexpr int quat = 3;
inline constexpr int vel = 7;
inline constexpr int rate = 10;
inline constexpr int thrust = 13;
}  // namespace sx

template <typename Scalar>
using StateVector = Eigen::Matrix<Scalar, kStateDim, 1>;

template <typename Scalar>
using InputVector = Eigen::Matrix<Scalar, kInputDim, 1>;

using Vector4d = Eigen::Vector4d;
using Vector3d = Eigen::Vector3d;

/// Physical and actuation constants of the quadrotor.
///
/// `k_n` maps squared motor speed in rev/min to thrust in newtons; with the
/// default value hover sits near 14,100 rev/min.
struct VehicleParams {
  double m = 1.15;
  Vector3d I_v{6.862e-3, 6.992e-3, 8.650e-3};
  double r_d = 0.125;
  double k_n = 1.41e-8;
  double kappa_t = 0.01;
  Vector3d D{0.48, 0.50, 0.65};
  double k_d_psi = 0.011;
  double sigma = 0.03;
  double T_bar = 8.0;
  double g = 9.81;

  /// Throws a Config error when any invariant is violated.
  void validate() const;

  double hover_thrust() const { return m * g / kNumRotors; }
  double thrust_to_rpm(double thrust) const;
  double rpm_to_thrust(double rpm) const { return k_n * rpm * rpm; }

  static VehicleParams from_file(const KeyValueFile& file, const std::string& prefix = "");
  static VehicleParams load(const std::filesystem::path& path);
  std::string to_text(const std::string& prefix = "") const;
};

struct Wrench {
  double thrust = 0.0;
  Vector3d torque = Vector3d::Zero();
};

struct ControlCommand {
  Vector4d u = Vector4d::Zero();
  double timestamp = 0.0;
};

/// Full simulation/control state. `q` maps body vectors into the world frame.
struct VehicleState {
  Vector3d eta = Vector3d::Zero();
  Quat<double> q = quat_identity();
  Vector3d v = Vector3d::Zero();
  Vector3d w = Vector3d::Zero();
  Vector4d t = Vector4d::Zero();

  StateVector<double> pack() const;
  static VehicleState unpack(const StateVector<double>& x);
  static VehicleState hover(const VehicleParams& params, const Vector3d& position = Vector3d::Zero());
};

/// Control effectiveness matrix: [T; tau] = M_t t.
template <typename Scalar = double>
Eigen::Matrix<Scalar, 4, 4> effectiveness_matrix(const VehicleParams& p) {
  const Scalar a = Scalar(0.5 * std::sqrt(2.0) * p.r_d);
  const Scalar k = Scalar(p.kappa_t);
  Eigen::Matrix<Scalar, 4, 4> mt;
  mt << Scalar(1), Scalar(1), Scalar(1), Scalar(1),
        -a, a, a, -a,
        -a, a, -a, a,
        -k, -k, k, k;
  return mt;
}

/// Mixer inverse, t = M_t^{-1} [T; tau].
Eigen::Matrix4d inverse_effectiveness_matrix(const VehicleParams& p);

/// Wrench produced by per-rotor thrusts. Rejects non-finite or negative input.
Wrench mix_thrusts(const Vector4d& t, const VehicleParams& p);

/// Per-rotor thrusts that produce the wrench (no bound enforcement).
Vector4d unmix_wrench(const Wrench& w, const VehicleParams& p);

/// Aerodynamic yaw damping torque about body z; always opposes r.
template <typename Scalar>
Scalar yaw_damping_torque(const Scalar& r, const VehicleParams& p) {
  return -Scalar(p.k_d_psi) * r;
}

/// Continuous-time model on the packed state. Quaternion is used as given
/// (callers check the norm). Thrust state follows the first-order motor lag.
template <typename Scalar>
StateVector<Scalar> state_derivative(const StateVector<Scalar>& x, const InputVector<Scalar>& u,
                                     const VehicleParams& p) {
  const Quat<Scalar> q = x.template segment<4>(sx::quat);
  const Vec3<Scalar> v = x.template segment<3>(sx::vel);
  const Vec3<Scalar> w = x.template segment<3>(sx::rate);
  const InputVector<Scalar> t = x.template segment<4>(sx::thrust);

  const Mat3<Scalar> r = rotation_matrix(q);
  const Eigen::Matrix<Scalar, 4, 1> wrench = effectiveness_matrix<Scalar>(p) * t;

  Vec3<Scalar> drag_body;
  const Vec3<Scalar> v_body = r.transpose() * v;
  for (int i = 0; i < 3; ++i) drag_body[i] = Scalar(p.D[i]) * v_body[i];

  Vec3<Scalar> gravity(Scalar(0), Scalar(0), Scalar(-p.g));
  const Vec3<Scalar> accel =
      (r.col(2) * wrench[0] - r * drag_body) / Scalar(p.m) + gravity;

  Vec3<Scalar> iw;
  for (int i = 0; i < 3; ++i) iw[i] = Scalar(p.I_v[i]) * w[i];
  Vec3<Scalar> torque = wrench.template tail<3>() - w.cross(iw);
  torque[2] += yaw_damping_torque(w[2], p);
  Vec3<Scalar> alpha;
  for (int i = 0; i < 3; ++i) alpha[i] = torque[i] / Scalar(p.I_v[i]);

  Quat<Scalar> wq(Scalar(0), w[0], w[1], w[2]);
  const Quat<Scalar> qdot = quat_mul(q, wq) * Scalar(0.5);

  StateVector<Scalar> dx;
  dx.template segment<3>(sx::pos) = v;
  dx.template segment<4>(sx::quat) = qdot;
  dx.template segment<3>(sx::vel) = accel;
  dx.template segment<3>(sx::rate) = alpha;
  dx.template segment<4>(sx::thrust) = (u - t) / Scalar(p.sigma);
  return dx;
}

/// Classical fourth-order Runge-Kutta step with a zero-order-hold input.
template <typename Scalar>
StateVector<Scalar> rk4_step(const StateVector<Scalar>& x, const InputVector<Scalar>& u,
                             const VehicleParams& p, double dt) {
  const Scalar h(dt);
  const StateVector<Scalar> k1 = state_derivative<Scalar>(x, u, p);
  const StateVector<Scalar> k2 = state_derivative<Scalar>(x + k1 * (h * Scalar(0.5)), u, p);
  const StateVector<Scalar> k3 = state_derivative<Scalar>(x + k2 * (h * Scalar(0.5)), u, p);
  const StateVector<Scalar> k4 = state_derivative<Scalar>(x + k3 * h, u, p);
  return x + (k1 + k2 * Scalar(2) + k3 * Scalar(2) + k4) * (h / Scalar(6));
}

/// Checked wrapper over `state_derivative` for the public state type.
StateVector<double> continuous_dynamics(const VehicleState& x, const ControlCommand& u,
                                        const VehicleParams& p);

/// Linear acceleration of the true model, used for specific-force synthesis.
Vector3d linear_acceleration(const VehicleState& x, const VehicleParams& p);

/// Steady yaw rate at which damping balances the residual yaw torque.
double yaw_equilibrium_rate(const Vector4d& thrusts, const VehicleParams& p);

}  // namespace rfa
