#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rfa/dynamics.hpp"

namespace rfa {

enum class FailureMode { MotorStop, PropellerLoss };

const char* to_string(FailureMode mode);
FailureMode failure_mode_from_string(const std::string& text);

struct FailureEvent {
  double time = 0.0;
  int rotor = 0;
  FailureMode mode = FailureMode::MotorStop;
  double severity = 1.0;
};

struct FailureSchedule {
  std::vector<FailureEvent> events;

  /// Times non-negative and strictly increasing, severity in (0,1], MotorStop
  /// implies severity 1.
  void validate() const;
};

struct NoiseProfile {
  double accel = 0.05;    // m/s^2
  double gyro = 0.005;    // rad/s
  double rpm = 30.0;      // rev/min
  double odom_position = 0.002;  // m
  double odom_velocity = 0.005;  // m/s
  double odom_attitude = 0.002;  // rad

  static NoiseProfile zero() { return NoiseProfile{0, 0, 0, 0, 0, 0}; }
};

struct SensorFrame {
  double timestamp = 0.0;
  Vector3d accel_meas = Vector3d::Zero();
  Vector3d gyro_meas = Vector3d::Zero();
  Vector4d rpm_meas = Vector4d::Zero();
  Vector3d odom_position = Vector3d::Zero();
  Vector3d odom_velocity = Vector3d::Zero();
  Quat<double> odom_attitude = quat_identity();
};

/// First-order low-pass state for an N-channel signal.
struct FilterState {
  double cutoff_hz = 20.0;
  Eigen::VectorXd output;
  bool initialized = false;
};

/// y += a (x - y) with a = dt / (dt + 1 / (2 pi fc)). The first sample
/// initializes the output.
std::pair<FilterState, Eigen::VectorXd> lowpass(FilterState f, const Eigen::VectorXd& sample,
                                                double dt);

/// Filtered acceleration, body rates, and angular acceleration derived from a
/// sensor stream. The angular acceleration is the low-passed finite difference
/// of the low-passed gyro.
class SensorFilterBank {
 public:
  struct Cutoffs {
    double accel_hz = 20.0;
    double gyro_hz = 20.0;
    double angular_accel_hz = 10.0;
  };

  SensorFilterBank() : SensorFilterBank(Cutoffs{}) {}
  explicit SensorFilterBank(const Cutoffs& cutoffs);

  void update(const SensorFrame& frame, const VehicleParams& params);

  /// World-frame linear acceleration (gravity removed).
  const Vector3d& accel_world() const { return accel_world_; }
  const Vector3d& rates() const { return rates_; }
  const Vector3d& angular_accel() const { return angular_accel_; }
  /// Seconds of data seen since the first sample.
  double elapsed() const { return elapsed_; }
  /// Slowest time constant among the filters.
  double time_constant() const;

 private:
  Cutoffs cutoffs_;
  FilterState accel_, gyro_, alpha_;
  Vector3d accel_world_ = Vector3d::Zero();
  Vector3d rates_ = Vector3d::Zero();
  Vector3d angular_accel_ = Vector3d::Zero();
  Vector3d prev_rates_ = Vector3d::Zero();
  double prev_time_ = 0.0;
  double start_time_ = 0.0;
  double elapsed_ = 0.0;
  bool have_prev_ = false;
};

/// One integrator step of the true plant. `effectiveness` scales the command
/// seen by each rotor and caps its thrust at effectiveness * T_bar.
VehicleState step(const VehicleState& x, const ControlCommand& u, const Vector4d& effectiveness,
                  double dt, const VehicleParams& params);

/// Synthesizes a sensor frame from the true state and its derivative. Motor
/// speeds come from `motor_thrust` (nominal thrust the motor is driving).
SensorFrame sense(const VehicleState& x, const StateVector<double>& xdot,
                  const Vector4d& motor_thrust, double timestamp, const VehicleParams& params,
                  const NoiseProfile& noise, std::mt19937_64& rng);

struct SimConfig {
  double physics_dt = 0.0025;
  double control_dt = 0.005;
  /// The ground stays under a vehicle that started on it until it climbs
  /// above this height.
  double liftoff_height = 0.02;
  NoiseProfile noise;
  SensorFilterBank::Cutoffs cutoffs;
};

/// Owns the true plant, the failure schedule, and the sensor noise stream.
///
/// A vehicle that starts at or below z = 0 rests on a ground support until it
/// first rises above `liftoff_height`; after liftoff there is no ground.
class Simulator {
 public:
  Simulator(const VehicleParams& params, const SimConfig& config, const VehicleState& initial,
            FailureSchedule schedule, std::uint64_t seed);

  /// Advances one control period holding `command`, then returns the sensor
  /// frame at the new time.
  SensorFrame advance(const ControlCommand& command);

  /// Sensor frame at the current time without advancing.
  SensorFrame measure();

  const VehicleState& state() const { return state_; }
  const Vector4d& effectiveness() const { return effectiveness_; }
  const Vector4d& motor_thrust() const { return motor_thrust_; }
  double time() const { return time_; }
  bool on_ground() const { return ground_support_; }
  /// True once airborne, including runs that start in the air.
  bool lifted_off() const { return lifted_off_; }
  /// Time of the first injected failure, negative if none yet.
  double first_injection_time() const { return first_injection_; }
  int failed_rotor() const { return failed_rotor_; }
  const VehicleParams& params() const { return params_; }

 private:
  void apply_due_failures();
  void physics_step(const ControlCommand& command, double dt);

  VehicleParams params_;
  SimConfig config_;
  VehicleState state_;
  FailureSchedule schedule_;
  std::size_t next_event_ = 0;
  Vector4d effectiveness_ = Vector4d::Ones();
  Vector4d motor_thrust_;
  std::vector<bool> motor_stopped_ = std::vector<bool>(kNumRotors, false);
  StateVector<double> last_derivative_ = StateVector<double>::Zero();
  Vector4d last_command_ = Vector4d::Zero();
  std::mt19937_64 rng_;
  double time_ = 0.0;
  std::int64_t physics_steps_ = 0;
  double first_injection_ = -1.0;
  int failed_rotor_ = -1;
  bool ground_support_ = false;
  bool lifted_off_ = false;
  Quat<double> ground_attitude_ = quat_identity();
};

/// Total mechanical energy (kinetic + rotational + potential).
double mechanical_energy(const VehicleState& x, const VehicleParams& params);

}  // namespace rfa
