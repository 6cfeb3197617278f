#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rfa/dynamics.hpp"
#include "rfa/sim.hpp"

namespace rfa {

enum class FlightStage { Takeoff, Tracking };
enum class FaultClass { Motor, Propeller, TakeoffDetected };

/// Either pattern, both patterns, or the angular pattern alone.
enum class TakeoffRule { Either, Both, Angular };

/// Detection mechanisms, in arbitration priority order.
enum class Mechanism { MotorIndex = 0, TakeoffMonitor = 1, PropellerIndex = 2 };

const char* to_string(FlightStage stage);
const char* to_string(FaultClass fault_class);
const char* to_string(Mechanism mechanism);
const char* to_string(TakeoffRule rule);
TakeoffRule takeoff_rule_from_string(const std::string& text);

struct FddConfig {
  double gamma_M = 0.2;
  double gamma_P = 0.8;
  /// Lateral acceleration thresholds x, y (m/s^2), then angular acceleration
  /// thresholds x, y (rad/s^2).
  std::array<double, 4> gamma_Q{0.005, 0.005, 1.0, 1.0};
  /// Which sign patterns raise the takeoff flag. The lateral thresholds sit
  /// below the filtered accelerometer noise, so the default uses the angular
  /// pattern only.
  TakeoffRule takeoff_rule = TakeoffRule::Angular;
  int debounce_count = 3;
  /// Motor index is evaluated only above this fraction of hover RPM.
  double rpm_floor_fraction = 0.1;
  /// Propeller index at or above this (and below gamma_P) is a degradation warning.
  double degradation_threshold = 0.2;
  /// Observer waits this many filter time constants before producing output.
  double warmup_time_constants = 5.0;

  void validate() const;
};

struct FaultReport {
  int rotor = -1;
  FaultClass fault_class = FaultClass::Motor;
  double time = 0.0;
  double index_value = 0.0;
  Mechanism mechanism = Mechanism::MotorIndex;
};

/// M_i = measured / reference RPM; empty where the reference is below `rpm_floor`.
std::array<std::optional<double>, kNumRotors> motor_index(const Vector4d& rpm_meas,
                                                          const Vector4d& rpm_ref, double rpm_floor);

/// Inputs of the thrust-loss observers, all already filtered.
struct ObserverInput {
  Vector4d rotor_thrust = Vector4d::Zero();  // from measured RPM, N
  Quat<double> attitude = quat_identity();
  Vector3d velocity = Vector3d::Zero();
  Vector3d accel_world = Vector3d::Zero();   // linear acceleration, gravity removed
  Vector3d angular_accel = Vector3d::Zero();
  Vector3d rates = Vector3d::Zero();
};

/// Per-rotor thrust loss t_* from the translational and rotational residuals.
Vector4d thrust_loss_observer(const ObserverInput& in, const VehicleParams& params);

/// P_i = t_*_i / T_bar.
Vector4d propeller_index(const Vector4d& t_star, const VehicleParams& params);

/// Instantaneous (not debounced) takeoff abnormality flags per rotor.
/// `accel_xy` is expressed in the heading frame, `alpha_xy` in the body frame.
std::array<bool, kNumRotors> takeoff_monitor(const Eigen::Vector2d& accel_xy,
                                             const Eigen::Vector2d& alpha_xy,
                                             const FddConfig& config, const VehicleParams& params);

/// Debounced per-mechanism trigger state for one tick.
struct MechanismTriggers {
  std::array<bool, kNumRotors> motor{};
  std::array<bool, kNumRotors> takeoff{};
  std::array<bool, kNumRotors> propeller{};
  std::array<double, kNumRotors> motor_value{};
  std::array<double, kNumRotors> takeoff_value{};
  std::array<double, kNumRotors> propeller_value{};
};

/// Stage gating and priority: takeoff uses motor + takeoff mechanisms,
/// tracking uses motor + propeller. Motor beats takeoff beats propeller.
/// Several rotors triggering at once yields several reports.
std::vector<FaultReport> arbitrate(FlightStage stage, const MechanismTriggers& triggers, double time);

/// Summary of one detector tick, for logging.
struct FddTick {
  std::array<double, kNumRotors> motor_index{};   // NaN when not evaluated
  Vector4d propeller_index = Vector4d::Zero();
  std::array<bool, kNumRotors> takeoff_flag{};
  std::array<bool, kNumRotors> degradation{};
  std::vector<FaultReport> new_reports;
};

/// Composite detector state machine. Decisions depend only on the frames and
/// commands fed in, so replaying a log reproduces them.
class FaultDetector {
 public:
  FaultDetector(const VehicleParams& params, const FddConfig& config,
                const SensorFilterBank::Cutoffs& cutoffs = {});

  /// `command` is the thrust command that was applied over the interval
  /// ending at `frame.timestamp`.
  FddTick update(const SensorFrame& frame, const Vector4d& command, FlightStage stage);

  bool faulted() const { return !reports_.empty(); }
  bool multi_fault() const { return reports_.size() > 1; }
  const std::vector<FaultReport>& reports() const { return reports_; }
  std::optional<FaultReport> primary() const;
  const SensorFilterBank& filters() const { return filters_; }
  const Vector4d& expected_thrust() const { return expected_thrust_; }

 private:
  VehicleParams params_;
  FddConfig config_;
  SensorFilterBank filters_;
  Vector4d expected_thrust_ = Vector4d::Constant(-1.0);
  std::array<int, kNumRotors> motor_count_{};
  std::array<int, kNumRotors> takeoff_count_{};
  std::array<int, kNumRotors> propeller_count_{};
  double last_time_ = 0.0;
  bool started_ = false;
  std::vector<FaultReport> reports_;
};

}  // namespace rfa
