#include "rfa/fdd.hpp"

#include <cmath>
#include <limits>

#include "rfa/error.hpp"

namespace rfa {

const char* to_string(FlightStage stage) {
  return stage == FlightStage::Takeoff ? "takeoff" : "tracking";
}

const char* to_string(FaultClass fault_class) {
  switch (fault_class) {
    case FaultClass::Motor: return "motor";
    case FaultClass::Propeller: return "propeller";
    case FaultClass::TakeoffDetected: return "takeoff";
  }
  return "unknown";
}

const char* to_string(TakeoffRule rule) {
  switch (rule) {
    case TakeoffRule::Either: return "either";
    case TakeoffRule::Both: return "both";
    case TakeoffRule::Angular: return "angular";
  }
  return "unknown";
}

TakeoffRule takeoff_rule_from_string(const std::string& text) {
  for (auto r : {TakeoffRule::Either, TakeoffRule::Both, TakeoffRule::Angular}) {
    if (text == to_string(r)) return r;
  }
  fail(ErrorKind::Config, "fdd.takeoff_rule: expected either, both or angular, got '" + text + "'");
}

const char* to_string(Mechanism mechanism) {
  switch (mechanism) {
    case Mechanism::MotorIndex: return "motor_index";
    case Mechanism::TakeoffMonitor: return "takeoff_monitor";
    case Mechanism::PropellerIndex: return "propeller_index";
  }
  return "unknown";
}

void FddConfig::validate() const {
  if (!(gamma_M > 0.0 && gamma_M <= 1.0)) fail(ErrorKind::Config, "fdd.gamma_M: must be in (0, 1]");
  if (!(gamma_P > 0.0 && gamma_P <= 1.0)) fail(ErrorKind::Config, "fdd.gamma_P: must be in (0, 1]");
  for (double g : gamma_Q) {
    if (!(g > 0.0)) fail(ErrorKind::Config, "fdd.gamma_Q: thresholds must be positive");
  }
  if (debounce_count < 1) fail(ErrorKind::Config, "fdd.debounce_count: must be >= 1");
  if (!(rpm_floor_fraction >= 0.0 && rpm_floor_fraction < 1.0)) {
    fail(ErrorKind::Config, "fdd.rpm_floor_fraction: must be in [0, 1)");
  }
}

std::array<std::optional<double>, kNumRotors> motor_index(const Vector4d& rpm_meas,
                                                          const Vector4d& rpm_ref, double rpm_floor) {
  std::array<std::optional<double>, kNumRotors> out;
  for (int i = 0; i < kNumRotors; ++i) {
    if (rpm_ref[i] >= rpm_floor && rpm_ref[i] > 0.0) out[static_cast<std::size_t>(i)] = rpm_meas[i] / rpm_ref[i];
  }
  return out;
}

Vector4d thrust_loss_observer(const ObserverInput& in, const VehicleParams& params) {
  const Mat3<double> r = rotation_matrix(in.attitude);
  const Vector4d wrench_f = effectiveness_matrix<double>(params) * in.rotor_thrust;
  const Vector3d gravity(0.0, 0.0, -params.g);
  const Vector3d drag = r * params.D.cwiseProduct(r.transpose() * in.velocity);
  const Vector3d thrust_loss =
      wrench_f[0] * r.col(2) + params.m * gravity - params.m * in.accel_world - drag;

  const Vector3d iw = params.I_v.cwiseProduct(in.rates);
  Vector3d torque_loss = wrench_f.tail<3>() - params.I_v.cwiseProduct(in.angular_accel) -
                         in.rates.cross(iw);
  torque_loss[2] += yaw_damping_torque(in.rates[2], params);

  Vector4d rhs;
  rhs << thrust_loss.norm(), torque_loss;
  return inverse_effectiveness_matrix(params) * rhs;
}

Vector4d propeller_index(const Vector4d& t_star, const VehicleParams& params) {
  return t_star / params.T_bar;
}

std::array<bool, kNumRotors> takeoff_monitor(const Eigen::Vector2d& accel_xy,
                                             const Eigen::Vector2d& alpha_xy,
                                             const FddConfig& config, const VehicleParams& params) {
  const Eigen::Matrix4d mt = effectiveness_matrix<double>(params);
  std::array<bool, kNumRotors> out{};
  for (int i = 0; i < kNumRotors; ++i) {
    // Losing rotor i removes its column from the wrench: the body accelerates
    // in roll/pitch against the column signs, and tilting the thrust vector
    // produces the matching lateral acceleration.
    const double roll_sign = mt(1, i) > 0.0 ? 1.0 : -1.0;
    const double pitch_sign = mt(2, i) > 0.0 ? 1.0 : -1.0;
    const bool lateral = -pitch_sign * accel_xy.x() >= config.gamma_Q[0] &&
                         roll_sign * accel_xy.y() >= config.gamma_Q[1];
    const bool angular = -roll_sign * alpha_xy.x() >= config.gamma_Q[2] &&
                         -pitch_sign * alpha_xy.y() >= config.gamma_Q[3];
    bool flag = angular;
    if (config.takeoff_rule == TakeoffRule::Either) flag = lateral || angular;
    if (config.takeoff_rule == TakeoffRule::Both) flag = lateral && angular;
    out[static_cast<std::size_t>(i)] = flag;
  }
  return out;
}

std::vector<FaultReport> arbitrate(FlightStage stage, const MechanismTriggers& triggers, double time) {
  std::vector<FaultReport> reports;
  auto collect = [&](const std::array<bool, kNumRotors>& fired, const std::array<double, kNumRotors>& value,
                     FaultClass fault_class, Mechanism mechanism) {
    for (int i = 0; i < kNumRotors; ++i) {
      if (!fired[static_cast<std::size_t>(i)]) continue;
      bool already = false;
      for (const auto& r : reports) already = already || r.rotor == i;
      if (!already) reports.push_back({i, fault_class, time, value[static_cast<std::size_t>(i)], mechanism});
    }
  };
  collect(triggers.motor, triggers.motor_value, FaultClass::Motor, Mechanism::MotorIndex);
  if (!reports.empty()) return reports;
  if (stage == FlightStage::Takeoff) {
    collect(triggers.takeoff, triggers.takeoff_value, FaultClass::TakeoffDetected,
            Mechanism::TakeoffMonitor);
  } else {
    collect(triggers.propeller, triggers.propeller_value, FaultClass::Propeller,
            Mechanism::PropellerIndex);
  }
  return reports;
}

FaultDetector::FaultDetector(const VehicleParams& params, const FddConfig& config,
                             const SensorFilterBank::Cutoffs& cutoffs)
    : params_(params), config_(config), filters_(cutoffs) {
  params_.validate();
  config_.validate();
}

std::optional<FaultReport> FaultDetector::primary() const {
  if (reports_.empty()) return std::nullopt;
  return reports_.front();
}

FddTick FaultDetector::update(const SensorFrame& frame, const Vector4d& command, FlightStage stage) {
  FddTick tick;
  tick.motor_index.fill(std::numeric_limits<double>::quiet_NaN());

  Vector4d measured_thrust;
  for (int i = 0; i < kNumRotors; ++i) measured_thrust[i] = params_.rpm_to_thrust(frame.rpm_meas[i]);

  if (!started_) {
    expected_thrust_ = measured_thrust;
  } else {
    const double dt = frame.timestamp - last_time_;
    if (!(dt > 0.0)) fail(ErrorKind::InvalidInput, "FaultDetector: timestamps must increase");
    const double gain = 1.0 - std::exp(-dt / params_.sigma);
    const Vector4d target = command.cwiseMax(0.0).cwiseMin(params_.T_bar);
    expected_thrust_ += gain * (target - expected_thrust_);
  }
  started_ = true;
  last_time_ = frame.timestamp;
  filters_.update(frame, params_);

  MechanismTriggers triggers;

  // Motor-speed ratio against the lag-model expectation of the command.
  Vector4d rpm_ref;
  for (int i = 0; i < kNumRotors; ++i) rpm_ref[i] = params_.thrust_to_rpm(expected_thrust_[i]);
  const double floor = config_.rpm_floor_fraction * params_.thrust_to_rpm(params_.hover_thrust());
  const auto m_index = motor_index(frame.rpm_meas, rpm_ref, floor);
  for (std::size_t i = 0; i < kNumRotors; ++i) {
    if (m_index[i] && *m_index[i] <= config_.gamma_M) {
      ++motor_count_[i];
    } else {
      motor_count_[i] = 0;
    }
    if (m_index[i]) tick.motor_index[i] = *m_index[i];
    triggers.motor[i] = motor_count_[i] >= config_.debounce_count;
    triggers.motor_value[i] = m_index[i].value_or(std::numeric_limits<double>::quiet_NaN());
  }

  const bool warm = filters_.elapsed() >= config_.warmup_time_constants * filters_.time_constant();

  // Thrust-loss observer, tracking stage only.
  if (stage == FlightStage::Tracking && warm) {
    ObserverInput in;
    in.rotor_thrust = measured_thrust;
    in.attitude = frame.odom_attitude;
    in.velocity = frame.odom_velocity;
    in.accel_world = filters_.accel_world();
    in.angular_accel = filters_.angular_accel();
    in.rates = filters_.rates();
    const Vector4d p_index = propeller_index(thrust_loss_observer(in, params_), params_);
    tick.propeller_index = p_index;
    for (std::size_t i = 0; i < kNumRotors; ++i) {
      const double p = p_index[static_cast<Eigen::Index>(i)];
      propeller_count_[i] = p >= config_.gamma_P ? propeller_count_[i] + 1 : 0;
      tick.degradation[i] = p >= config_.degradation_threshold && p < config_.gamma_P;
      triggers.propeller[i] = propeller_count_[i] >= config_.debounce_count;
      triggers.propeller_value[i] = p;
    }
  } else {
    propeller_count_.fill(0);
  }

  // Takeoff abnormality monitor, takeoff stage only.
  if (stage == FlightStage::Takeoff && filters_.elapsed() > 0.0) {
    const double yaw = quat_yaw(frame.odom_attitude);
    const double c = std::cos(yaw), s = std::sin(yaw);
    const Vector3d& a = filters_.accel_world();
    const Eigen::Vector2d accel_heading(c * a.x() + s * a.y(), -s * a.x() + c * a.y());
    const Eigen::Vector2d alpha_xy = filters_.angular_accel().head<2>();
    const auto flags = takeoff_monitor(accel_heading, alpha_xy, config_, params_);
    for (std::size_t i = 0; i < kNumRotors; ++i) {
      takeoff_count_[i] = flags[i] ? takeoff_count_[i] + 1 : 0;
      tick.takeoff_flag[i] = flags[i];
      triggers.takeoff[i] = takeoff_count_[i] >= config_.debounce_count;
      triggers.takeoff_value[i] = alpha_xy.norm();
    }
  } else {
    takeoff_count_.fill(0);
  }

  // Single-fault assumption: once latched, no further reports.
  if (reports_.empty()) {
    tick.new_reports = arbitrate(stage, triggers, frame.timestamp);
    reports_ = tick.new_reports;
  }
  return tick;
}

}  // namespace rfa
