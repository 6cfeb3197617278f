#include "rfa/sim.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "rfa/error.hpp"

namespace rfa {

const char* to_string(FailureMode mode) {
  return mode == FailureMode::MotorStop ? "motor_stop" : "propeller_loss";
}

FailureMode failure_mode_from_string(const std::string& text) {
  if (text == "motor_stop" || text == "MotorStop") return FailureMode::MotorStop;
  if (text == "propeller_loss" || text == "PropellerLoss") return FailureMode::PropellerLoss;
  fail(ErrorKind::Config, "unknown failure mode '" + text + "'");
}

void FailureSchedule::validate() const {
  double previous = -1.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const std::string where = "failures[" + std::to_string(i) + "]";
    if (!(e.time >= 0.0) || !(e.time > previous)) {
      fail(ErrorKind::Config, where + ".time: must be non-negative and strictly increasing");
    }
    if (e.rotor < 0 || e.rotor >= kNumRotors) fail(ErrorKind::Config, where + ".rotor: out of range");
    if (!(e.severity > 0.0 && e.severity <= 1.0)) {
      fail(ErrorKind::Config, where + ".severity: must be in (0, 1]");
    }
    if (e.mode == FailureMode::MotorStop && e.severity != 1.0) {
      fail(ErrorKind::Config, where + ".severity: motor stop implies severity 1");
    }
    previous = e.time;
  }
}

std::pair<FilterState, Eigen::VectorXd> lowpass(FilterState f, const Eigen::VectorXd& sample,
                                                double dt) {
  if (!(dt > 0.0)) fail(ErrorKind::InvalidInput, "lowpass: dt must be positive");
  if (!f.initialized || f.output.size() != sample.size()) {
    f.output = sample;
    f.initialized = true;
    return {f, f.output};
  }
  const double alpha = dt / (dt + 1.0 / (2.0 * M_PI * f.cutoff_hz));
  f.output += alpha * (sample - f.output);
  return {f, f.output};
}

SensorFilterBank::SensorFilterBank(const Cutoffs& cutoffs) : cutoffs_(cutoffs) {
  accel_.cutoff_hz = cutoffs.accel_hz;
  gyro_.cutoff_hz = cutoffs.gyro_hz;
  alpha_.cutoff_hz = cutoffs.angular_accel_hz;
}

double SensorFilterBank::time_constant() const {
  const double fc = std::min({cutoffs_.accel_hz, cutoffs_.gyro_hz, cutoffs_.angular_accel_hz});
  return 1.0 / (2.0 * M_PI * fc);
}

void SensorFilterBank::update(const SensorFrame& frame, const VehicleParams& params) {
  const Vector3d accel_world =
      rotation_matrix(frame.odom_attitude) * frame.accel_meas - Vector3d(0.0, 0.0, params.g);
  if (!have_prev_) {
    std::tie(accel_, std::ignore) = lowpass(accel_, accel_world, 1.0);
    std::tie(gyro_, std::ignore) = lowpass(gyro_, frame.gyro_meas, 1.0);
    std::tie(alpha_, std::ignore) = lowpass(alpha_, Vector3d::Zero().eval(), 1.0);
    accel_world_ = accel_world;
    rates_ = frame.gyro_meas;
    angular_accel_.setZero();
    prev_rates_ = rates_;
    prev_time_ = start_time_ = frame.timestamp;
    have_prev_ = true;
    return;
  }
  const double dt = frame.timestamp - prev_time_;
  if (!(dt > 0.0)) fail(ErrorKind::InvalidInput, "SensorFilterBank: timestamps must increase");
  Eigen::VectorXd out;
  std::tie(accel_, out) = lowpass(accel_, accel_world, dt);
  accel_world_ = out;
  std::tie(gyro_, out) = lowpass(gyro_, frame.gyro_meas, dt);
  rates_ = out;
  const Vector3d difference = (rates_ - prev_rates_) / dt;
  std::tie(alpha_, out) = lowpass(alpha_, difference, dt);
  angular_accel_ = out;
  prev_rates_ = rates_;
  prev_time_ = frame.timestamp;
  elapsed_ = frame.timestamp - start_time_;
}

VehicleState step(const VehicleState& x, const ControlCommand& u, const Vector4d& effectiveness,
                  double dt, const VehicleParams& params) {
  if (!(dt > 0.0 && dt <= 0.01)) fail(ErrorKind::Config, "step: dt must lie in (0, 0.01] s");
  if ((effectiveness.array() < 0.0).any() || (effectiveness.array() > 1.0).any()) {
    fail(ErrorKind::InvalidInput, "step: effectiveness must lie in [0, 1]");
  }
  const Vector4d command = u.u.cwiseMax(0.0).cwiseMin(params.T_bar).cwiseProduct(effectiveness);
  StateVector<double> next = rk4_step<double>(x.pack(), command, params, dt);
  VehicleState out = VehicleState::unpack(next);
  out.q.normalize();
  for (int i = 0; i < kNumRotors; ++i) {
    out.t[i] = std::clamp(out.t[i], 0.0, effectiveness[i] * params.T_bar);
  }
  return out;
}

namespace {

Vector3d gaussian3(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3d out;
  for (int i = 0; i < 3; ++i) out[i] = n(rng);
  return sigma * out;
}

}  // namespace

SensorFrame sense(const VehicleState& x, const StateVector<double>& xdot,
                  const Vector4d& motor_thrust, double timestamp, const VehicleParams& params,
                  const NoiseProfile& noise, std::mt19937_64& rng) {
  SensorFrame f;
  f.timestamp = timestamp;
  const Mat3<double> r = rotation_matrix(x.q);
  const Vector3d accel = xdot.segment<3>(sx::vel);
  // Draw order is fixed so a seed reproduces the stream exactly.
  f.accel_meas = r.transpose() * (accel + Vector3d(0.0, 0.0, params.g)) + gaussian3(rng, noise.accel);
  f.gyro_meas = x.w + gaussian3(rng, noise.gyro);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < kNumRotors; ++i) {
    f.rpm_meas[i] = std::max(0.0, params.thrust_to_rpm(motor_thrust[i]) + noise.rpm * n(rng));
  }
  f.odom_position = x.eta + gaussian3(rng, noise.odom_position);
  f.odom_velocity = x.v + gaussian3(rng, noise.odom_velocity);
  const Vector3d att = gaussian3(rng, noise.odom_attitude);
  if (att.norm() > 0.0) {
    f.odom_attitude = quat_mul(x.q, quat_from_axis_angle(att, att.norm())).normalized();
  } else {
    f.odom_attitude = x.q;
  }
  return f;
}

Simulator::Simulator(const VehicleParams& params, const SimConfig& config,
                     const VehicleState& initial, FailureSchedule schedule, std::uint64_t seed)
    : params_(params),
      config_(config),
      state_(initial),
      schedule_(std::move(schedule)),
      motor_thrust_(initial.t),
      rng_(seed) {
  params_.validate();
  schedule_.validate();
  if (!(config.physics_dt > 0.0 && config.physics_dt <= 0.01)) {
    fail(ErrorKind::Config, "sim.physics_dt: must lie in (0, 0.01] s");
  }
  const double ratio = config.control_dt / config.physics_dt;
  if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-9) {
    fail(ErrorKind::Config, "sim.control_dt: must be an integer multiple of physics_dt");
  }
  if (!(config.liftoff_height >= 0.0)) {
    fail(ErrorKind::Config, "sim.liftoff_height: must be non-negative");
  }
  state_.q.normalize();
  if (state_.eta.z() <= 0.0) {
    ground_support_ = true;
    state_.eta.z() = 0.0;
    ground_attitude_ = state_.q;
  } else {
    lifted_off_ = true;
  }
  last_command_ = initial.t;
  last_derivative_ = state_derivative<double>(state_.pack(), state_.t, params_);
  if (ground_support_) {
    last_derivative_.segment<3>(sx::vel).setZero();
    last_derivative_.segment<3>(sx::rate).setZero();
  }
}

void Simulator::apply_due_failures() {
  while (next_event_ < schedule_.events.size() &&
         schedule_.events[next_event_].time <= time_ + 1e-12) {
    const auto& e = schedule_.events[next_event_];
    if (e.mode == FailureMode::MotorStop) {
      effectiveness_[e.rotor] = 0.0;
      motor_stopped_[static_cast<std::size_t>(e.rotor)] = true;
      motor_thrust_[e.rotor] = 0.0;
      state_.t[e.rotor] = 0.0;
    } else {
      const double remaining = effectiveness_[e.rotor] * (1.0 - e.severity);
      const double scale = effectiveness_[e.rotor] > 0.0 ? remaining / effectiveness_[e.rotor] : 0.0;
      effectiveness_[e.rotor] = remaining;
      state_.t[e.rotor] *= scale;
    }
    if (first_injection_ < 0.0) {
      first_injection_ = e.time;
      failed_rotor_ = e.rotor;
    }
    ++next_event_;
  }
}

void Simulator::physics_step(const ControlCommand& command, double dt) {
  apply_due_failures();
  state_ = step(state_, command, effectiveness_, dt, params_);
  const double gain = 1.0 - std::exp(-dt / params_.sigma);
  for (int i = 0; i < kNumRotors; ++i) {
    if (motor_stopped_[static_cast<std::size_t>(i)]) {
      motor_thrust_[i] = 0.0;
      continue;
    }
    const double target = std::clamp(command.u[i], 0.0, params_.T_bar);
    motor_thrust_[i] = std::clamp(motor_thrust_[i] + gain * (target - motor_thrust_[i]), 0.0,
                                  params_.T_bar);
  }
  ++physics_steps_;
  time_ = static_cast<double>(physics_steps_) * dt;
  if (ground_support_) {
    if (state_.eta.z() <= 0.0) {
      state_.eta.z() = 0.0;
      state_.v.setZero();
      state_.w.setZero();
      state_.q = ground_attitude_;
    } else if (state_.eta.z() > config_.liftoff_height) {
      ground_support_ = false;
      lifted_off_ = true;
    }
  }
}

SensorFrame Simulator::advance(const ControlCommand& command) {
  if (!command.u.allFinite()) fail(ErrorKind::InvalidInput, "Simulator: non-finite command");
  const int substeps = static_cast<int>(std::lround(config_.control_dt / config_.physics_dt));
  for (int i = 0; i < substeps; ++i) physics_step(command, config_.physics_dt);
  last_command_ = command.u.cwiseMax(0.0).cwiseMin(params_.T_bar).cwiseProduct(effectiveness_);
  return measure();
}

SensorFrame Simulator::measure() {
  last_derivative_ = state_derivative<double>(state_.pack(), last_command_, params_);
  if (ground_support_ && state_.eta.z() <= 0.0) {
    last_derivative_.segment<3>(sx::vel).setZero();
    last_derivative_.segment<3>(sx::rate).setZero();
  }
  return sense(state_, last_derivative_, motor_thrust_, time_, params_, config_.noise, rng_);
}

double mechanical_energy(const VehicleState& x, const VehicleParams& params) {
  const double kinetic = 0.5 * params.m * x.v.squaredNorm();
  const double rotational = 0.5 * x.w.dot(params.I_v.cwiseProduct(x.w));
  return kinetic + rotational + params.m * params.g * x.eta.z();
}

}  // namespace rfa
