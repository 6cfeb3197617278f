#include "doctest.h"

#include <cmath>
#include <vector>

#include "rfa/error.hpp"
#include "rfa/fdd.hpp"
#include "rfa/sim.hpp"

using namespace rfa;

namespace {

ObserverInput truth_input(const VehicleState& x, const Vector4d& rotor_thrust, const VehicleParams& p) {
  const auto dx = continuous_dynamics(x, ControlCommand{x.t, 0.0}, p);
  ObserverInput in;
  in.rotor_thrust = rotor_thrust;
  in.attitude = x.q;
  in.velocity = x.v;
  in.accel_world = dx.segment<3>(sx::vel);
  in.angular_accel = dx.segment<3>(sx::rate);
  in.rates = x.w;
  return in;
}

struct Recorded {
  std::vector<SensorFrame> frames;
  std::vector<Vector4d> commands;
};

/// Open-loop run holding a constant command, recording what the detector sees.
Recorded record(const VehicleState& start, const FailureSchedule& schedule, const Vector4d& command,
                int ticks, const NoiseProfile& noise, std::uint64_t seed) {
  VehicleParams p;
  SimConfig cfg;
  cfg.noise = noise;
  Simulator sim(p, cfg, start, schedule, seed);
  Recorded r;
  for (int k = 0; k < ticks; ++k) {
    r.frames.push_back(sim.advance(ControlCommand{command, 0.0}));
    r.commands.push_back(command);
  }
  return r;
}

std::vector<FaultReport> replay(const Recorded& r, const FddConfig& cfg, FlightStage stage) {
  FaultDetector det(VehicleParams{}, cfg);
  for (std::size_t k = 0; k < r.frames.size(); ++k) det.update(r.frames[k], r.commands[k], stage);
  return det.reports();
}

}  // namespace

TEST_CASE("motor index values") {
  const double floor = 1000.0;
  const auto stopped = motor_index(Vector4d(1528, 10185, 10185, 10185), Vector4d::Constant(10185), floor);
  REQUIRE(stopped[0]);
  CHECK(*stopped[0] == doctest::Approx(0.150).epsilon(1e-3));
  CHECK(*stopped[0] <= FddConfig{}.gamma_M);
  CHECK(*stopped[1] == 1.0);
  const auto boundary = motor_index(Vector4d::Constant(0.21 * 9000), Vector4d::Constant(9000), floor);
  CHECK(*boundary[0] > FddConfig{}.gamma_M);
  const auto idle = motor_index(Vector4d::Zero(), Vector4d(500, 2000, 2000, 2000), floor);
  CHECK_FALSE(idle[0].has_value());
  CHECK(idle[1].has_value());
}

TEST_CASE("observer: consistent hover gives no loss") {
  VehicleParams p;
  const VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  const Vector4d t_star = thrust_loss_observer(truth_input(x, x.t, p), p);
  CHECK(t_star.norm() < 1e-12);
}

TEST_CASE("observer: a dead rotor shows as its missing thrust") {
  VehicleParams p;
  VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  const Vector4d commanded = x.t;
  x.t[0] = 0.0;
  const Vector4d t_star = thrust_loss_observer(truth_input(x, commanded, p), p);
  CHECK(t_star[0] == doctest::Approx(commanded[0]).epsilon(1e-9));
  CHECK(t_star.tail<3>().norm() < 1e-9);
  CHECK(propeller_index(t_star, p)[0] == doctest::Approx(commanded[0] / p.T_bar));

  VehicleState y = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  y.w = Vector3d(0.2, -0.1, 4.0);
  y.v = Vector3d(0.5, 0.3, 0.0);
  const Vector4d cmd = y.t;
  y.t[2] *= 0.6;
  y.t[3] *= 0.6;
  const Vector4d split = thrust_loss_observer(truth_input(y, cmd, p), p);
  CHECK(split[2] == doctest::Approx(split[3]).epsilon(1e-9));
  CHECK(split[2] == doctest::Approx(0.4 * cmd[2]).epsilon(1e-9));
}

TEST_CASE("propeller index thresholds") {
  VehicleParams p;
  FddConfig cfg;
  CHECK(propeller_index(Vector4d(0.82 * p.T_bar, 0, 0, 0), p)[0] >= cfg.gamma_P);
  CHECK(propeller_index(Vector4d::Zero(), p).norm() == 0.0);
  CHECK(propeller_index(Vector4d(0.5 * p.T_bar, 0, 0, 0), p)[0] < cfg.gamma_P);
}

TEST_CASE("takeoff monitor: quiet signals raise nothing") {
  VehicleParams p;
  FddConfig cfg;
  const auto none = takeoff_monitor(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), cfg, p);
  for (bool b : none) CHECK_FALSE(b);
  const auto small = takeoff_monitor(Eigen::Vector2d(0.004, -0.004), Eigen::Vector2d(0.1, 0.1), cfg, p);
  for (bool b : small) CHECK_FALSE(b);
}

TEST_CASE("takeoff monitor: rotor 0 pattern") {
  VehicleParams p;
  FddConfig cfg;
  // Losing rotor 0 leaves positive roll and pitch torque: the nose pitches
  // down toward +x and the body rolls toward -y.
  const auto flags = takeoff_monitor(Eigen::Vector2d(0.01, -0.01), Eigen::Vector2d(2.0, 2.0), cfg, p);
  CHECK(flags[0]);
  CHECK_FALSE(flags[1]);
  CHECK_FALSE(flags[2]);
  CHECK_FALSE(flags[3]);

  // By default only the angular pattern counts.
  const auto lateral = takeoff_monitor(Eigen::Vector2d(0.01, -0.01), Eigen::Vector2d::Zero(), cfg, p);
  const auto alpha = takeoff_monitor(Eigen::Vector2d::Zero(), Eigen::Vector2d(2.0, 2.0), cfg, p);
  CHECK_FALSE(lateral[0]);
  CHECK(alpha[0]);
  CHECK_FALSE(alpha[1]);
  cfg.takeoff_rule = TakeoffRule::Either;
  CHECK(takeoff_monitor(Eigen::Vector2d(0.01, -0.01), Eigen::Vector2d::Zero(), cfg, p)[0]);
  cfg.takeoff_rule = TakeoffRule::Both;
  CHECK_FALSE(takeoff_monitor(Eigen::Vector2d::Zero(), Eigen::Vector2d(2.0, 2.0), cfg, p)[0]);
  CHECK(takeoff_monitor(Eigen::Vector2d(0.01, -0.01), Eigen::Vector2d(2.0, 2.0), cfg, p)[0]);
  CHECK_THROWS_AS(takeoff_rule_from_string("any"), Error);
}

TEST_CASE("takeoff monitor: no debounced trigger in 60 s of noisy hover") {
  VehicleParams p;
  SimConfig sc;
  Simulator sim(p, sc, VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0)), {}, 3);
  FaultDetector fdd(p, FddConfig{});
  const ControlCommand cmd{Vector4d::Constant(p.hover_thrust()), 0.0};
  for (int k = 0; k < 12000; ++k) fdd.update(sim.advance(cmd), cmd.u, FlightStage::Takeoff);
  CHECK_FALSE(fdd.faulted());
}

TEST_CASE("takeoff monitor identifies each rotor after a liftoff failure") {
  VehicleParams p;
  for (int rotor = 0; rotor < 4; ++rotor) {
    FailureSchedule schedule;
    schedule.events.push_back({0.05, rotor, FailureMode::PropellerLoss, 1.0});
    VehicleState start;
    start.t = Vector4d::Constant(p.hover_thrust());
    const Recorded r = record(start, schedule, Vector4d::Constant(1.15 * p.hover_thrust()), 40,
                              NoiseProfile::zero(), 1);
    const auto reports = replay(r, FddConfig{}, FlightStage::Takeoff);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].rotor == rotor);
    CHECK(reports[0].fault_class == FaultClass::TakeoffDetected);
    CHECK(reports[0].time - 0.05 <= 0.03);
  }
}

TEST_CASE("takeoff monitor: nominal climb raises nothing") {
  VehicleParams p;
  VehicleState start;
  start.t = Vector4d::Constant(p.hover_thrust());
  const Recorded r = record(start, {}, Vector4d::Constant(1.15 * p.hover_thrust()), 200, NoiseProfile::zero(), 1);
  CHECK(replay(r, FddConfig{}, FlightStage::Takeoff).empty());
}

TEST_CASE("arbitration: priority, gating and multi-fault") {
  MechanismTriggers t;
  t.takeoff[1] = true;
  t.propeller[2] = true;
  t.motor[3] = true;
  const auto takeoff = arbitrate(FlightStage::Takeoff, t, 1.0);
  REQUIRE(takeoff.size() == 1);
  CHECK(takeoff[0].rotor == 3);
  CHECK(takeoff[0].mechanism == Mechanism::MotorIndex);

  MechanismTriggers only_model;
  only_model.takeoff[1] = true;
  only_model.propeller[2] = true;
  const auto tracking = arbitrate(FlightStage::Tracking, only_model, 2.0);
  REQUIRE(tracking.size() == 1);
  CHECK(tracking[0].rotor == 2);
  CHECK(tracking[0].fault_class == FaultClass::Propeller);
  const auto at_takeoff = arbitrate(FlightStage::Takeoff, only_model, 2.0);
  REQUIRE(at_takeoff.size() == 1);
  CHECK(at_takeoff[0].rotor == 1);

  MechanismTriggers two;
  two.motor[0] = true;
  two.motor[2] = true;
  CHECK(arbitrate(FlightStage::Tracking, two, 0.0).size() == 2);
  CHECK(arbitrate(FlightStage::Tracking, MechanismTriggers{}, 0.0).empty());
}

TEST_CASE("detector: motor stop at hover is latched and replayable") {
  VehicleParams p;
  FailureSchedule schedule;
  schedule.events.push_back({0.3, 1, FailureMode::MotorStop, 1.0});
  const Recorded r = record(VehicleState::hover(p, Vector3d(0.0, 0.0, 5.0)), schedule,
                            Vector4d::Constant(p.hover_thrust()), 120, NoiseProfile{}, 5);
  FaultDetector det(p, FddConfig{});
  int emitted = 0;
  for (std::size_t k = 0; k < r.frames.size(); ++k) {
    emitted += static_cast<int>(det.update(r.frames[k], r.commands[k], FlightStage::Tracking).new_reports.size());
  }
  CHECK(emitted == 1);
  REQUIRE(det.primary());
  CHECK(det.primary()->rotor == 1);
  CHECK(det.primary()->fault_class == FaultClass::Motor);
  CHECK(det.primary()->time >= 0.3);
  CHECK(det.primary()->time - 0.3 <= 0.05);
  CHECK_FALSE(det.multi_fault());

  const auto again = replay(r, FddConfig{}, FlightStage::Tracking);
  REQUIRE(again.size() == 1);
  CHECK(again[0].time == det.primary()->time);
  CHECK(again[0].index_value == det.primary()->index_value);
}

TEST_CASE("detector: easier motor threshold never detects later") {
  VehicleParams p;
  FailureSchedule schedule;
  schedule.events.push_back({0.2, 2, FailureMode::MotorStop, 1.0});
  const Recorded r = record(VehicleState::hover(p, Vector3d(0.0, 0.0, 5.0)), schedule,
                            Vector4d::Constant(p.hover_thrust()), 80, NoiseProfile{}, 9);
  double previous = -1.0;
  for (double gamma : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    FddConfig cfg;
    cfg.gamma_M = gamma;
    const auto reports = replay(r, cfg, FlightStage::Tracking);
    REQUIRE(reports.size() == 1);
    if (previous >= 0.0) CHECK(reports[0].time <= previous);
    previous = reports[0].time;
  }
}

TEST_CASE("detector: propeller loss at hover and degradation warning") {
  VehicleParams p;
  FailureSchedule schedule;
  schedule.events.push_back({0.3, 0, FailureMode::PropellerLoss, 1.0});
  // Rotor 0 commanded near its limit, as the controller does after losing thrust.
  VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 5.0));
  const Recorded r = record(x, schedule, Vector4d(p.T_bar, p.hover_thrust(), p.hover_thrust(), p.hover_thrust()),
                            100, NoiseProfile::zero(), 2);
  const auto reports = replay(r, FddConfig{}, FlightStage::Tracking);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].rotor == 0);
  CHECK(reports[0].fault_class == FaultClass::Propeller);
  CHECK(reports[0].index_value >= 0.8);

  FailureSchedule partial;
  partial.events.push_back({0.3, 0, FailureMode::PropellerLoss, 0.5});
  const Recorded rp = record(x, partial, Vector4d(p.T_bar, p.hover_thrust(), p.hover_thrust(), p.hover_thrust()),
                             100, NoiseProfile::zero(), 2);
  FaultDetector det(p, FddConfig{});
  bool warned = false;
  for (std::size_t k = 0; k < rp.frames.size(); ++k) {
    warned = warned || det.update(rp.frames[k], rp.commands[k], FlightStage::Tracking).degradation[0];
  }
  CHECK(warned);
  CHECK_FALSE(det.faulted());
}

TEST_CASE("detector: noiseless hover has zero estimated loss") {
  VehicleParams p;
  const Recorded r = record(VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0)), {},
                            Vector4d::Constant(p.hover_thrust()), 200, NoiseProfile::zero(), 3);
  FaultDetector det(p, FddConfig{});
  FddTick tick;
  for (std::size_t k = 0; k < r.frames.size(); ++k) tick = det.update(r.frames[k], r.commands[k], FlightStage::Tracking);
  CHECK(tick.propeller_index.cwiseAbs().maxCoeff() * p.T_bar < 1e-6 * p.T_bar);
  CHECK_FALSE(det.faulted());
}

TEST_CASE("config validation") {
  FddConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma_M = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FddConfig{};
  cfg.debounce_count = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FddConfig{};
  cfg.gamma_Q[2] = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
