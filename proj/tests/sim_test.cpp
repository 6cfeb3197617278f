#include "doctest.h"

#include <cmath>
#include <tuple>

#include "rfa/error.hpp"
#include "rfa/sim.hpp"

using namespace rfa;

TEST_CASE("step: hover is unchanged") {
  VehicleParams p;
  const VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  const VehicleState y = step(x, ControlCommand{x.t, 0.0}, Vector4d::Ones(), 0.0025, p);
  CHECK((y.pack() - x.pack()).norm() < 1e-9);
}

TEST_CASE("step: losing rotor 0 torques the body against its column") {
  VehicleParams p;
  VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  x.t[0] = 0.0;
  const Vector4d eff(0.0, 1.0, 1.0, 1.0);
  const Eigen::Matrix4d mt = effectiveness_matrix<double>(p);
  VehicleState y = x;
  for (int k = 0; k < 40; ++k) y = step(y, ControlCommand{Vector4d::Constant(p.hover_thrust()), 0.0}, eff, 0.0025, p);
  // Remaining torque is -column0 * T0: both roll and pitch rates take the
  // opposite sign of rotor 0's roll/pitch entries.
  CHECK(y.w.x() * mt(1, 0) < 0.0);
  CHECK(y.w.y() * mt(2, 0) < 0.0);
  CHECK(y.t[0] == 0.0);
  CHECK(y.eta.z() < 1.0);
}

TEST_CASE("step: step size is checked") {
  VehicleParams p;
  const VehicleState x = VehicleState::hover(p);
  CHECK_THROWS_AS(step(x, ControlCommand{}, Vector4d::Ones(), 0.0, p), Error);
  CHECK_THROWS_AS(step(x, ControlCommand{}, Vector4d::Ones(), 0.02, p), Error);
  CHECK_THROWS_AS(step(x, ControlCommand{}, Vector4d(1.2, 1, 1, 1), 0.001, p), Error);
}

TEST_CASE("step: halving the step converges at fourth order") {
  VehicleParams p;
  VehicleState x0 = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  x0.w = Vector3d(0.4, -0.6, 2.0);
  x0.v = Vector3d(0.5, -1.0, 0.3);
  const ControlCommand u{Vector4d(3.0, 2.2, 3.1, 2.6), 0.0};
  auto run = [&](double h, int n) {
    VehicleState x = x0;
    for (int k = 0; k < n; ++k) x = step(x, u, Vector4d::Ones(), h, p);
    return x.pack();
  };
  const auto ref = run(0.0025 / 16.0, 160);
  const double e1 = (run(0.0025, 10) - ref).norm();
  const double e2 = (run(0.00125, 20) - ref).norm();
  CHECK(e1 / e2 > 12.0);
}

TEST_CASE("sense: noiseless hover") {
  VehicleParams p;
  const VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  const auto dx = continuous_dynamics(x, ControlCommand{x.t, 0.0}, p);
  std::mt19937_64 rng(1);
  const SensorFrame f = sense(x, dx, x.t, 0.0, p, NoiseProfile::zero(), rng);
  CHECK((f.accel_meas - Vector3d(0.0, 0.0, 9.81)).norm() < 1e-12);
  CHECK(f.gyro_meas.norm() == 0.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(f.rpm_meas[i] > 5000.0);
    CHECK(f.rpm_meas[i] < 20000.0);
  }
}

TEST_CASE("sense: seeded stream is reproducible") {
  VehicleParams p;
  const VehicleState x = VehicleState::hover(p, Vector3d(0.0, 0.0, 1.0));
  const auto dx = continuous_dynamics(x, ControlCommand{x.t, 0.0}, p);
  std::mt19937_64 a(42), b(42), c(43);
  for (int k = 0; k < 50; ++k) {
    const SensorFrame fa = sense(x, dx, x.t, 0.005 * k, p, NoiseProfile{}, a);
    const SensorFrame fb = sense(x, dx, x.t, 0.005 * k, p, NoiseProfile{}, b);
    const SensorFrame fc = sense(x, dx, x.t, 0.005 * k, p, NoiseProfile{}, c);
    CHECK(fa.accel_meas == fb.accel_meas);
    CHECK(fa.rpm_meas == fb.rpm_meas);
    CHECK(fa.odom_attitude == fb.odom_attitude);
    CHECK(fa.accel_meas != fc.accel_meas);
  }
}

TEST_CASE("lowpass: DC gain, step response, and wide-band limit") {
  FilterState f;
  f.cutoff_hz = 20.0;
  Eigen::VectorXd out;
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(1, 3.5);
  for (int k = 0; k < 10; ++k) std::tie(f, out) = lowpass(f, c, 0.005);
  CHECK(out[0] == doctest::Approx(3.5).epsilon(1e-15));

  FilterState s;
  s.cutoff_hz = 10.0;
  std::tie(s, out) = lowpass(s, Eigen::VectorXd::Zero(1), 1e-5);
  const double tau = 1.0 / (2.0 * M_PI * 10.0);
  const int n = static_cast<int>(std::lround(tau / 1e-5));
  for (int k = 0; k < n; ++k) std::tie(s, out) = lowpass(s, Eigen::VectorXd::Ones(1), 1e-5);
  CHECK(std::abs(out[0] - 0.632) < 0.02 * 0.632);

  FilterState w;
  w.cutoff_hz = 1e12;
  std::tie(w, out) = lowpass(w, Eigen::VectorXd::Zero(1), 0.005);
  std::tie(w, out) = lowpass(w, Eigen::VectorXd::Constant(1, 2.0), 0.005);
  CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("simulator: energy is non-increasing without thrust") {
  VehicleParams p;
  SimConfig cfg;
  cfg.noise = NoiseProfile::zero();
  VehicleState x;
  x.eta = Vector3d(0.0, 0.0, 50.0);
  x.v = Vector3d(2.0, -1.0, 0.5);
  x.w = Vector3d(1.0, 0.5, 3.0);
  Simulator sim(p, cfg, x, {}, 0);
  double e = mechanical_energy(sim.state(), p);
  for (int k = 0; k < 400; ++k) {
    sim.advance(ControlCommand{});
    const double next = mechanical_energy(sim.state(), p);
    CHECK(next <= e + 1e-9);
    e = next;
  }
}

TEST_CASE("simulator: motor stop latches and thrust respects the cap") {
  VehicleParams p;
  SimConfig cfg;
  FailureSchedule schedule;
  schedule.events.push_back({0.1, 2, FailureMode::PropellerLoss, 0.5});
  schedule.events.push_back({0.2, 0, FailureMode::MotorStop, 1.0});
  Simulator sim(p, cfg, VehicleState::hover(p, Vector3d(0.0, 0.0, 5.0)), schedule, 7);
  for (int k = 0; k < 200; ++k) {
    sim.advance(ControlCommand{Vector4d::Constant(p.T_bar), 0.0});
    if (sim.time() > 0.2 + 1e-9) {
      CHECK(sim.state().t[0] == 0.0);
      CHECK(sim.motor_thrust()[0] == 0.0);
    }
    for (int i = 0; i < 4; ++i) CHECK(sim.state().t[i] <= sim.effectiveness()[i] * p.T_bar);
  }
  CHECK(sim.first_injection_time() == doctest::Approx(0.1));
  CHECK(sim.failed_rotor() == 2);
  CHECK(sim.effectiveness()[2] == doctest::Approx(0.5));
}

TEST_CASE("simulator: ground support until liftoff") {
  VehicleParams p;
  SimConfig cfg;
  VehicleState x;
  x.t = Vector4d::Constant(1.0);
  Simulator sim(p, cfg, x, {}, 0);
  for (int k = 0; k < 50; ++k) sim.advance(ControlCommand{Vector4d::Constant(1.0), 0.0});
  CHECK(sim.state().eta.z() == 0.0);
  CHECK(sim.on_ground());
  for (int k = 0; k < 100; ++k) sim.advance(ControlCommand{Vector4d::Constant(4.0), 0.0});
  CHECK(sim.lifted_off());
  CHECK(sim.state().eta.z() > 0.0);
}

TEST_CASE("schedule validation") {
  FailureSchedule s;
  s.events.push_back({1.0, 0, FailureMode::MotorStop, 0.5});
  CHECK_THROWS_AS(s.validate(), Error);
  s.events[0].severity = 1.0;
  s.events.push_back({0.5, 1, FailureMode::PropellerLoss, 0.5});
  CHECK_THROWS_AS(s.validate(), Error);
  s.events[1].time = 2.0;
  CHECK_NOTHROW(s.validate());
  s.events[1].rotor = 4;
  CHECK_THROWS_AS(s.validate(), Error);
}
