#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rfa/error.hpp"
#include "rfa/minco.hpp"
#include "rfa/traj_opt.hpp"

using namespace rfa;

namespace {

struct Instance {
  BoundaryState head, tail;
  Eigen::Matrix3Xd q;
  Eigen::VectorXd T;
};

Instance random_instance(std::mt19937_64& rng, int m) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), dur(0.5, 2.5);
  Instance in;
  in.head = BoundaryState::Zero();
  in.tail = BoundaryState::Zero();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      in.head(r, c) = u(rng) * (c == 0 ? 3.0 : 1.0);
      in.tail(r, c) = u(rng) * (c == 0 ? 3.0 : 1.0);
    }
  }
  in.q.resize(3, m - 1);
  for (int i = 0; i < m - 1; ++i) in.q.col(i) = 3.0 * Eigen::Vector3d(u(rng), u(rng), u(rng));
  in.T.resize(m);
  for (int i = 0; i < m; ++i) in.T[i] = dur(rng);
  return in;
}

double relative_gradient_error(const PlanProblem& pb, const Eigen::Matrix3Xd& q, const Eigen::VectorXd& T) {
  Eigen::Matrix3Xd gq;
  Eigen::VectorXd gT;
  cost_and_grad(pb, q, T, &gq, &gT);
  const double h = 1e-6;
  Eigen::VectorXd analytic(gq.size() + gT.size()), numeric(gq.size() + gT.size());
  int k = 0;
  for (int j = 0; j < q.cols(); ++j) {
    for (int r = 0; r < 3; ++r, ++k) {
      Eigen::Matrix3Xd qp = q, qm = q;
      qp(r, j) += h;
      qm(r, j) -= h;
      numeric[k] = (cost_and_grad(pb, qp, T).total - cost_and_grad(pb, qm, T).total) / (2.0 * h);
      analytic[k] = gq(r, j);
    }
  }
  for (int i = 0; i < T.size(); ++i, ++k) {
    Eigen::VectorXd Tp = T, Tm = T;
    Tp[i] += h;
    Tm[i] -= h;
    numeric[k] = (cost_and_grad(pb, q, Tp).total - cost_and_grad(pb, q, Tm).total) / (2.0 * h);
    analytic[k] = gT[i];
  }
  return (analytic - numeric).norm() / numeric.norm();
}

OccupancyWorld small_forest(std::uint64_t seed) {
  WorldSpec spec;
  spec.kind = WorldKind::Forest;
  spec.size = Vector3d(8.0, 5.0, 2.5);
  spec.density = 0.12;
  spec.seed = seed;
  OccupancyWorld w = generate_world(spec);
  w.reveal_all();
  return w;
}

}  // namespace

TEST_CASE("one segment rest to rest is the textbook quintic") {
  const Eigen::Vector3d a(1.0, -2.0, 0.5), b(4.0, 1.0, 2.0);
  const double T = 2.5;
  Minco minco;
  minco.solve(rest_state(a), rest_state(b), Eigen::Matrix3Xd(3, 0), Eigen::VectorXd::Constant(1, T));
  const Eigen::MatrixX3d& c = minco.coefficients();
  const Eigen::RowVector3d d = (b - a).transpose();
  CHECK((c.row(0) - a.transpose()).norm() < 1e-12);
  CHECK(c.row(1).norm() < 1e-12);
  CHECK(c.row(2).norm() < 1e-12);
  CHECK((c.row(3) - 10.0 * d / std::pow(T, 3)).norm() < 1e-12);
  CHECK((c.row(4) + 15.0 * d / std::pow(T, 4)).norm() < 1e-12);
  CHECK((c.row(5) - 6.0 * d / std::pow(T, 5)).norm() < 1e-12);
  // Closed form energy of the quintic: 720 |d|^2 / T^5.
  CHECK(minco.jerk_energy() == doctest::Approx(720.0 * d.squaredNorm() / std::pow(T, 5)).epsilon(1e-12));
}

TEST_CASE("two mirrored segments give mirrored coefficients") {
  Minco minco;
  Eigen::Matrix3Xd q(3, 1);
  q.col(0) = Eigen::Vector3d(0.0, 1.0, 0.3);
  minco.solve(rest_state(Eigen::Vector3d(-1.0, 0.0, 0.3)), rest_state(Eigen::Vector3d(1.0, 0.0, 0.3)), q,
              Eigen::Vector2d(1.5, 1.5));
  const PiecewiseTrajectory traj = minco.trajectory();
  for (double t : {0.0, 0.2, 0.7, 1.1, 1.5}) {
    const Eigen::Vector3d p = traj.eval(t, 0), r = traj.eval(3.0 - t, 0);
    CHECK(p.x() == doctest::Approx(-r.x()).epsilon(1e-12));
    CHECK(p.y() == doctest::Approx(r.y()).epsilon(1e-12));
    CHECK(p.z() == doctest::Approx(r.z()).epsilon(1e-12));
  }
}

TEST_CASE("spline energy matches the dense quadratic program") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 1 + trial % 8;
    const Instance in = random_instance(rng, m);
    Minco minco;
    minco.solve(in.head, in.tail, in.q, in.T);
    const auto ref = oracle::dense_min_jerk(in.head, in.tail, in.q, in.T);
    CHECK(std::abs(minco.jerk_energy() - ref.energy) <= 1e-6 * ref.energy);
    CHECK((minco.coefficients() - ref.coeffs).norm() <= 1e-6 * ref.coeffs.norm());
  }
}

TEST_CASE("junction continuity, interpolation and evaluation") {
  std::mt19937_64 rng(3);
  const Instance in = random_instance(rng, 5);
  Minco minco;
  minco.solve(in.head, in.tail, in.q, in.T);
  const PiecewiseTrajectory traj = minco.trajectory();
  const auto junctions = traj.junctions();
  for (int i = 0; i < 4; ++i) {
    CHECK((junctions[static_cast<std::size_t>(i)] - in.q.col(i)).norm() < 1e-8);
    const auto& a = traj.coeffs()[static_cast<std::size_t>(i)];
    const auto& b = traj.coeffs()[static_cast<std::size_t>(i + 1)];
    for (int d = 0; d <= 4; ++d) {
      const Eigen::Vector3d left = a.transpose() * basis(in.T[i], d), right = b.transpose() * basis(0.0, d);
      CHECK((left - right).norm() <= 1e-8 * std::max(1.0, left.norm()));
    }
  }
  for (int d = 0; d < 3; ++d) {
    CHECK((traj.eval(0.0, d) - in.head.col(d)).norm() < 1e-10);
    CHECK((traj.eval(traj.duration(), d) - in.tail.col(d)).norm() < 1e-8);
  }
  bool clamped = false;
  traj.eval(traj.duration() + 1.0, 0, &clamped);
  CHECK(clamped);
  traj.eval(0.5, 0, &clamped);
  CHECK_FALSE(clamped);
  const double h = 1e-5;
  for (double t : {0.3, 1.7, 3.3, 5.0}) {
    const Eigen::Vector3d fd = (traj.eval(t + h, 2) - traj.eval(t - h, 2)) / (2.0 * h);
    CHECK((traj.eval(t, 3) - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
  }
  CHECK(traj.jerk_energy() == doctest::Approx(minco.jerk_energy()).epsilon(1e-12));
}

TEST_CASE("durations must be positive") {
  Minco minco;
  Eigen::Matrix3Xd q(3, 1);
  q.setZero();
  CHECK_THROWS_AS(minco.solve(rest_state(Eigen::Vector3d::Zero()), rest_state(Eigen::Vector3d::Ones()), q,
                              Eigen::Vector2d(1.0, 0.0)),
                  Error);
  CHECK_THROWS_AS(minco.solve(rest_state(Eigen::Vector3d::Zero()), rest_state(Eigen::Vector3d::Ones()), q,
                              Eigen::Vector3d(1.0, 1.0, 1.0)),
                  Error);
}

TEST_CASE("post-failure acceleration budget") {
  VehicleParams p;
  const double expected = (std::sqrt(256.0 - std::pow(1.15 * 9.81, 2)) - 0.65) / 1.15;
  CHECK(expected == doctest::Approx(9.30).epsilon(1e-3));
  CHECK(failure_accel_limit(p, 1.0, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(failure_accel_limit(p, 1.0, 0.5) == doctest::Approx(0.5 * expected).epsilon(1e-12));
  VehicleParams weak = p;
  weak.T_bar = 0.5 * weak.m * weak.g;
  CHECK_THROWS_AS(failure_accel_limit(weak, 1.0, 1.0), Error);

  PlannerLimits limits;
  CHECK_NOTHROW(limits.validate(p));
  CHECK(active_accel_limit(limits, p, true) <= active_accel_limit(limits, p, false));
  limits.gamma_a_f = 1.0;
  limits.a_max_n = 6.0;
  CHECK_THROWS_AS(limits.validate(p), Error);
}

TEST_CASE("straight line with generous limits has only time and jerk cost") {
  PlanProblem pb;
  pb.head = rest_state(Eigen::Vector3d(0.0, 0.0, 1.0));
  pb.tail = rest_state(Eigen::Vector3d(5.0, 0.0, 1.0));
  pb.limits.v_max = 10.0;
  pb.limits.j_max = 100.0;
  pb.a_max = 20.0;
  Eigen::Matrix3Xd q(3, 4);
  for (int i = 0; i < 4; ++i) q.col(i) = Eigen::Vector3d(i + 1.0, 0.0, 1.0);
  const Eigen::VectorXd T = Eigen::VectorXd::Constant(5, 1.5);
  const CostTerms c = cost_and_grad(pb, q, T);
  CHECK(c.feasibility == 0.0);
  CHECK(c.collision == 0.0);
  CHECK(c.total == doctest::Approx(10.0 * 7.5 + c.smoothness).epsilon(1e-12));

}

TEST_CASE("jerk energy grows when durations shrink") {
  Minco one;
  const double T = 2.0;
  one.solve(rest_state(Eigen::Vector3d::Zero()), rest_state(Eigen::Vector3d(2.0, 1.0, 0.0)), Eigen::Matrix3Xd(3, 0),
            Eigen::VectorXd::Constant(1, T));
  const double single = one.jerk_energy();
  one.solve(rest_state(Eigen::Vector3d::Zero()), rest_state(Eigen::Vector3d(2.0, 1.0, 0.0)), Eigen::Matrix3Xd(3, 0),
            Eigen::VectorXd::Constant(1, 0.9 * T));
  CHECK(one.jerk_energy() > single);

  // Rest-to-rest energy scales as alpha^-5 when every duration is scaled.
  std::mt19937_64 rng(8);
  Instance in = random_instance(rng, 5);
  in.head.rightCols<2>().setZero();
  in.tail.rightCols<2>().setZero();
  Minco minco;
  minco.solve(in.head, in.tail, in.q, in.T);
  const double base = minco.jerk_energy();
  for (double alpha : {0.5, 0.9, 0.99}) {
    minco.solve(in.head, in.tail, in.q, alpha * in.T);
    CHECK(minco.jerk_energy() > base);
    CHECK(minco.jerk_energy() == doctest::Approx(base * std::pow(alpha, -5.0)).epsilon(1e-9));
  }
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), dur(0.4, 1.6);
  const OccupancyWorld world = small_forest(4);
  int active_d = 0, active_c = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PlanProblem pb;
    pb.world = trial % 2 == 0 ? &world : nullptr;
    pb.limits.v_max = trial % 4 < 2 ? 1.0 : 5.0;
    pb.a_max = trial % 3 == 0 ? 2.0 : 10.0;
    if (trial % 5 == 4) {  // everything inactive apart from collisions
      pb.limits.v_max = 50.0;
      pb.limits.j_max = 1e3;
      pb.a_max = 200.0;
    }
    const int m = 3 + trial % 4;
    const Eigen::Vector3d a(1.0, 2.5 + 0.5 * u(rng), 1.0), b(7.0, 2.5 + 0.5 * u(rng), 1.2);
    pb.head = rest_state(a);
    pb.head.col(1) = 0.3 * Eigen::Vector3d(u(rng), u(rng), u(rng));
    pb.tail = rest_state(b);
    Eigen::Matrix3Xd q(3, m - 1);
    for (int i = 0; i < m - 1; ++i) {
      q.col(i) = a + (b - a) * (i + 1.0) / m + Eigen::Vector3d(0.3 * u(rng), 0.8 * u(rng), 0.3 * u(rng));
    }
    Eigen::VectorXd T(m);
    for (int i = 0; i < m; ++i) T[i] = dur(rng);
    const CostTerms terms = cost_and_grad(pb, q, T);
    active_d += terms.feasibility > 0.0;
    active_c += terms.collision > 0.0;
    const double err = relative_gradient_error(pb, q, T);
    CHECK(err <= 1e-4);
  }
  CHECK(active_d >= 5);
  CHECK(active_c >= 3);
  CHECK(active_d < 20);
}

TEST_CASE("optimizer: empty world straight flight respects the speed limit") {
  PlanProblem pb;
  pb.head = rest_state(Eigen::Vector3d(0.0, 0.0, 1.0));
  pb.tail = rest_state(Eigen::Vector3d(5.0, 0.0, 1.0));
  pb.a_max = pb.limits.a_max_n;
  const PlanOutcome out = optimize_trajectory({pb.head.col(0), pb.tail.col(0)}, pb);
  CHECK(out.check.feasible);
  CHECK(out.check.max_speed <= 1.01 * pb.limits.v_max);
  double lateral = 0.0;
  for (double t = 0.0; t <= out.trajectory.duration(); t += 0.05) {
    const Eigen::Vector3d p = out.trajectory.eval(t, 0);
    lateral = std::max(lateral, std::hypot(p.y(), p.z() - 1.0));
  }
  CHECK(lateral < 1e-6);
  CHECK(out.trajectory.duration() < 10.0);
  MESSAGE("duration " << out.trajectory.duration() << " s, peak speed " << out.check.max_speed << ", iterations "
                      << out.iterations);
}

TEST_CASE("optimizer: fault flag caps acceleration") {
  VehicleParams params;
  PlanProblem pb;
  pb.head = rest_state(Eigen::Vector3d(0.0, 0.0, 1.0));
  pb.tail = rest_state(Eigen::Vector3d(5.0, 0.0, 1.0));
  pb.limits.gamma_a_f = 0.5;
  pb.a_max = active_accel_limit(pb.limits, params, true);
  const PlanOutcome out = optimize_trajectory({pb.head.col(0), pb.tail.col(0)}, pb);
  CHECK(out.check.max_accel <= 0.5 * failure_accel_limit(params, 1.0, 1.0) * 1.01);

  // A faster, sharper request where the cap binds.
  pb.limits.v_max = 4.0;
  pb.limits.a_max_n = 30.0;
  pb.limits.j_max = 60.0;
  pb.limits.lambda[0] = 1000.0;
  pb.a_max = active_accel_limit(pb.limits, params, true);
  const std::vector<Eigen::Vector3d> corner{pb.head.col(0), Eigen::Vector3d(3.0, 0.0, 1.0), Eigen::Vector3d(3.0, 3.0, 1.0)};
  pb.tail = rest_state(corner.back());
  const PlanOutcome sharp = optimize_trajectory(corner, pb);
  CHECK(sharp.check.max_accel <= 0.5 * failure_accel_limit(params, 4.0, 1.0) * 1.01);
  CHECK(sharp.check.max_accel >= 0.9 * pb.a_max);
  PlanProblem nominal = pb;
  nominal.a_max = pb.limits.a_max_n;
  const PlanOutcome free = optimize_trajectory(corner, nominal);
  CHECK(free.check.max_accel > sharp.check.max_accel);
  MESSAGE("capped " << sharp.check.max_accel << " vs nominal " << free.check.max_accel << " m/s^2");
}

TEST_CASE("optimizer: corridor clearance") {
  WorldSpec spec;
  spec.kind = WorldKind::Corridor;
  spec.size = Vector3d(12.0, 5.0, 2.5);
  spec.density = 0.25;
  spec.seed = 9;
  OccupancyWorld w = generate_world(spec);
  w.reveal_all();
  const PathResult path = plan_path(w, w.start, w.goal, 0.4);
  PlanProblem pb;
  pb.head = rest_state(w.start);
  pb.tail = rest_state(w.goal);
  pb.world = &w;
  pb.a_max = pb.limits.a_max_n;
  const PlanOutcome out = optimize_trajectory(path.waypoints, pb);
  CHECK(out.check.min_clearance >= 0.25);
  MESSAGE("corridor min clearance " << out.check.min_clearance << ", escalated " << out.escalated);
}
