#include "rfa/traj_opt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include "rfa/config.hpp"
#include "rfa/error.hpp"

namespace rfa {

void PlannerLimits::validate(const VehicleParams& params) const {
  if (!(v_max > 0.0) || !(a_max_n > 0.0) || !(j_max > 0.0) || !(safe_distance > 0.0)) {
    fail(ErrorKind::Config, "planner: v_max, a_max_n, j_max and safe_distance must be positive");
  }
  if (!(gamma_a_f > 0.0 && gamma_a_f <= 1.0)) fail(ErrorKind::Config, "planner.gamma_a_f must lie in (0, 1]");
  if (!(lambda.array() > 0.0).all()) fail(ErrorKind::Config, "planner.lambda entries must be positive");
  if (samples_per_segment < 2) fail(ErrorKind::Config, "planner.samples_per_segment must be at least 2");
  if (max_iterations < 1) fail(ErrorKind::Config, "planner.max_iterations must be at least 1");
  if (!(gradient_tolerance > 0.0)) fail(ErrorKind::Config, "planner.gradient_tolerance must be positive");
  const double a_f = failure_accel_limit(params, v_max, gamma_a_f);
  if (a_f > a_max_n) {
    fail(ErrorKind::Config, "planner: post-failure acceleration limit " + format_double(a_f) +
                                " exceeds the nominal limit a_max_n = " + format_double(a_max_n));
  }
}

PlannerLimits PlannerLimits::from_file(const KeyValueFile& file, const std::string& prefix) {
  PlannerLimits l;
  l.v_max = file.get_double(prefix + "v_max", l.v_max);
  l.a_max_n = file.get_double(prefix + "a_max_n", l.a_max_n);
  l.j_max = file.get_double(prefix + "j_max", l.j_max);
  l.safe_distance = file.get_double(prefix + "safe_distance", l.safe_distance);
  l.gamma_a_f = file.get_double(prefix + "gamma_a_f", l.gamma_a_f);
  l.lambda = file.get_fixed<4>(prefix + "lambda", l.lambda);
  l.samples_per_segment = static_cast<int>(file.get_int(prefix + "samples_per_segment", l.samples_per_segment));
  l.max_iterations = static_cast<int>(file.get_int(prefix + "max_iterations", l.max_iterations));
  l.gradient_tolerance = file.get_double(prefix + "gradient_tolerance", l.gradient_tolerance);
  return l;
}

double failure_accel_limit(const VehicleParams& params, double v_max, double gamma) {
  const double thrust = 2.0 * params.T_bar;
  const double weight = params.m * params.g;
  if (thrust <= weight) {
    fail(ErrorKind::Infeasible, "two rotors give " + format_double(thrust) + " N, not enough to hold the weight " +
                                    format_double(weight) + " N; post-failure flight is infeasible");
  }
  // The attitude matrix drops out of |R D R^T|, leaving the largest drag coefficient.
  const double f_max = params.D.cwiseAbs().maxCoeff() * v_max;
  return gamma * std::abs((std::sqrt(thrust * thrust - weight * weight) - f_max) / params.m);
}

double active_accel_limit(const PlannerLimits& limits, const VehicleParams& params, bool fault) {
  return fault ? failure_accel_limit(params, limits.v_max, limits.gamma_a_f) : limits.a_max_n;
}

namespace {

/// f = max(|x|^2 - bound^2, 0)^3 and df/dx.
double hinge(const Eigen::Vector3d& x, double bound, Eigen::Vector3d& grad) {
  const double v = x.squaredNorm() - bound * bound;
  if (v <= 0.0) {
    grad.setZero();
    return 0.0;
  }
  grad = 6.0 * v * v * x;
  return v * v * v;
}

}  // namespace

CostTerms cost_and_grad(const PlanProblem& pb, const Eigen::Matrix3Xd& q, const Eigen::VectorXd& T,
                        Eigen::Matrix3Xd* grad_q, Eigen::VectorXd* grad_T) {
  Minco minco;
  minco.solve(pb.head, pb.tail, q, T);
  const int m = minco.segments();
  const int kappa = pb.limits.samples_per_segment;
  const Eigen::Vector4d& lambda = pb.limits.lambda;
  const Eigen::MatrixX3d& c = minco.coefficients();

  CostTerms terms;
  Eigen::MatrixX3d gc_s;
  Eigen::VectorXd gT_s;
  terms.time = T.sum();
  terms.smoothness = minco.jerk_energy(&gc_s, &gT_s);

  Eigen::MatrixX3d gc = lambda[1] * gc_s;
  Eigen::VectorXd gT = lambda[1] * gT_s + Eigen::VectorXd::Constant(m, lambda[0]);

  Eigen::Vector3d g_v, g_a, g_j;
  for (int i = 0; i < m; ++i) {
    const auto ci = c.middleRows<6>(6 * i);
    for (int k = 0; k <= kappa; ++k) {
      const double s = static_cast<double>(k) / kappa;
      const double t = s * T[i];
      const double omega = (k == 0 || k == kappa) ? 0.5 : 1.0;
      const double w = omega * T[i] / kappa;
      Eigen::Matrix<double, 6, 1> b[5];
      for (int o = 0; o < 5; ++o) b[o] = basis(t, o);
      const Eigen::Vector3d pos = ci.transpose() * b[0], vel = ci.transpose() * b[1], acc = ci.transpose() * b[2],
                            jer = ci.transpose() * b[3], snp = ci.transpose() * b[4];

      const double pv = hinge(vel, pb.limits.v_max, g_v);
      const double pa = hinge(acc, pb.a_max, g_a);
      const double pj = hinge(jer, pb.limits.j_max, g_j);
      const double pen_d = pv + pa + pj;
      double pen_c = 0.0;
      Eigen::Vector3d g_p = Eigen::Vector3d::Zero();
      if (pb.world) {
        const DistanceQuery dq = pb.world->distance_query_unchecked(pos);
        const double v = pb.limits.safe_distance - dq.distance;
        if (v > 0.0) {
          pen_c = v * v * v;
          g_p = -3.0 * v * v * dq.normal;
        }
      }
      terms.feasibility += w * pen_d;
      terms.collision += w * pen_c;
      if (pen_d == 0.0 && pen_c == 0.0) continue;

      const Eigen::Vector3d gd_v = lambda[2] * g_v, gd_a = lambda[2] * g_a, gd_j = lambda[2] * g_j;
      const Eigen::Vector3d gd_p = lambda[3] * g_p;
      gc.middleRows<6>(6 * i) += w * (b[0] * gd_p.transpose() + b[1] * gd_v.transpose() + b[2] * gd_a.transpose() +
                                      b[3] * gd_j.transpose());
      const double d_dt = gd_p.dot(vel) + gd_v.dot(acc) + gd_a.dot(jer) + gd_j.dot(snp);
      gT[i] += (lambda[2] * pen_d + lambda[3] * pen_c) * omega / kappa + w * d_dt * s;
    }
  }
  terms.total = lambda[0] * terms.time + lambda[1] * terms.smoothness + lambda[2] * terms.feasibility +
                lambda[3] * terms.collision;
  if (grad_q || grad_T) {
    Eigen::Matrix3Xd gq;
    Eigen::VectorXd gt;
    minco.propagate(gc, gT, gq, gt);
    if (grad_q) *grad_q = gq;
    if (grad_T) *grad_T = gt;
  }
  return terms;
}

PostCheck post_check(const PiecewiseTrajectory& traj, const PlanProblem& pb) {
  PostCheck out;
  out.min_clearance = std::numeric_limits<double>::infinity();
  const int kappa = pb.limits.samples_per_segment;
  double t0 = 0.0;
  for (int i = 0; i < traj.segments(); ++i) {
    const double Ti = traj.durations()[i];
    for (int k = 0; k <= kappa; ++k) {
      const double t = std::min(t0 + Ti * k / kappa, traj.duration());
      out.max_speed = std::max(out.max_speed, traj.eval(t, 1).norm());
      out.max_accel = std::max(out.max_accel, traj.eval(t, 2).norm());
      out.max_jerk = std::max(out.max_jerk, traj.eval(t, 3).norm());
      if (pb.world) {
        out.min_clearance = std::min(out.min_clearance, pb.world->distance_query_unchecked(traj.eval(t, 0)).distance);
      }
    }
    t0 += Ti;
  }
  out.feasible = out.max_speed <= 1.01 * pb.limits.v_max && out.max_accel <= 1.01 * pb.a_max &&
                 out.max_jerk <= 1.01 * pb.limits.j_max &&
                 (!pb.world || out.min_clearance >= pb.limits.safe_distance - 0.05);
  return out;
}

void initial_guess(const std::vector<Eigen::Vector3d>& path, const PlannerLimits& limits, Eigen::Matrix3Xd& q,
                   Eigen::VectorXd& T) {
  if (path.size() < 2) fail(ErrorKind::InvalidInput, "initial_guess: path needs at least two points");
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < path.size(); ++i) cum.push_back(cum.back() + (path[i] - path[i - 1]).norm());
  const double length = cum.back();
  if (!(length > 1e-6)) fail(ErrorKind::InvalidInput, "initial_guess: start and goal coincide");
  const int m = std::max(5, static_cast<int>(std::lround(length / 2.0)));
  q.resize(3, m - 1);
  std::size_t seg = 1;
  for (int g = 1; g < m; ++g) {
    const double s = length * g / m;
    while (seg + 1 < cum.size() && cum[seg] < s) ++seg;
    const double span = cum[seg] - cum[seg - 1];
    const double f = span > 0.0 ? (s - cum[seg - 1]) / span : 0.0;
    q.col(g - 1) = path[seg - 1] + f * (path[seg] - path[seg - 1]);
  }
  T = Eigen::VectorXd::Constant(m, (length / m) / (0.6 * limits.v_max));
}

namespace {

class PlanFunction final : public ceres::FirstOrderFunction {
 public:
  PlanFunction(const PlanProblem& pb, int m) : pb_(pb), m_(m) {}

  bool Evaluate(const double* x, double* cost, double* gradient) const override {
    const int nq = 3 * (m_ - 1);
    Eigen::Map<const Eigen::Matrix3Xd> q(x, 3, m_ - 1);
    Eigen::Map<const Eigen::VectorXd> tau(x + nq, m_);
    if ((tau.array().abs() > 12.0).any()) return false;
    const Eigen::VectorXd T = tau.array().exp();
    Eigen::Matrix3Xd gq;
    Eigen::VectorXd gT;
    const CostTerms terms = cost_and_grad(pb_, q, T, gradient ? &gq : nullptr, gradient ? &gT : nullptr);
    if (!std::isfinite(terms.total)) return false;
    *cost = terms.total;
    if (gradient) {
      Eigen::Map<Eigen::VectorXd>(gradient, nq) = Eigen::Map<const Eigen::VectorXd>(gq.data(), nq);
      Eigen::Map<Eigen::VectorXd>(gradient + nq, m_) = gT.cwiseProduct(T);
    }
    return true;
  }
  int NumParameters() const override { return 3 * (m_ - 1) + m_; }

 private:
  const PlanProblem& pb_;
  int m_;
};

int run_lbfgs(const PlanProblem& pb, int m, Eigen::VectorXd& x) {
  ceres::GradientProblem problem(new PlanFunction(pb, m));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = pb.limits.max_iterations;
  options.gradient_tolerance = pb.limits.gradient_tolerance;
  options.function_tolerance = 1e-12;
  options.parameter_tolerance = 1e-12;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, x.data(), &summary);
  return static_cast<int>(summary.iterations.size());
}

PiecewiseTrajectory build(const PlanProblem& pb, int m, const Eigen::VectorXd& x) {
  Minco minco;
  minco.solve(pb.head, pb.tail, Eigen::Map<const Eigen::Matrix3Xd>(x.data(), 3, m - 1),
              x.tail(m).array().exp().matrix());
  return minco.trajectory();
}

}  // namespace

PlanOutcome optimize_trajectory(const std::vector<Eigen::Vector3d>& path, const PlanProblem& problem) {
  Eigen::Matrix3Xd q;
  Eigen::VectorXd T;
  initial_guess(path, problem.limits, q, T);
  const int m = static_cast<int>(T.size());
  Eigen::VectorXd x(3 * (m - 1) + m);
  x.head(3 * (m - 1)) = Eigen::Map<const Eigen::VectorXd>(q.data(), 3 * (m - 1));
  x.tail(m) = T.array().log();

  PlanProblem pb = problem;
  PlanOutcome out;
  out.iterations = run_lbfgs(pb, m, x);
  out.trajectory = build(pb, m, x);
  out.check = post_check(out.trajectory, pb);
  if (!out.check.feasible) {
    out.escalated = true;
    pb.limits.lambda[2] *= 10.0;
    pb.limits.lambda[3] *= 10.0;
    out.iterations += run_lbfgs(pb, m, x);
    out.trajectory = build(pb, m, x);
    out.check = post_check(out.trajectory, pb);
    if (!out.check.feasible) {
      fail(ErrorKind::Planning, "trajectory post-check failed after escalation: speed " +
                                    format_double(out.check.max_speed) + ", accel " +
                                    format_double(out.check.max_accel) + ", jerk " +
                                    format_double(out.check.max_jerk) + ", clearance " +
                                    format_double(out.check.min_clearance));
    }
  }
  out.cost = cost_and_grad(pb, Eigen::Map<const Eigen::Matrix3Xd>(x.data(), 3, m - 1),
                           x.tail(m).array().exp().matrix());
  return out;
}

void write_trajectory_table(const PiecewiseTrajectory& traj, const std::filesystem::path& path, double rate) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "t,px,py,pz,vx,vy,vz,ax,ay,az\n";
  const int n = static_cast<int>(std::floor(traj.duration() * rate + 1e-9));
  for (int k = 0; k <= n; ++k) {
    const double t = k / rate;
    const FlatSample s = traj.sample(t);
    out << format_double(t);
    for (const auto* v : {&s.p, &s.v, &s.a}) {
      for (int i = 0; i < 3; ++i) out << ',' << format_double((*v)[i]);
    }
    out << '\n';
  }
}

void write_trajectory_segments(const PiecewiseTrajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "segment,duration";
  for (const char axis : {'x', 'y', 'z'}) {
    for (int k = 0; k < 6; ++k) out << ",c" << axis << k;
  }
  out << '\n';
  for (int i = 0; i < traj.segments(); ++i) {
    out << i << ',' << format_double(traj.durations()[i]);
    const auto& c = traj.coeffs()[static_cast<std::size_t>(i)];
    for (int a = 0; a < 3; ++a) {
      for (int k = 0; k < 6; ++k) out << ',' << format_double(c(k, a));
    }
    out << '\n';
  }
}

}  // namespace rfa
