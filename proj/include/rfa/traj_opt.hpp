#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "rfa/dynamics.hpp"
#include "rfa/minco.hpp"
#include "rfa/world.hpp"

namespace rfa {

class KeyValueFile;

struct PlannerLimits {
  double v_max = 1.0;
  double a_max_n = 10.0;
  double j_max = 20.0;
  double safe_distance = 0.3;
  /// Safety factor on the post-failure acceleration budget.
  double gamma_a_f = 0.5;
  /// Weights of time, jerk energy, feasibility and collision terms.
  Eigen::Vector4d lambda{10.0, 1.0, 1e4, 1e4};
  int samples_per_segment = 16;
  int max_iterations = 300;
  double gradient_tolerance = 1e-5;

  /// Checks positivity and that the post-failure budget does not exceed the
  /// nominal one.
  void validate(const VehicleParams& params) const;
  static PlannerLimits from_file(const KeyValueFile& file, const std::string& prefix = "planner.");
};

/// Lateral acceleration left once a rotor and, conservatively, its opposite
/// are lost: two rotors at full thrust hold the weight and the drag at
/// v_max, scaled by `gamma`. Throws Infeasible if 2 T_bar <= m g.
double failure_accel_limit(const VehicleParams& params, double v_max, double gamma);

/// Acceleration bound in force for the given fault flag.
double active_accel_limit(const PlannerLimits& limits, const VehicleParams& params, bool fault);

struct CostTerms {
  double time = 0.0, smoothness = 0.0, feasibility = 0.0, collision = 0.0;
  double total = 0.0;
};

/// Fixed data of one planning problem. The world is read only.
struct PlanProblem {
  BoundaryState head = BoundaryState::Zero();
  BoundaryState tail = BoundaryState::Zero();
  const OccupancyWorld* world = nullptr;  // nullptr: no collision term
  PlannerLimits limits;
  double a_max = 10.0;
};

/// Total cost and its gradients with respect to the interior waypoints and
/// the durations.
CostTerms cost_and_grad(const PlanProblem& problem, const Eigen::Matrix3Xd& q, const Eigen::VectorXd& T,
                        Eigen::Matrix3Xd* grad_q = nullptr, Eigen::VectorXd* grad_T = nullptr);

struct PostCheck {
  double max_speed = 0.0, max_accel = 0.0, max_jerk = 0.0;
  double min_clearance = 0.0;
  bool feasible = false;
};

/// Evaluated on the same quadrature samples the cost uses.
PostCheck post_check(const PiecewiseTrajectory& traj, const PlanProblem& problem);

struct PlanOutcome {
  PiecewiseTrajectory trajectory;
  CostTerms cost;
  PostCheck check;
  int iterations = 0;
  bool escalated = false;
};

/// Initial interior waypoints and durations from a piecewise-linear path.
void initial_guess(const std::vector<Eigen::Vector3d>& path, const PlannerLimits& limits, Eigen::Matrix3Xd& q,
                   Eigen::VectorXd& T);

/// L-BFGS over (q, log T) from the initial guess. If the post-check fails
/// the feasibility and collision weights are raised tenfold and the problem
/// is solved once more; a second failure throws a Planning error.
PlanOutcome optimize_trajectory(const std::vector<Eigen::Vector3d>& path, const PlanProblem& problem);

/// 100 Hz table of t, p, v, a for plotting.
void write_trajectory_table(const PiecewiseTrajectory& traj, const std::filesystem::path& path, double rate = 100.0);
/// Durations and coefficient blocks, one segment per line.
void write_trajectory_segments(const PiecewiseTrajectory& traj, const std::filesystem::path& path);

}  // namespace rfa
