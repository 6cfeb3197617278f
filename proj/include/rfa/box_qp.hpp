#pragma once

#include <Eigen/Core>

namespace rfa {

struct BoxQpResult {
  Eigen::VectorXd x;
  int iterations = 0;
  bool converged = false;
  double value = 0.0;
};

struct BoxQpOptions {
  int max_iterations = 50;
  double gradient_tolerance = 1e-9;
  double min_step = 1e-12;
  double armijo = 0.1;
  double step_decrease = 0.6;
};

/// Projected-Newton solver for min 0.5 x'Hx + g'x subject to lo <= x <= hi,
/// with H symmetric positive definite. `x0` seeds the iteration (clamped).
BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         const Eigen::VectorXd& x0, const BoxQpOptions& options = {});

/// Norm of the projected gradient, zero exactly at a KKT point of the box QP.
double box_projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

}  // namespace rfa
