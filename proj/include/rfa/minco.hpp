#pragma once

#include <vector>

#include <Eigen/Core>

#include "rfa/trajectory.hpp"

namespace rfa {

/// Quintic coefficients of one segment, row k multiplies t^k.
using SegmentCoeffs = Eigen::Matrix<double, 6, 3>;

/// Position, velocity and acceleration at one end of the spline.
using BoundaryState = Eigen::Matrix3d;  // columns p, v, a

inline BoundaryState rest_state(const Eigen::Vector3d& p) {
  BoundaryState s = BoundaryState::Zero();
  s.col(0) = p;
  return s;
}

/// d^order/dt^order of [1, t, ..., t^5].
Eigen::Matrix<double, 6, 1> basis(double t, int order);

/// Piecewise quintic; segment i spans local time [0, durations[i]].
class PiecewiseTrajectory final : public FlatTrajectory {
 public:
  PiecewiseTrajectory() = default;
  PiecewiseTrajectory(Eigen::VectorXd durations, std::vector<SegmentCoeffs> coeffs);

  int segments() const { return static_cast<int>(coeffs_.size()); }
  const Eigen::VectorXd& durations() const { return durations_; }
  const std::vector<SegmentCoeffs>& coeffs() const { return coeffs_; }
  double duration() const override { return total_; }

  /// Derivative of order 0..4 at global time t. Times outside [0, duration]
  /// are clamped and reported through `clamped`.
  Eigen::Vector3d eval(double t, int order, bool* clamped = nullptr) const;
  FlatSample sample(double t) const override;

  /// Segment index and local time for global time t (clamped).
  std::pair<int, double> locate(double t) const;

  /// Jerk energy, sum over segments of the integral of |p'''|^2.
  double jerk_energy() const;

  /// Waypoints at the internal junctions.
  std::vector<Eigen::Vector3d> junctions() const;

 private:
  Eigen::VectorXd durations_;
  std::vector<SegmentCoeffs> coeffs_;
  double total_ = 0.0;
};

/// Minimum-jerk spline through the M - 1 interior waypoints `q` (columns)
/// with M segment durations and fixed boundary states. Solves the 6M banded
/// optimality system and keeps its factorization for gradient propagation.
class Minco {
 public:
  void solve(const BoundaryState& head, const BoundaryState& tail, const Eigen::Matrix3Xd& q,
             const Eigen::VectorXd& T);

  int segments() const { return m_; }
  const Eigen::MatrixX3d& coefficients() const { return c_; }  // 6M x 3
  PiecewiseTrajectory trajectory() const;

  /// Analytic jerk energy and its partial derivatives for the current solution.
  double jerk_energy(Eigen::MatrixX3d* grad_c = nullptr, Eigen::VectorXd* grad_T = nullptr) const;

  /// Given the partial gradients of a cost with respect to the coefficients
  /// (6M x 3) and the durations (explicit part), returns the total gradients
  /// with respect to the interior waypoints (3 x M-1) and durations (M).
  void propagate(const Eigen::MatrixX3d& grad_c, const Eigen::VectorXd& grad_T_explicit, Eigen::Matrix3Xd& grad_q,
                 Eigen::VectorXd& grad_T) const;

 private:
  struct Banded {
    int n = 0, lower = 0, upper = 0;
    Eigen::MatrixXd data;  // (lower + upper + 1) x n, column-major band
    double& at(int i, int j) { return data(upper + i - j, j); }
    double at(int i, int j) const { return data(upper + i - j, j); }
    void reset(int size, int p, int q);
    void factorize();
    template <class Rhs>
    void solve(Rhs& b) const;
    template <class Rhs>
    void solve_transposed(Rhs& b) const;
  };

  int m_ = 0;
  Eigen::VectorXd T_;
  Banded lu_;
  Eigen::MatrixX3d c_;
};

}  // namespace rfa
