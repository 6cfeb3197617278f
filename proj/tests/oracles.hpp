#pragma once

#include <Eigen/Dense>

#include "rfa/minco.hpp"

namespace rfa::oracle {

/// Minimum jerk energy by a dense quadratic program: only C2 continuity,
/// waypoint positions and boundary states are imposed, so higher
/// continuity must come out of optimality rather than being built in.
struct DenseMinJerk {
  double energy = 0.0;
  Eigen::MatrixX3d coeffs;  // 6M x 3, same layout as Minco
};

inline DenseMinJerk dense_min_jerk(const BoundaryState& head, const BoundaryState& tail, const Eigen::Matrix3Xd& q,
                                   const Eigen::VectorXd& T) {
  const int m = static_cast<int>(T.size());
  const int n = 6 * m;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < m; ++i) {
    for (int k = 3; k < 6; ++k) {
      for (int l = 3; l < 6; ++l) {
        const double fk = k * (k - 1) * (k - 2), fl = l * (l - 1) * (l - 2);
        const int e = k + l - 5;
        H(6 * i + k, 6 * i + l) = fk * fl * std::pow(T[i], e) / e;
      }
    }
  }
  const int rows = 6 + 4 * (m - 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, n);
  Eigen::MatrixX3d b = Eigen::MatrixX3d::Zero(rows, 3);
  int r = 0;
  for (int d = 0; d < 3; ++d, ++r) {
    A.block(r, 0, 1, 6) = basis(0.0, d).transpose();
    b.row(r) = head.col(d).transpose();
  }
  for (int i = 0; i + 1 < m; ++i) {
    A.block(r, 6 * i, 1, 6) = basis(T[i], 0).transpose();
    b.row(r) = q.col(i).transpose();
    ++r;
    for (int d = 0; d < 3; ++d, ++r) {
      A.block(r, 6 * i, 1, 6) = basis(T[i], d).transpose();
      A.block(r, 6 * (i + 1), 1, 6) = -basis(0.0, d).transpose();
    }
  }
  for (int d = 0; d < 3; ++d, ++r) {
    A.block(r, 6 * (m - 1), 1, 6) = basis(T[m - 1], d).transpose();
    b.row(r) = tail.col(d).transpose();
  }
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + rows, n + rows);
  K.topLeftCorner(n, n) = 2.0 * H;
  K.topRightCorner(n, rows) = A.transpose();
  K.bottomLeftCorner(rows, n) = A;
  Eigen::MatrixX3d rhs = Eigen::MatrixX3d::Zero(n + rows, 3);
  rhs.bottomRows(rows) = b;
  const Eigen::MatrixX3d sol = K.fullPivLu().solve(rhs);
  DenseMinJerk out;
  out.coeffs = sol.topRows(n);
  for (int a = 0; a < 3; ++a) out.energy += out.coeffs.col(a).dot(H * out.coeffs.col(a));
  return out;
}

}  // namespace rfa::oracle
