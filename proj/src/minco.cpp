#include "rfa/minco.hpp"

#include <algorithm>
#include <cmath>

#include "rfa/error.hpp"

namespace rfa {

Eigen::Matrix<double, 6, 1> basis(double t, int order) {
  Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
  for (int k = order; k < 6; ++k) {
    double f = 1.0;
    for (int j = 0; j < order; ++j) f *= k - j;
    b[k] = f * std::pow(t, k - order);
  }
  return b;
}

PiecewiseTrajectory::PiecewiseTrajectory(Eigen::VectorXd durations, std::vector<SegmentCoeffs> coeffs)
    : durations_(std::move(durations)), coeffs_(std::move(coeffs)) {
  if (durations_.size() != static_cast<Eigen::Index>(coeffs_.size()) || coeffs_.empty()) {
    fail(ErrorKind::InvalidInput, "trajectory: durations and coefficient blocks differ in count");
  }
  if (!(durations_.array() > 0.0).all()) fail(ErrorKind::Domain, "trajectory: durations must be positive");
  total_ = durations_.sum();
}

std::pair<int, double> PiecewiseTrajectory::locate(double t) const {
  t = std::clamp(t, 0.0, total_);
  int i = 0;
  while (i + 1 < segments() && t > durations_[i]) {
    t -= durations_[i];
    ++i;
  }
  return {i, std::min(t, durations_[i])};
}

Eigen::Vector3d PiecewiseTrajectory::eval(double t, int order, bool* clamped) const {
  if (order < 0 || order > 4) fail(ErrorKind::InvalidInput, "trajectory: derivative order must be 0..4");
  if (clamped) *clamped = t < 0.0 || t > total_;
  const auto [i, tl] = locate(t);
  return coeffs_[static_cast<std::size_t>(i)].transpose() * basis(tl, order);
}

FlatSample PiecewiseTrajectory::sample(double t) const {
  FlatSample s;
  s.p = eval(t, 0);
  if (t >= 0.0 && t <= total_) {
    s.v = eval(t, 1);
    s.a = eval(t, 2);
  }
  return s;
}

double PiecewiseTrajectory::jerk_energy() const {
  double e = 0.0;
  for (int i = 0; i < segments(); ++i) {
    const auto& c = coeffs_[static_cast<std::size_t>(i)];
    const double T = durations_[i];
    const Eigen::Vector3d c3 = c.row(3), c4 = c.row(4), c5 = c.row(5);
    e += 36.0 * c3.squaredNorm() * T + 144.0 * c3.dot(c4) * T * T + 192.0 * c4.squaredNorm() * T * T * T +
         240.0 * c3.dot(c5) * T * T * T + 720.0 * c4.dot(c5) * std::pow(T, 4) +
         720.0 * c5.squaredNorm() * std::pow(T, 5);
  }
  return e;
}

std::vector<Eigen::Vector3d> PiecewiseTrajectory::junctions() const {
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i + 1 < segments(); ++i) {
    out.push_back(coeffs_[static_cast<std::size_t>(i)].transpose() * basis(durations_[i], 0));
  }
  return out;
}

void Minco::Banded::reset(int size, int p, int q) {
  n = size;
  lower = p;
  upper = q;
  data.setZero(p + q + 1, n);
}

// LU without pivoting; the optimality system of the spline is safe for it.
void Minco::Banded::factorize() {
  for (int k = 0; k < n; ++k) {
    const int i_max = std::min(k + lower, n - 1);
    const int j_max = std::min(k + upper, n - 1);
    const double pivot = at(k, k);
    for (int i = k + 1; i <= i_max; ++i) {
      if (at(i, k) == 0.0) continue;
      at(i, k) /= pivot;
      for (int j = k + 1; j <= j_max; ++j) at(i, j) -= at(i, k) * at(k, j);
    }
  }
}

template <class Rhs>
void Minco::Banded::solve(Rhs& b) const {
  for (int j = 0; j < n; ++j) {
    const int i_max = std::min(j + lower, n - 1);
    for (int i = j + 1; i <= i_max; ++i) {
      if (at(i, j) != 0.0) b.row(i) -= at(i, j) * b.row(j);
    }
  }
  for (int j = n - 1; j >= 0; --j) {
    b.row(j) /= at(j, j);
    const int i_min = std::max(0, j - upper);
    for (int i = i_min; i < j; ++i) {
      if (at(i, j) != 0.0) b.row(i) -= at(i, j) * b.row(j);
    }
  }
}

template <class Rhs>
void Minco::Banded::solve_transposed(Rhs& b) const {
  for (int j = 0; j < n; ++j) {
    b.row(j) /= at(j, j);
    const int i_max = std::min(j + upper, n - 1);
    for (int i = j + 1; i <= i_max; ++i) {
      if (at(j, i) != 0.0) b.row(i) -= at(j, i) * b.row(j);
    }
  }
  for (int j = n - 1; j >= 0; --j) {
    const int i_min = std::max(0, j - lower);
    for (int i = i_min; i < j; ++i) {
      if (at(j, i) != 0.0) b.row(i) -= at(j, i) * b.row(j);
    }
  }
}

void Minco::solve(const BoundaryState& head, const BoundaryState& tail, const Eigen::Matrix3Xd& q,
                  const Eigen::VectorXd& T) {
  const int m = static_cast<int>(T.size());
  if (m < 1) fail(ErrorKind::InvalidInput, "minco: at least one segment required");
  if (q.cols() != m - 1) fail(ErrorKind::InvalidInput, "minco: expected M - 1 interior waypoints");
  if (!(T.array() > 0.0).all() || !T.allFinite()) fail(ErrorKind::Domain, "minco: durations must be positive");
  m_ = m;
  T_ = T;
  lu_.reset(6 * m, 6, 6);
  Eigen::MatrixX3d b = Eigen::MatrixX3d::Zero(6 * m, 3);

  lu_.at(0, 0) = 1.0;
  lu_.at(1, 1) = 1.0;
  lu_.at(2, 2) = 2.0;
  b.row(0) = head.col(0).transpose();
  b.row(1) = head.col(1).transpose();
  b.row(2) = head.col(2).transpose();
  // Junction rows: jerk and snap continuity, waypoint, then position,
  // velocity and acceleration continuity. This ordering keeps the band at 6.
  const int order_of_row[6] = {3, 4, 0, 0, 1, 2};
  for (int i = 0; i + 1 < m; ++i) {
    for (int r = 0; r < 6; ++r) {
      const int row = 6 * i + 3 + r;
      const auto bt = basis(T[i], order_of_row[r]);
      for (int k = 0; k < 6; ++k) {
        if (bt[k] != 0.0) lu_.at(row, 6 * i + k) = bt[k];
      }
      if (r != 2) {
        const auto b0 = basis(0.0, order_of_row[r]);
        lu_.at(row, 6 * (i + 1) + order_of_row[r]) = -b0[order_of_row[r]];
      }
    }
    b.row(6 * i + 5) = q.col(i).transpose();
  }
  for (int r = 0; r < 3; ++r) {
    const int row = 6 * m - 3 + r;
    const auto bt = basis(T[m - 1], r);
    for (int k = 0; k < 6; ++k) {
      if (bt[k] != 0.0) lu_.at(row, 6 * (m - 1) + k) = bt[k];
    }
    b.row(row) = tail.col(r).transpose();
  }
  lu_.factorize();
  lu_.solve(b);
  c_ = b;
}

PiecewiseTrajectory Minco::trajectory() const {
  std::vector<SegmentCoeffs> blocks;
  for (int i = 0; i < m_; ++i) blocks.push_back(c_.middleRows<6>(6 * i));
  return PiecewiseTrajectory(T_, blocks);
}

double Minco::jerk_energy(Eigen::MatrixX3d* grad_c, Eigen::VectorXd* grad_T) const {
  if (grad_c) grad_c->setZero(6 * m_, 3);
  if (grad_T) grad_T->setZero(m_);
  double e = 0.0;
  for (int i = 0; i < m_; ++i) {
    const double T = T_[i], T2 = T * T, T3 = T2 * T, T4 = T3 * T, T5 = T4 * T;
    const Eigen::RowVector3d c3 = c_.row(6 * i + 3), c4 = c_.row(6 * i + 4), c5 = c_.row(6 * i + 5);
    e += 36.0 * c3.squaredNorm() * T + 144.0 * c3.dot(c4) * T2 + 192.0 * c4.squaredNorm() * T3 +
         240.0 * c3.dot(c5) * T3 + 720.0 * c4.dot(c5) * T4 + 720.0 * c5.squaredNorm() * T5;
    if (grad_c) {
      grad_c->row(6 * i + 3) = 72.0 * c3 * T + 144.0 * c4 * T2 + 240.0 * c5 * T3;
      grad_c->row(6 * i + 4) = 144.0 * c3 * T2 + 384.0 * c4 * T3 + 720.0 * c5 * T4;
      grad_c->row(6 * i + 5) = 240.0 * c3 * T3 + 720.0 * c4 * T4 + 1440.0 * c5 * T5;
    }
    if (grad_T) {
      (*grad_T)[i] = 36.0 * c3.squaredNorm() + 288.0 * c3.dot(c4) * T + 576.0 * c4.squaredNorm() * T2 +
                     720.0 * c3.dot(c5) * T2 + 2880.0 * c4.dot(c5) * T3 + 3600.0 * c5.squaredNorm() * T4;
    }
  }
  return e;
}

void Minco::propagate(const Eigen::MatrixX3d& grad_c, const Eigen::VectorXd& grad_T_explicit,
                      Eigen::Matrix3Xd& grad_q, Eigen::VectorXd& grad_T) const {
  Eigen::MatrixX3d adj = grad_c;
  lu_.solve_transposed(adj);
  grad_q.resize(3, m_ - 1);
  for (int i = 0; i + 1 < m_; ++i) grad_q.col(i) = adj.row(6 * i + 5).transpose();

  // dc/dT_i = -A^-1 (dA/dT_i) c, and row r of A depends on T_i through
  // basis(T_i, order) whose derivative is basis(T_i, order + 1).
  grad_T = grad_T_explicit;
  const int order_of_row[6] = {3, 4, 0, 0, 1, 2};
  for (int i = 0; i < m_; ++i) {
    const Eigen::Matrix<double, 6, 3> ci = c_.middleRows<6>(6 * i);
    double g = 0.0;
    if (i + 1 < m_) {
      for (int r = 0; r < 6; ++r) {
        const int order = order_of_row[r];
        const Eigen::RowVector3d dA_c = (order + 1 <= 5) ? Eigen::RowVector3d(basis(T_[i], order + 1).transpose() * ci)
                                                         : Eigen::RowVector3d::Zero();
        g += adj.row(6 * i + 3 + r).dot(dA_c);
      }
    } else {
      for (int r = 0; r < 3; ++r) {
        const Eigen::RowVector3d dA_c = basis(T_[i], r + 1).transpose() * ci;
        g += adj.row(6 * m_ - 3 + r).dot(dA_c);
      }
    }
    grad_T[i] -= g;
  }
}

}  // namespace rfa
