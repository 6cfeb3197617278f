#include "rfa/box_qp.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Cholesky>

#include "rfa/error.hpp"

namespace rfa {

namespace {

double quadratic_value(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(H * x) + g.dot(x);
}

}  // namespace

double box_projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const Eigen::VectorXd projected = (x - grad).cwiseMax(lo).cwiseMin(hi) - x;
  return projected.lpNorm<Eigen::Infinity>();
}

BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         const Eigen::VectorXd& x0, const BoxQpOptions& options) {
  const Eigen::Index n = g.size();
  if (H.rows() != n || H.cols() != n || lo.size() != n || hi.size() != n) {
    fail(ErrorKind::InvalidInput, "solve_box_qp: dimension mismatch");
  }
  if ((lo.array() > hi.array()).any()) fail(ErrorKind::Config, "solve_box_qp: lo > hi");

  BoxQpResult result;
  result.x = (x0.size() == n ? x0 : Eigen::VectorXd::Zero(n)).cwiseMax(lo).cwiseMin(hi);
  double value = quadratic_value(H, g, result.x);

  std::vector<int> free_index;
  std::vector<char> previous_free;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::MatrixXd h_free;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const Eigen::VectorXd grad = H * result.x + g;

    std::vector<char> is_free(static_cast<std::size_t>(n));
    free_index.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool fixed = lo[i] == hi[i];
      const bool at_lo = result.x[i] <= lo[i] && grad[i] > 0.0;
      const bool at_hi = result.x[i] >= hi[i] && grad[i] < 0.0;
      is_free[static_cast<std::size_t>(i)] = !(fixed || at_lo || at_hi);
      if (is_free[static_cast<std::size_t>(i)]) free_index.push_back(static_cast<int>(i));
    }
    if (free_index.empty()) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd g_free(static_cast<Eigen::Index>(free_index.size()));
    for (std::size_t a = 0; a < free_index.size(); ++a) g_free[static_cast<Eigen::Index>(a)] = grad[free_index[a]];
    if (g_free.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      result.converged = true;
      break;
    }

    if (is_free != previous_free) {
      const auto m = static_cast<Eigen::Index>(free_index.size());
      h_free.resize(m, m);
      for (Eigen::Index a = 0; a < m; ++a) {
        for (Eigen::Index b = 0; b < m; ++b) h_free(a, b) = H(free_index[a], free_index[b]);
      }
      llt.compute(h_free);
      if (llt.info() != Eigen::Success) fail(ErrorKind::InvalidInput, "solve_box_qp: H not positive definite");
      previous_free = is_free;
    }

    const Eigen::VectorXd step_free = -llt.solve(g_free);
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(n);
    for (std::size_t a = 0; a < free_index.size(); ++a) direction[free_index[a]] = step_free[static_cast<Eigen::Index>(a)];

    // Projected backtracking on the Newton direction.
    const double expected = grad.dot(direction);
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    double candidate_value = value;
    while (alpha > options.min_step) {
      candidate = (result.x + alpha * direction).cwiseMax(lo).cwiseMin(hi);
      candidate_value = quadratic_value(H, g, candidate);
      if (candidate_value - value <= options.armijo * alpha * expected) {
        accepted = true;
        break;
      }
      alpha *= options.step_decrease;
    }
    if (!accepted) break;
    const double improvement = value - candidate_value;
    result.x = candidate;
    value = candidate_value;
    if (improvement < 1e-14 * (1.0 + std::abs(value))) {
      result.converged = true;
      break;
    }
  }
  result.value = value;
  return result;
}

}  // namespace rfa
