#include "rfa/nmpc.hpp"

#include <cmath>
#include <limits>

#include <unsupported/Eigen/AutoDiff>

#include "rfa/box_qp.hpp"
#include "rfa/config.hpp"
#include "rfa/error.hpp"

namespace rfa {

namespace {

constexpr int kNx = kStateDim;
constexpr int kNu = kInputDim;
constexpr int kNy = 20;  // p 3, attitude 4, v 3, w 3, t 4, rate bounds 3

using MatA = Eigen::Matrix<double, kNx, kNx>;
using MatB = Eigen::Matrix<double, kNx, kNu>;
using MatJ = Eigen::Matrix<double, kNy, kNx>;
using VecY = Eigen::Matrix<double, kNy, 1>;
using StateVec = StateVector<double>;

using AdDyn = Eigen::AutoDiffScalar<Eigen::Matrix<double, kNx + kNu, 1>>;
using AdQuat = Eigen::AutoDiffScalar<Eigen::Vector4d>;

struct Linearization {
  StateVec f;
  MatA A;
  MatB B;
};

Linearization linearize(const StateVec& x, const Vector4d& u, const VehicleParams& p, double dt) {
  StateVector<AdDyn> xa;
  InputVector<AdDyn> ua;
  for (int i = 0; i < kNx; ++i) xa[i] = AdDyn(x[i], kNx + kNu, i);
  for (int i = 0; i < kNu; ++i) ua[i] = AdDyn(u[i], kNx + kNu, kNx + i);
  const StateVector<AdDyn> next = rk4_step<AdDyn>(xa, ua, p, dt);
  Linearization lin;
  for (int i = 0; i < kNx; ++i) {
    lin.f[i] = next[i].value();
    lin.A.row(i) = next[i].derivatives().head<kNx>().transpose();
    lin.B.row(i) = next[i].derivatives().tail<kNu>().transpose();
  }
  return lin;
}

/// Stage residual y(x) and its Jacobian.
void stage_residual(const StateVec& x, const ReferencePoint& ref, const Ocp& ocp, VecY& y, MatJ* jac) {
  const OcpConfig& c = ocp.cfg;
  y.setZero();
  if (jac) jac->setZero();
  for (int i = 0; i < 3; ++i) {
    const double sp = std::sqrt(c.Q_p[i]), sv = std::sqrt(c.Q_v[i]), sw = std::sqrt(c.Q_w[i]);
    y[i] = sp * (x[sx::pos + i] - ref.p[i]);
    y[7 + i] = sv * (x[sx::vel + i] - ref.v[i]);
    y[10 + i] = sw * (x[sx::rate + i] - ref.w[i]);
    if (jac) {
      (*jac)(i, sx::pos + i) = sp;
      (*jac)(7 + i, sx::vel + i) = sv;
      (*jac)(10 + i, sx::rate + i) = sw;
    }
    const double w = x[sx::rate + i];
    const double excess = std::abs(w) - ocp.w_max[i];
    if (excess > 0.0) {
      const double sr = std::sqrt(c.rate_penalty);
      y[17 + i] = sr * excess;
      if (jac) (*jac)(17 + i, sx::rate + i) = sr * (w > 0.0 ? 1.0 : -1.0);
    }
  }
  for (int i = 0; i < kNumRotors; ++i) {
    const double st = std::sqrt(c.Q_t[i]);
    y[13 + i] = st * (x[sx::thrust + i] - ref.t[i]);
    if (jac) (*jac)(13 + i, sx::thrust + i) = st;
  }

  const Quat<double> q = x.segment<4>(sx::quat);
  if (jac) {
    Quat<AdQuat> qa, qr;
    for (int i = 0; i < 4; ++i) {
      qa[i] = AdQuat(q[i], 4, i);
      qr[i] = AdQuat(ref.q[i]);
      qr[i].derivatives().setZero();
    }
    const auto d = attitude_error_decompose<AdQuat>(qr, qa);
    for (int i = 0; i < 4; ++i) {
      const double sq = std::sqrt(c.Q_q[i]);
      y[3 + i] = sq * d.reduced[i].value();
      (*jac).block<1, 4>(3 + i, sx::quat) = sq * d.reduced[i].derivatives().transpose();
    }
  } else {
    const auto d = attitude_error_decompose<double>(ref.q, q);
    for (int i = 0; i < 4; ++i) y[3 + i] = std::sqrt(c.Q_q[i]) * d.reduced[i];
  }
}

NmpcIterate initial_guess(const Ocp& ocp, const VehicleParams& params) {
  NmpcIterate it;
  const int n = ocp.cfg.N;
  it.x.resize(static_cast<std::size_t>(n + 1));
  it.u.resize(static_cast<std::size_t>(n));
  it.x[0] = ocp.x0;
  for (int k = 0; k < n; ++k) {
    const Vector4d u = ocp.refs[static_cast<std::size_t>(k)].t.cwiseMax(ocp.u_lo).cwiseMin(ocp.u_hi);
    it.u[static_cast<std::size_t>(k)] = u;
    StateVec next = rk4_step<double>(it.x[static_cast<std::size_t>(k)], u, params, ocp.cfg.dt);
    next.segment<4>(sx::quat).normalize();
    it.x[static_cast<std::size_t>(k + 1)] = next;
  }
  return it;
}

double iterate_cost(const Ocp& ocp, const NmpcIterate& it) {
  double cost = 0.0;
  VecY y;
  for (int k = 1; k <= ocp.cfg.N; ++k) {
    stage_residual(it.x[static_cast<std::size_t>(k)], ocp.refs[static_cast<std::size_t>(k)], ocp, y, nullptr);
    cost += 0.5 * y.squaredNorm();
  }
  for (int k = 0; k < ocp.cfg.N; ++k) {
    const Vector4d r = it.u[static_cast<std::size_t>(k)] - ocp.refs[static_cast<std::size_t>(k)].t;
    cost += 0.5 * r.dot(ocp.cfg.R.cwiseProduct(r));
  }
  return cost;
}

bool finite_iterate(const NmpcIterate& it) {
  for (const auto& x : it.x) {
    if (!x.allFinite()) return false;
  }
  for (const auto& u : it.u) {
    if (!u.allFinite()) return false;
  }
  return true;
}

}  // namespace

void OcpConfig::validate() const {
  if (N < 2) fail(ErrorKind::Config, "nmpc.N: must be >= 2");
  if (!(dt > 0.0)) fail(ErrorKind::Config, "nmpc.dt: must be positive");
  auto non_negative = [](const auto& v, const char* name) {
    if ((v.array() < 0.0).any() || !v.allFinite()) {
      fail(ErrorKind::Config, std::string("nmpc.") + name + ": weights must be non-negative");
    }
  };
  non_negative(Q_p, "Q_p");
  non_negative(Q_v, "Q_v");
  non_negative(Q_q, "Q_q");
  non_negative(Q_w, "Q_w");
  non_negative(Q_t, "Q_t");
  if ((R.array() <= 0.0).any()) fail(ErrorKind::Config, "nmpc.R: input weights must be positive");
  if ((w_max.array() <= 0.0).any()) fail(ErrorKind::Config, "nmpc.w_max: must be positive");
  if (!(rate_penalty >= 0.0)) fail(ErrorKind::Config, "nmpc.rate_penalty: must be non-negative");
  if (sqp_iterations < 1) fail(ErrorKind::Config, "nmpc.sqp_iterations: must be >= 1");
  for (int i = 0; i < kNumRotors; ++i) {
    if (u_lo[i] >= 0.0 && u_hi[i] >= 0.0 && u_lo[i] > u_hi[i]) {
      fail(ErrorKind::Config, "nmpc.u_lo/u_hi: lower bound exceeds upper bound");
    }
  }
}

OcpConfig OcpConfig::from_file(const KeyValueFile& file, const std::string& prefix) {
  OcpConfig c;
  c.N = static_cast<int>(file.get_int(prefix + "N", c.N));
  c.dt = file.get_double(prefix + "dt", c.dt);
  c.Q_p = file.get_fixed<3>(prefix + "Q_p", c.Q_p);
  c.Q_v = file.get_fixed<3>(prefix + "Q_v", c.Q_v);
  c.Q_q = file.get_fixed<4>(prefix + "Q_q", c.Q_q);
  c.Q_w = file.get_fixed<3>(prefix + "Q_w", c.Q_w);
  c.Q_t = file.get_fixed<4>(prefix + "Q_t", c.Q_t);
  c.R = file.get_fixed<4>(prefix + "R", c.R);
  c.u_lo = file.get_fixed<4>(prefix + "u_lo", c.u_lo);
  c.u_hi = file.get_fixed<4>(prefix + "u_hi", c.u_hi);
  c.w_max = file.get_fixed<3>(prefix + "w_max", c.w_max);
  c.rate_penalty = file.get_double(prefix + "rate_penalty", c.rate_penalty);
  c.sqp_iterations = static_cast<int>(file.get_int(prefix + "sqp_iterations", c.sqp_iterations));
  c.zero_yaw_rate_weight_on_fault =
      file.get_bool(prefix + "zero_yaw_rate_weight_on_fault", c.zero_yaw_rate_weight_on_fault);
  c.validate();
  return c;
}

Vector4d reference_thrusts(double total, const VehicleParams& params, std::optional<int> failed_rotor) {
  if (!failed_rotor) return Vector4d::Constant(total / kNumRotors);
  const int f = *failed_rotor;
  if (f < 0 || f >= kNumRotors) fail(ErrorKind::InvalidInput, "reference_thrusts: rotor index out of range");
  // Zero roll and pitch torque with rotor f removed forces its diagonal
  // opposite to zero; the two remaining rotors split the thrust.
  const Eigen::Matrix4d mt = effectiveness_matrix<double>(params);
  int opposite = -1;
  for (int j = 0; j < kNumRotors; ++j) {
    if (j != f && mt(1, j) == -mt(1, f) && mt(2, j) == -mt(2, f)) opposite = j;
  }
  Vector4d t = Vector4d::Constant(0.5 * total);
  t[f] = 0.0;
  t[opposite] = 0.0;
  return t;
}

std::vector<ReferencePoint> hover_references(const Vector3d& position, const OcpConfig& cfg,
                                             const VehicleParams& params, std::optional<int> failed_rotor) {
  ReferencePoint r;
  r.p = position;
  r.t = reference_thrusts(params.m * params.g, params, failed_rotor);
  return std::vector<ReferencePoint>(static_cast<std::size_t>(cfg.N + 1), r);
}

std::vector<ReferencePoint> reference_from_trajectory(const FlatTrajectory& traj, double t0,
                                                      const OcpConfig& cfg, const VehicleParams& params,
                                                      std::optional<int> failed_rotor) {
  std::vector<ReferencePoint> refs(static_cast<std::size_t>(cfg.N + 1));
  for (int k = 0; k <= cfg.N; ++k) {
    const FlatSample s = traj.sample(t0 + k * cfg.dt);
    ReferencePoint& r = refs[static_cast<std::size_t>(k)];
    r.p = s.p;
    r.v = s.v;
    // Specific force the rotors must provide, including a world-frame drag estimate.
    const Vector3d f = s.a + Vector3d(0.0, 0.0, params.g) + params.D.cwiseProduct(s.v) / params.m;
    const double n = f.norm();
    const Vector3d z_b = n > 1e-9 ? Vector3d(f / n) : Vector3d::UnitZ();
    r.q = quat_between(Vector3d::UnitZ(), z_b);
    r.t = reference_thrusts(params.m * n, params, failed_rotor);
  }
  return refs;
}

Ocp build_ocp(const VehicleState& x0, const std::vector<ReferencePoint>& refs,
              std::optional<int> failed_rotor, const OcpConfig& cfg, const VehicleParams& params) {
  cfg.validate();
  if (refs.size() != static_cast<std::size_t>(cfg.N + 1)) {
    fail(ErrorKind::InvalidInput, "build_ocp: expected N+1 reference points");
  }
  Ocp ocp;
  ocp.cfg = cfg;
  ocp.x0 = x0.pack();
  ocp.refs = refs;
  ocp.failed_rotor = failed_rotor;
  for (int i = 0; i < kNumRotors; ++i) {
    ocp.u_lo[i] = cfg.u_lo[i] < 0.0 ? 0.0 : cfg.u_lo[i];
    ocp.u_hi[i] = cfg.u_hi[i] < 0.0 ? params.T_bar : cfg.u_hi[i];
  }
  if ((ocp.u_lo.array() > ocp.u_hi.array()).any()) fail(ErrorKind::Config, "build_ocp: u_lo > u_hi");
  ocp.w_max = cfg.w_max;
  if (failed_rotor) {
    const int f = *failed_rotor;
    if (f < 0 || f >= kNumRotors) fail(ErrorKind::InvalidInput, "build_ocp: rotor index out of range");
    ocp.u_lo[f] = 0.0;
    ocp.u_hi[f] = 0.0;
    ocp.cfg.Q_q[3] = 0.0;
    if (cfg.zero_yaw_rate_weight_on_fault) ocp.cfg.Q_w[2] = 0.0;
    ocp.w_max[2] = std::numeric_limits<double>::infinity();
  }
  return ocp;
}

double stage_state_cost(const StateVector<double>& x, const ReferencePoint& ref, const Ocp& ocp) {
  VecY y;
  stage_residual(x, ref, ocp, y, nullptr);
  return 0.5 * y.squaredNorm();
}

NmpcIterate shift_iterate(const NmpcIterate& it, double delta, double dt) {
  NmpcIterate out = it;
  if (it.empty()) return out;
  const double a = std::clamp(delta / dt, 0.0, 1.0);
  const std::size_t n = it.u.size();
  for (std::size_t k = 0; k < n; ++k) {
    out.x[k] = it.x[k] + a * (it.x[k + 1] - it.x[k]);
    out.x[k].segment<4>(sx::quat).normalize();
    if (k + 1 < n) out.u[k] = it.u[k] + a * (it.u[k + 1] - it.u[k]);
  }
  return out;
}

NmpcSolution solve_nmpc(const Ocp& ocp, const NmpcIterate& warm_start, const VehicleParams& params) {
  const int n = ocp.cfg.N;
  const auto un = static_cast<std::size_t>(n);
  NmpcIterate it;
  if (warm_start.u.size() == un && warm_start.x.size() == un + 1 && finite_iterate(warm_start)) {
    it = warm_start;
    for (auto& u : it.u) u = u.cwiseMax(ocp.u_lo).cwiseMin(ocp.u_hi);
    // Keep the measured quaternion in the hemisphere of the first node.
    if (ocp.x0.segment<4>(sx::quat).dot(it.x[0].segment<4>(sx::quat)) < 0.0) {
      for (auto& x : it.x) x.segment<4>(sx::quat) *= -1.0;
    }
  } else {
    it = initial_guess(ocp, params);
  }
  const NmpcIterate fallback = it;

  NmpcSolution sol;
  std::vector<Linearization> lin(un);
  std::vector<MatA> P(un + 1);
  std::vector<StateVec> q(un + 1), c(un + 1), lambda(un + 2);
  std::vector<MatB> gamma(un + 1), w_acc(un + 2);
  Eigen::MatrixXd H(n * kNu, n * kNu);
  Eigen::VectorXd g(n * kNu), lo(n * kNu), hi(n * kNu);
  VecY y;
  MatJ jac;

  bool ok = true;
  for (int iter = 0; iter < ocp.cfg.sqp_iterations && ok; ++iter) {
    for (std::size_t k = 0; k < un; ++k) lin[k] = linearize(it.x[k], it.u[k], params, ocp.cfg.dt);

    // Affine part of the condensed state: c_0 = x0 - xbar_0, c_{k+1} = A c_k + d_k.
    double defect = 0.0;
    c[0] = ocp.x0 - it.x[0];
    defect = c[0].lpNorm<Eigen::Infinity>();
    for (std::size_t k = 0; k < un; ++k) {
      const StateVec d = lin[k].f - it.x[k + 1];
      defect = std::max(defect, d.lpNorm<Eigen::Infinity>());
      c[k + 1] = lin[k].A * c[k] + d;
    }
    for (std::size_t k = 1; k <= un; ++k) {
      stage_residual(it.x[k], ocp.refs[k], ocp, y, &jac);
      P[k] = jac.transpose() * jac;
      q[k] = jac.transpose() * (y + jac * c[k]);
    }

    // Gradient by the backward adjoint recursion.
    lambda[un] = q[un];
    for (std::size_t k = un - 1; k >= 1; --k) lambda[k] = q[k] + lin[k].A.transpose() * lambda[k + 1];
    for (std::size_t i = 0; i < un; ++i) {
      const Vector4d ru = ocp.cfg.R.cwiseProduct(it.u[i] - ocp.refs[i].t);
      g.segment<kNu>(static_cast<Eigen::Index>(i) * kNu) = lin[i].B.transpose() * lambda[i + 1] + ru;
      lo.segment<kNu>(static_cast<Eigen::Index>(i) * kNu) = ocp.u_lo - it.u[i];
      hi.segment<kNu>(static_cast<Eigen::Index>(i) * kNu) = ocp.u_hi - it.u[i];
    }

    // Hessian, one block column at a time.
    for (std::size_t j = 0; j < un; ++j) {
      gamma[j + 1] = lin[j].B;
      for (std::size_t k = j + 1; k < un; ++k) gamma[k + 1] = lin[k].A * gamma[k];
      w_acc[un] = P[un] * gamma[un];
      for (std::size_t k = un - 1; k >= j + 1; --k) w_acc[k] = P[k] * gamma[k] + lin[k].A.transpose() * w_acc[k + 1];
      for (std::size_t i = j; i < un; ++i) {
        const Eigen::Matrix4d block = lin[i].B.transpose() * w_acc[i + 1];
        const auto ii = static_cast<Eigen::Index>(i) * kNu, jj = static_cast<Eigen::Index>(j) * kNu;
        H.block<kNu, kNu>(ii, jj) = block;
        H.block<kNu, kNu>(jj, ii) = block.transpose();
      }
      H.block<kNu, kNu>(static_cast<Eigen::Index>(j) * kNu, static_cast<Eigen::Index>(j) * kNu).diagonal() +=
          ocp.cfg.R;
    }

    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n * kNu);
    // Stationarity: gradient components not blocked by an active bound.
    double stationarity = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const bool blocked = (lo[i] >= 0.0 && g[i] > 0.0) || (hi[i] <= 0.0 && g[i] < 0.0);
      if (!blocked) stationarity = std::max(stationarity, std::abs(g[i]));
    }
    const double kkt = stationarity + defect;
    sol.stats.kkt_history.push_back(kkt);
    sol.stats.kkt = kkt;

    BoxQpOptions qp_options;
    qp_options.max_iterations = 30;
    BoxQpResult qp;
    try {
      qp = solve_box_qp(H, g, lo, hi, zero, qp_options);
    } catch (const Error&) {
      ok = false;
      break;
    }
    sol.stats.qp_iterations += qp.iterations;
    if (!qp.x.allFinite()) {
      ok = false;
      break;
    }

    StateVec dx = c[0];
    for (std::size_t k = 0; k < un; ++k) {
      const Vector4d du = qp.x.segment<kNu>(static_cast<Eigen::Index>(k) * kNu);
      const StateVec dnext = lin[k].A * dx + lin[k].B * du + (lin[k].f - it.x[k + 1]);
      it.x[k] += dx;
      it.u[k] = (it.u[k] + du).cwiseMax(ocp.u_lo).cwiseMin(ocp.u_hi);
      dx = dnext;
    }
    it.x[un] += dx;
    for (std::size_t k = 1; k <= un; ++k) it.x[k].segment<4>(sx::quat).normalize();
    sol.stats.iterations = iter + 1;
    ok = finite_iterate(it);
  }

  if (!ok) {
    it = fallback;
    sol.stats.degraded = true;
  }
  sol.stats.cost = iterate_cost(ocp, it);
  sol.command.u = it.u[0].cwiseMax(ocp.u_lo).cwiseMin(ocp.u_hi);
  sol.trajectory = std::move(it);
  return sol;
}

NmpcController::NmpcController(const VehicleParams& params, const OcpConfig& cfg, double control_dt)
    : params_(params), cfg_(cfg), control_dt_(control_dt) {
  params_.validate();
  cfg_.validate();
  if (!(control_dt > 0.0)) fail(ErrorKind::Config, "nmpc: control period must be positive");
}

NmpcSolution NmpcController::compute(const VehicleState& x0, const std::vector<ReferencePoint>& refs) {
  const Ocp ocp = build_ocp(x0, refs, failed_rotor_, cfg_, params_);
  const NmpcIterate warm = shift_iterate(warm_, control_dt_, cfg_.dt);
  NmpcSolution sol = solve_nmpc(ocp, warm, params_);
  warm_ = sol.trajectory;
  return sol;
}

}  // namespace rfa
