#include "rfa/dynamics.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/LU>

#include "rfa/config.hpp"
#include "rfa/error.hpp"

namespace rfa {

namespace {

void require_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    fail(ErrorKind::Config, std::string(name) + " must be positive and finite");
  }
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(m, "m");
  for (int i = 0; i < 3; ++i) {
    require_positive(I_v[i], "I_v");
    require_positive(D[i], "D");
  }
  require_positive(r_d, "r_d");
  require_positive(k_n, "k_n");
  require_positive(kappa_t, "kappa_t");
  require_positive(k_d_psi, "k_d_psi");
  require_positive(sigma, "sigma");
  require_positive(T_bar, "T_bar");
  require_positive(g, "g");
  if (!(kNumRotors * T_bar > m * g)) {
    fail(ErrorKind::Config, "T_bar: four rotors cannot lift the vehicle (4*T_bar <= m*g)");
  }
}

double VehicleParams::thrust_to_rpm(double thrust) const {
  return std::sqrt(std::max(thrust, 0.0) / k_n);
}

VehicleParams VehicleParams::from_file(const KeyValueFile& file, const std::string& prefix) {
  VehicleParams p;
  p.m = file.get_double(prefix + "m", p.m);
  p.I_v = file.get_fixed<3>(prefix + "I_v", p.I_v);
  p.r_d = file.get_double(prefix + "r_d", p.r_d);
  p.k_n = file.get_double(prefix + "k_n", p.k_n);
  p.kappa_t = file.get_double(prefix + "kappa_t", p.kappa_t);
  p.D = file.get_fixed<3>(prefix + "D", p.D);
  p.k_d_psi = file.get_double(prefix + "k_d_psi", p.k_d_psi);
  p.sigma = file.get_double(prefix + "sigma", p.sigma);
  p.T_bar = file.get_double(prefix + "T_bar", p.T_bar);
  p.g = file.get_double(prefix + "g", p.g);
  p.validate();
  return p;
}

VehicleParams VehicleParams::load(const std::filesystem::path& path) {
  const auto file = KeyValueFile::load(path);
  auto p = from_file(file);
  file.check_all_consumed();
  return p;
}

std::string VehicleParams::to_text(const std::string& prefix) const {
  std::ostringstream out;
  auto vec = [](const Vector3d& v) {
    return format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]);
  };
  out << prefix << "m = " << format_double(m) << "\n"
      << prefix << "I_v = " << vec(I_v) << "\n"
      << prefix << "r_d = " << format_double(r_d) << "\n"
      << prefix << "k_n = " << format_double(k_n) << "\n"
      << prefix << "kappa_t = " << format_double(kappa_t) << "\n"
      << prefix << "D = " << vec(D) << "\n"
      << prefix << "k_d_psi = " << format_double(k_d_psi) << "\n"
      << prefix << "sigma = " << format_double(sigma) << "\n"
      << prefix << "T_bar = " << format_double(T_bar) << "\n"
      << prefix << "g = " << format_double(g) << "\n";
  return out.str();
}

StateVector<double> VehicleState::pack() const {
  StateVector<double> x;
  x << eta, q, v, w, t;
  return x;
}

VehicleState VehicleState::unpack(const StateVector<double>& x) {
  VehicleState s;
  s.eta = x.segment<3>(sx::pos);
  s.q = x.segment<4>(sx::quat);
  s.v = x.segment<3>(sx::vel);
  s.w = x.segment<3>(sx::rate);
  s.t = x.segment<4>(sx::thrust);
  return s;
}

VehicleState VehicleState::hover(const VehicleParams& params, const Vector3d& position) {
  VehicleState s;
  s.eta = position;
  s.t.setConstant(params.hover_thrust());
  return s;
}

Eigen::Matrix4d inverse_effectiveness_matrix(const VehicleParams& p) {
  return effectiveness_matrix<double>(p).inverse();
}

Wrench mix_thrusts(const Vector4d& t, const VehicleParams& p) {
  if (!t.allFinite()) fail(ErrorKind::InvalidInput, "mix_thrusts: non-finite thrust");
  if ((t.array() < 0.0).any()) fail(ErrorKind::InvalidInput, "mix_thrusts: negative thrust");
  const Vector4d out = effectiveness_matrix<double>(p) * t;
  return Wrench{out[0], out.tail<3>()};
}

Vector4d unmix_wrench(const Wrench& w, const VehicleParams& p) {
  Vector4d rhs;
  rhs << w.thrust, w.torque;
  if (!rhs.allFinite()) fail(ErrorKind::InvalidInput, "unmix_wrench: non-finite wrench");
  return effectiveness_matrix<double>(p).partialPivLu().solve(rhs);
}

StateVector<double> continuous_dynamics(const VehicleState& x, const ControlCommand& u,
                                        const VehicleParams& p) {
  if (std::abs(x.q.norm() - 1.0) > 1e-6) {
    fail(ErrorKind::InvalidState, "continuous_dynamics: quaternion is not unit norm");
  }
  const StateVector<double> packed = x.pack();
  if (!packed.allFinite() || !u.u.allFinite()) {
    fail(ErrorKind::InvalidInput, "continuous_dynamics: non-finite state or command");
  }
  return state_derivative<double>(packed, u.u, p);
}

Vector3d linear_acceleration(const VehicleState& x, const VehicleParams& p) {
  return state_derivative<double>(x.pack(), x.t, p).segment<3>(sx::vel);
}

double yaw_equilibrium_rate(const Vector4d& thrusts, const VehicleParams& p) {
  if (!thrusts.allFinite()) fail(ErrorKind::InvalidInput, "yaw_equilibrium_rate: non-finite thrust");
  const double tau_z = effectiveness_matrix<double>(p).row(3).dot(thrusts);
  return tau_z / p.k_d_psi;
}

}  // namespace rfa
