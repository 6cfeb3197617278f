#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "rfa/attitude.hpp"
#include "rfa/dynamics.hpp"
#include "rfa/trajectory.hpp"

namespace rfa {

class KeyValueFile;

/// Weights and bounds of the receding-horizon problem. Input bounds that are
/// left negative are filled with [0, T_bar] from the vehicle parameters.
struct OcpConfig {
  int N = 20;
  double dt = 0.05;
  Vector3d Q_p{100.0, 100.0, 600.0};
  Vector3d Q_v{5.0, 5.0, 5.0};
  Vector4d Q_q{60.0, 60.0, 60.0, 60.0};
  Vector3d Q_w{5.0, 5.0, 5.0};
  Vector4d Q_t{1.0, 1.0, 1.0, 1.0};
  Vector4d R{1.0, 1.0, 1.0, 1.0};
  Vector4d u_lo = Vector4d::Constant(-1.0);
  Vector4d u_hi = Vector4d::Constant(-1.0);
  /// Symmetric body-rate bounds (rad/s), enforced as a quadratic penalty.
  Vector3d w_max{6.0, 6.0, 6.0};
  double rate_penalty = 10.0;
  int sqp_iterations = 4;
  /// Also drop the yaw-rate weight once a rotor has failed.
  bool zero_yaw_rate_weight_on_fault = true;

  void validate() const;
  static OcpConfig from_file(const KeyValueFile& file, const std::string& prefix = "nmpc.");
};

struct ReferencePoint {
  Vector3d p = Vector3d::Zero();
  Vector3d v = Vector3d::Zero();
  Quat<double> q = quat_identity();
  Vector3d w = Vector3d::Zero();
  Vector4d t = Vector4d::Zero();
};

/// Hover reference at `position` for every node.
std::vector<ReferencePoint> hover_references(const Vector3d& position, const OcpConfig& cfg,
                                             const VehicleParams& params, std::optional<int> failed_rotor);

/// Static thrust split producing total thrust `total` with zero roll/pitch
/// torque. With a failed rotor its diagonal opposite is idle and the two
/// remaining rotors share the thrust.
Vector4d reference_thrusts(double total, const VehicleParams& params, std::optional<int> failed_rotor);

/// Samples `traj` at t0 + k dt for k = 0..N and reconstructs attitude and
/// thrust from the flat outputs (yaw zero).
std::vector<ReferencePoint> reference_from_trajectory(const FlatTrajectory& traj, double t0,
                                                      const OcpConfig& cfg, const VehicleParams& params,
                                                      std::optional<int> failed_rotor);

/// Multiple-shooting instance with its effective (fault-adjusted) weights.
struct Ocp {
  OcpConfig cfg;  // weights after fault reconfiguration
  StateVector<double> x0;
  std::vector<ReferencePoint> refs;
  Vector4d u_lo, u_hi;
  Vector3d w_max;
  std::optional<int> failed_rotor;
};

Ocp build_ocp(const VehicleState& x0, const std::vector<ReferencePoint>& refs,
              std::optional<int> failed_rotor, const OcpConfig& cfg, const VehicleParams& params);

/// Primal iterate of the shooting problem: N+1 states, N inputs.
struct NmpcIterate {
  std::vector<StateVector<double>> x;
  std::vector<Vector4d> u;
  bool empty() const { return u.empty(); }
};

struct SolverStats {
  int iterations = 0;
  int qp_iterations = 0;
  double kkt = 0.0;
  std::vector<double> kkt_history;
  double cost = 0.0;
  bool degraded = false;
};

struct NmpcSolution {
  ControlCommand command;
  NmpcIterate trajectory;
  SolverStats stats;
};

/// Stage cost value of one node (state part only), as used by the solver.
double stage_state_cost(const StateVector<double>& x, const ReferencePoint& ref, const Ocp& ocp);

/// Gauss-Newton SQP with condensing and a box QP on the inputs. An empty or
/// mismatched warm start is replaced by a forward simulation of the
/// reference thrusts.
NmpcSolution solve_nmpc(const Ocp& ocp, const NmpcIterate& warm_start, const VehicleParams& params);

/// Shifts an iterate forward by `delta` seconds along its own time grid.
NmpcIterate shift_iterate(const NmpcIterate& it, double delta, double dt);

/// Receding-horizon wrapper that owns the warm start.
class NmpcController {
 public:
  NmpcController(const VehicleParams& params, const OcpConfig& cfg, double control_dt);

  void set_failed_rotor(std::optional<int> rotor) { failed_rotor_ = rotor; }
  std::optional<int> failed_rotor() const { return failed_rotor_; }

  NmpcSolution compute(const VehicleState& x0, const std::vector<ReferencePoint>& refs);
  void reset() { warm_.x.clear(); warm_.u.clear(); }
  const OcpConfig& config() const { return cfg_; }

 private:
  VehicleParams params_;
  OcpConfig cfg_;
  double control_dt_;
  std::optional<int> failed_rotor_;
  NmpcIterate warm_;
};

}  // namespace rfa
