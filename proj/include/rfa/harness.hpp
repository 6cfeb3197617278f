#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rfa/dynamics.hpp"
#include "rfa/fdd.hpp"
#include "rfa/nmpc.hpp"
#include "rfa/sim.hpp"
#include "rfa/traj_opt.hpp"
#include "rfa/world.hpp"

namespace rfa {

class KeyValueFile;

enum class MissionKind { Hover, Takeoff, Lemniscate, Waypoints, Navigate };

const char* to_string(MissionKind kind);
MissionKind mission_kind_from_string(const std::string& text);

struct Mission {
  MissionKind kind = MissionKind::Hover;
  /// Hover point, takeoff pad, or first waypoint.
  Vector3d position{0.0, 0.0, 1.0};
  double height = 1.0;       // takeoff climb
  double climb_speed = 1.0;  // takeoff peak speed
  Vector3d center{0.0, 0.0, 1.5};
  Vector3d size{6.0, 3.0, 1.0};
  double speed = 1.0;
  int laps = 1;
  double ramp_time = 2.0;
  /// The reference holds its initial state until this time. A navigation
  /// mission takes off from below the world start at this time.
  double start_time = 1.0;
  /// Navigation: hover time between the end of the climb and the first plan.
  double settle_time = 3.0;
  std::vector<Vector3d> waypoints;
};

/// Online navigation through a partially known world.
struct NavConfig {
  double sensor_range = 6.0;
  double reveal_period = 0.25;
  double replan_period = 1.0;
  double goal_tolerance = 0.5;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration = 10.0;
  VehicleParams vehicle;
  SimConfig sim;
  /// NMPC runs every `control_period`; sensing and FDD run every sim.control_dt.
  double control_period = 0.01;
  Mission mission;
  FailureSchedule failures;
  FddConfig fdd;
  OcpConfig nmpc;
  PlannerLimits planner;
  std::optional<WorldSpec> world;
  std::filesystem::path world_file;
  NavConfig nav;
  /// RMSE window; negative bounds mean the start / end of the run.
  double rmse_start = -1.0;
  double rmse_end = -1.0;
  std::filesystem::path output_dir;

  /// Throws a Config error naming the offending field.
  void validate() const;
  /// Relative paths in the file are resolved against `base`.
  static Scenario from_file(const KeyValueFile& file, const std::filesystem::path& base = {});
  static Scenario load(const std::filesystem::path& path);
};

/// One control tick. Missing quantities (no world) are NaN.
struct LogRecord {
  double t = 0.0;
  int stage = 0;  // FlightStage
  VehicleState truth;
  Vector4d effectiveness = Vector4d::Ones();
  SensorFrame frame;
  Vector4d command = Vector4d::Zero();
  Vector3d ref_p = Vector3d::Zero();
  Vector3d ref_v = Vector3d::Zero();
  int injected_rotor = -1;
  int fdd_rotor = -1;
  int fdd_class = -1;  // FaultClass, -1 before any report
  int fdd_reports = 0;
  double nmpc_kkt = 0.0;
  int nmpc_degraded = 0;
  int planner_fault = 0;
  double clearance = std::numeric_limits<double>::quiet_NaN();
};

struct FlightLog {
  std::string scenario;
  std::uint64_t seed = 0;
  double injection_time = -1.0;  // negative: no failure injected
  int injected_rotor = -1;
  bool navigation = false;
  Vector3d goal = Vector3d::Zero();
  bool diverged = false;
  std::string diagnostic;
  std::vector<LogRecord> rows;
};

/// Column names in file order.
const std::vector<std::string>& log_columns();

void write_log(const FlightLog& log, std::ostream& out);
void write_log(const FlightLog& log, const std::filesystem::path& path);
/// Throws a LogFormat error on missing columns or malformed rows.
FlightLog read_log(std::istream& in);
FlightLog read_log(const std::filesystem::path& path);

/// Wall-clock figures; informational, never used for control.
struct ComputeStats {
  double nmpc_mean_ms = 0.0, nmpc_max_ms = 0.0;
  double fdd_mean_ms = 0.0;
  double planner_mean_ms = 0.0, planner_max_ms = 0.0;
  int nmpc_solves = 0, plans = 0;
};

struct RunMetrics {
  bool injected = false;
  double injection_time = std::numeric_limits<double>::quiet_NaN();
  bool detected = false;
  double detection_time = std::numeric_limits<double>::quiet_NaN();
  double fdd_latency = std::numeric_limits<double>::quiet_NaN();
  int detected_rotor = -1;
  int detected_class = -1;
  bool false_alarm = false;
  bool missed_detection = false;
  double min_altitude = std::numeric_limits<double>::quiet_NaN();  // after liftoff
  double rmse = 0.0;        // sqrt(mean |e|^2)
  double rmse_integral = 0.0;  // sqrt(integral |e|^2 dt) / (t2 - t1)
  double max_yaw_rate = 0.0;
  double final_error = 0.0;  // max |e| over the final 5 s
  double min_clearance = std::numeric_limits<double>::quiet_NaN();
  bool collision = false;
  bool diverged = false;
  bool goal_reached = false;
  bool success = false;
  double duration = 0.0;

  bool operator==(const RunMetrics& other) const;
};

/// Window used by the terminal error check of the success criterion.
inline constexpr double kFinalWindow = 5.0;
inline constexpr double kFinalErrorBound = 1.5;

RunMetrics compute_metrics(const FlightLog& log, const Scenario& scenario);

/// key = value lines, exactly reproducible.
std::string metrics_text(const RunMetrics& metrics);

struct RunResult {
  FlightLog log;
  RunMetrics metrics;
  ComputeStats stats;
};

/// Closed loop sim -> sense -> FDD -> plan -> NMPC. Writes the log, metrics
/// and a sampled reference table into scenario.output_dir when it is set.
RunResult run_scenario(const Scenario& scenario);

enum class SuiteGroup { Test1, Test2, Test3, Test4, NavIndoor, NavForest };

const char* to_string(SuiteGroup group);
/// Groups of a suite id: tests1..tests4, tests1-4, nav-indoor, nav-forest.
std::vector<SuiteGroup> suite_groups(const std::string& suite_id);

/// Scenario of run `k` of a group: seed base_seed + k, rotor k mod 4, and a
/// failure time drawn from the seed.
Scenario suite_scenario(SuiteGroup group, int k, std::uint64_t base_seed);

struct AggregateRow {
  std::string group;
  int runs = 0;
  double success_rate = 0.0;  // percent
  double fdd_time_mean = std::numeric_limits<double>::quiet_NaN();
  double fdd_time_max = std::numeric_limits<double>::quiet_NaN();
  double missed_detection_rate = 0.0;  // percent
  double false_alarm_rate = 0.0;       // percent
  double min_altitude = std::numeric_limits<double>::quiet_NaN();
  double rmse_mean = 0.0;
  double nmpc_mean_ms = 0.0;

  bool operator==(const AggregateRow& other) const;
};

AggregateRow aggregate(const std::string& group, const std::vector<RunResult>& runs);

struct SuiteResult {
  std::vector<AggregateRow> rows;
  std::vector<std::vector<RunMetrics>> runs;  // per group
};

/// Runs every group of the suite. A run's Config error is rethrown naming the
/// group and run index. When `out` is non-empty, writes runs.csv,
/// aggregate.csv and summary.txt there, plus per-run logs if `write_logs`.
SuiteResult run_suite(const std::string& suite_id, int repetitions, std::uint64_t base_seed,
                      const std::filesystem::path& out = {}, bool write_logs = false);

void write_aggregate_csv(const std::vector<AggregateRow>& rows, std::ostream& out);
std::string summary_table(const std::vector<AggregateRow>& rows);

}  // namespace rfa
