#include "rfa/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "rfa/config.hpp"
#include "rfa/error.hpp"
#include "rfa/minco.hpp"

namespace rfa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  fail(ErrorKind::Config, field + ": " + what);
}

// Runs a nested validate() and prefixes its message with the section name.
template <class F>
void validate_section(const std::string& section, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config || e.kind() == ErrorKind::Domain || e.kind() == ErrorKind::InvalidInput) {
      fail(ErrorKind::Config, section + ": " + e.what());
    }
    throw;
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

double uniform01(std::uint64_t& state) {
  // splitmix64; portable across standard libraries.
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

const char* to_string(MissionKind kind) {
  switch (kind) {
    case MissionKind::Hover: return "hover";
    case MissionKind::Takeoff: return "takeoff";
    case MissionKind::Lemniscate: return "lemniscate";
    case MissionKind::Waypoints: return "waypoints";
    case MissionKind::Navigate: return "navigate";
  }
  return "?";
}

MissionKind mission_kind_from_string(const std::string& text) {
  for (auto k : {MissionKind::Hover, MissionKind::Takeoff, MissionKind::Lemniscate, MissionKind::Waypoints,
                 MissionKind::Navigate}) {
    if (text == to_string(k)) return k;
  }
  config_error("mission.kind", "unknown mission '" + text + "'");
}

void Scenario::validate() const {
  if (name.empty() || name.find_first_of(" \t\n,") != std::string::npos) {
    config_error("name", "must be non-empty without spaces or commas");
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) config_error("duration", "must be positive");
  validate_section("vehicle", [&] { vehicle.validate(); });
  if (!(sim.physics_dt > 0.0) || !(sim.control_dt >= sim.physics_dt)) {
    config_error("sim.control_dt", "must be positive and not below sim.physics_dt");
  }
  const double ratio = control_period / sim.control_dt;
  if (!(control_period >= sim.control_dt) || std::abs(ratio - std::round(ratio)) > 1e-9) {
    config_error("controller.period", "must be a multiple of sim.control_dt");
  }
  for (std::size_t i = 0; i < failures.events.size(); ++i) {
    const auto& e = failures.events[i];
    const std::string key = "failure." + std::to_string(i);
    if (e.rotor < 0 || e.rotor >= kNumRotors) config_error(key + ".rotor", "must be 0..3");
    if (e.time >= duration) config_error(key + ".time", "is after the end of the run");
  }
  validate_section("failure", [&] { failures.validate(); });
  validate_section("fdd", [&] { fdd.validate(); });
  validate_section("nmpc", [&] { nmpc.validate(); });
  validate_section("planner", [&] { planner.validate(vehicle); });

  const Mission& m = mission;
  if (!m.position.allFinite()) config_error("mission.position", "must be finite");
  if (!(m.start_time >= 0.0)) config_error("mission.start_time", "must be non-negative");
  switch (m.kind) {
    case MissionKind::Hover: break;
    case MissionKind::Takeoff:
      if (!(m.height > 0.0)) config_error("mission.height", "must be positive");
      if (!(m.climb_speed > 0.0)) config_error("mission.climb_speed", "must be positive");
      break;
    case MissionKind::Lemniscate:
      if (!(m.size.array() > 0.0).all()) config_error("mission.size", "must be positive");
      if (!(m.speed > 0.0)) config_error("mission.speed", "must be positive");
      if (m.laps < 1) config_error("mission.laps", "must be at least 1");
      if (!(m.ramp_time >= 0.0)) config_error("mission.ramp_time", "must be non-negative");
      break;
    case MissionKind::Waypoints:
      if (m.waypoints.empty()) config_error("mission.waypoints", "at least one waypoint required");
      break;
    case MissionKind::Navigate:
      if (!world && world_file.empty()) config_error("world", "navigation needs world.kind or world.file");
      if (!(m.climb_speed > 0.0)) config_error("mission.climb_speed", "must be positive");
      if (!(m.settle_time >= 0.0)) config_error("mission.settle_time", "must be non-negative");
      break;
  }
  if (world) validate_section("world", [&] { world->validate(); });
  if (!(nav.sensor_range > 0.0)) config_error("nav.sensor_range", "must be positive");
  if (!(nav.reveal_period > 0.0)) config_error("nav.reveal_period", "must be positive");
  if (!(nav.replan_period > 0.0)) config_error("nav.replan_period", "must be positive");
  if (!(nav.goal_tolerance > 0.0)) config_error("nav.goal_tolerance", "must be positive");
  if (rmse_start >= 0.0 && rmse_end >= 0.0 && !(rmse_end > rmse_start)) {
    config_error("metrics.rmse_end", "must exceed metrics.rmse_start");
  }
}

Scenario Scenario::from_file(const KeyValueFile& f, const std::filesystem::path& base) {
  Scenario s;
  s.name = f.get_string("name", s.name);
  s.seed = static_cast<std::uint64_t>(f.get_int("seed", static_cast<long>(s.seed)));
  s.duration = f.get_double("duration", s.duration);
  if (f.has("vehicle.file")) {
    s.vehicle = VehicleParams::load(resolve(base, f.get_string("vehicle.file")));
  } else {
    validate_section("vehicle", [&] { s.vehicle = VehicleParams::from_file(f, "vehicle."); });
  }
  s.sim.physics_dt = f.get_double("sim.physics_dt", s.sim.physics_dt);
  s.sim.control_dt = f.get_double("sim.control_dt", s.sim.control_dt);
  s.sim.liftoff_height = f.get_double("sim.liftoff_height", s.sim.liftoff_height);
  s.sim.cutoffs.accel_hz = f.get_double("sim.accel_cutoff_hz", s.sim.cutoffs.accel_hz);
  s.sim.cutoffs.gyro_hz = f.get_double("sim.gyro_cutoff_hz", s.sim.cutoffs.gyro_hz);
  s.sim.cutoffs.angular_accel_hz = f.get_double("sim.angular_accel_cutoff_hz", s.sim.cutoffs.angular_accel_hz);
  const std::string profile = f.get_string("noise.profile", "default");
  if (profile == "zero") s.sim.noise = NoiseProfile::zero();
  else if (profile != "default") config_error("noise.profile", "expected default or zero");
  auto& n = s.sim.noise;
  n.accel = f.get_double("noise.accel", n.accel);
  n.gyro = f.get_double("noise.gyro", n.gyro);
  n.rpm = f.get_double("noise.rpm", n.rpm);
  n.odom_position = f.get_double("noise.odom_position", n.odom_position);
  n.odom_velocity = f.get_double("noise.odom_velocity", n.odom_velocity);
  n.odom_attitude = f.get_double("noise.odom_attitude", n.odom_attitude);
  s.control_period = f.get_double("controller.period", s.control_period);

  auto& m = s.mission;
  m.kind = mission_kind_from_string(f.get_string("mission.kind", to_string(m.kind)));
  m.position = f.get_fixed<3>("mission.position", m.position);
  m.height = f.get_double("mission.height", m.height);
  m.climb_speed = f.get_double("mission.climb_speed", m.climb_speed);
  m.settle_time = f.get_double("mission.settle_time", m.settle_time);
  m.center = f.get_fixed<3>("mission.center", m.center);
  m.size = f.get_fixed<3>("mission.size", m.size);
  m.speed = f.get_double("mission.speed", m.speed);
  m.laps = static_cast<int>(f.get_int("mission.laps", m.laps));
  m.ramp_time = f.get_double("mission.ramp_time", m.ramp_time);
  m.start_time = f.get_double("mission.start_time", m.start_time);
  if (f.has("mission.waypoints")) {
    const auto v = f.get_list("mission.waypoints");
    if (v.size() % 3 != 0) config_error("mission.waypoints", "expected x y z triples");
    for (std::size_t i = 0; i < v.size(); i += 3) m.waypoints.emplace_back(v[i], v[i + 1], v[i + 2]);
  }

  for (int i = 0;; ++i) {
    const std::string key = "failure." + std::to_string(i) + ".";
    if (f.keys_with_prefix(key).empty()) break;
    FailureEvent e;
    e.time = f.get_double(key + "time");
    e.rotor = static_cast<int>(f.get_int(key + "rotor", 0));
    validate_section(key + "mode", [&] { e.mode = failure_mode_from_string(f.get_string(key + "mode", "motor_stop")); });
    e.severity = f.get_double(key + "severity", 1.0);
    s.failures.events.push_back(e);
  }

  auto& d = s.fdd;
  d.gamma_M = f.get_double("fdd.gamma_M", d.gamma_M);
  d.gamma_P = f.get_double("fdd.gamma_P", d.gamma_P);
  if (f.has("fdd.gamma_Q")) {
    const auto v = f.get_list("fdd.gamma_Q", 4);
    std::copy(v.begin(), v.end(), d.gamma_Q.begin());
  }
  d.takeoff_rule = takeoff_rule_from_string(f.get_string("fdd.takeoff_rule", to_string(d.takeoff_rule)));
  d.debounce_count = static_cast<int>(f.get_int("fdd.debounce_count", d.debounce_count));
  d.rpm_floor_fraction = f.get_double("fdd.rpm_floor_fraction", d.rpm_floor_fraction);
  d.degradation_threshold = f.get_double("fdd.degradation_threshold", d.degradation_threshold);
  d.warmup_time_constants = f.get_double("fdd.warmup_time_constants", d.warmup_time_constants);

  s.nmpc = OcpConfig::from_file(f, "nmpc.");
  s.planner = PlannerLimits::from_file(f, "planner.");

  if (f.has("world.file")) {
    s.world_file = resolve(base, f.get_string("world.file"));
  } else if (f.has("world.kind")) {
    WorldSpec w;
    w.kind = world_kind_from_string(f.get_string("world.kind"));
    w.size = f.get_fixed<3>("world.size", w.size);
    w.resolution = f.get_double("world.resolution", w.resolution);
    w.density = f.get_double("world.density", w.density);
    w.min_passage = f.get_double("world.min_passage", w.min_passage);
    w.safe_distance = f.get_double("world.safe_distance", s.planner.safe_distance);
    w.flight_height = f.get_double("world.flight_height", w.flight_height);
    w.seed = static_cast<std::uint64_t>(f.get_int("world.seed", static_cast<long>(s.seed)));
    w.max_retries = static_cast<int>(f.get_int("world.max_retries", w.max_retries));
    s.world = w;
  }
  s.nav.sensor_range = f.get_double("nav.sensor_range", s.nav.sensor_range);
  s.nav.reveal_period = f.get_double("nav.reveal_period", s.nav.reveal_period);
  s.nav.replan_period = f.get_double("nav.replan_period", s.nav.replan_period);
  s.nav.goal_tolerance = f.get_double("nav.goal_tolerance", s.nav.goal_tolerance);
  s.rmse_start = f.get_double("metrics.rmse_start", s.rmse_start);
  s.rmse_end = f.get_double("metrics.rmse_end", s.rmse_end);
  if (f.has("output")) s.output_dir = resolve(base, f.get_string("output"));
  f.check_all_consumed();
  s.validate();
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  return from_file(KeyValueFile::load(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Log

const std::vector<std::string>& log_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"t", "stage", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
                                  "wx", "wy", "wz", "th0", "th1", "th2", "th3", "eff0", "eff1", "eff2", "eff3",
                                  "sensor_t", "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "rpm0",
                                  "rpm1", "rpm2", "rpm3", "odom_px", "odom_py", "odom_pz", "odom_vx", "odom_vy",
                                  "odom_vz", "odom_qw", "odom_qx", "odom_qy", "odom_qz", "cmd0", "cmd1", "cmd2",
                                  "cmd3", "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz",
                                  "injected_rotor", "fdd_rotor", "fdd_class", "fdd_reports", "nmpc_kkt",
                                  "nmpc_degraded", "planner_fault", "clearance"};
    return c;
  }();
  return cols;
}

namespace {

template <class F>
void for_each_field(LogRecord& r, F&& f) {
  double stage = r.stage, inj = r.injected_rotor, rot = r.fdd_rotor, cls = r.fdd_class, rep = r.fdd_reports,
         deg = r.nmpc_degraded, pf = r.planner_fault;
  f(r.t);
  f(stage);
  for (int i = 0; i < 3; ++i) f(r.truth.eta[i]);
  for (int i = 0; i < 4; ++i) f(r.truth.q[i]);
  for (int i = 0; i < 3; ++i) f(r.truth.v[i]);
  for (int i = 0; i < 3; ++i) f(r.truth.w[i]);
  for (int i = 0; i < 4; ++i) f(r.truth.t[i]);
  for (int i = 0; i < 4; ++i) f(r.effectiveness[i]);
  f(r.frame.timestamp);
  for (int i = 0; i < 3; ++i) f(r.frame.accel_meas[i]);
  for (int i = 0; i < 3; ++i) f(r.frame.gyro_meas[i]);
  for (int i = 0; i < 4; ++i) f(r.frame.rpm_meas[i]);
  for (int i = 0; i < 3; ++i) f(r.frame.odom_position[i]);
  for (int i = 0; i < 3; ++i) f(r.frame.odom_velocity[i]);
  for (int i = 0; i < 4; ++i) f(r.frame.odom_attitude[i]);
  for (int i = 0; i < 4; ++i) f(r.command[i]);
  for (int i = 0; i < 3; ++i) f(r.ref_p[i]);
  for (int i = 0; i < 3; ++i) f(r.ref_v[i]);
  f(inj);
  f(rot);
  f(cls);
  f(rep);
  f(r.nmpc_kkt);
  f(deg);
  f(pf);
  f(r.clearance);
  r.stage = static_cast<int>(stage);
  r.injected_rotor = static_cast<int>(inj);
  r.fdd_rotor = static_cast<int>(rot);
  r.fdd_class = static_cast<int>(cls);
  r.fdd_reports = static_cast<int>(rep);
  r.nmpc_degraded = static_cast<int>(deg);
  r.planner_fault = static_cast<int>(pf);
}

double parse_field(const std::string& token, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::LogFormat, "log line " + std::to_string(line) + ": bad value '" + token + "' in " + column);
  }
  return v;
}

}  // namespace

void write_log(const FlightLog& log, std::ostream& out) {
  out << "# rfa-log 1\n";
  out << "# scenario " << log.scenario << "\n";
  out << "# seed " << log.seed << "\n";
  out << "# injection_time " << format_double(log.injection_time) << "\n";
  out << "# injected_rotor " << log.injected_rotor << "\n";
  out << "# navigation " << (log.navigation ? 1 : 0) << "\n";
  out << "# goal " << format_double(log.goal.x()) << " " << format_double(log.goal.y()) << " "
      << format_double(log.goal.z()) << "\n";
  out << "# diverged " << (log.diverged ? 1 : 0) << "\n";
  if (!log.diagnostic.empty()) out << "# diagnostic " << log.diagnostic << "\n";
  const auto& cols = log_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  std::string line;
  for (LogRecord r : log.rows) {
    line.clear();
    bool first = true;
    for_each_field(r, [&](double& v) {
      if (!first) line += ',';
      first = false;
      line += format_double(v);
    });
    line += '\n';
    out << line;
  }
}

void write_log(const FlightLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write log " + path.string());
  write_log(log, out);
}

FlightLog read_log(std::istream& in) {
  FlightLog log;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key;
      if (key == "scenario") ss >> log.scenario;
      else if (key == "seed") ss >> log.seed;
      else if (key == "injection_time") {
        std::string v;
        ss >> v;
        log.injection_time = parse_field(v, line_no, key);
      } else if (key == "injected_rotor") ss >> log.injected_rotor;
      else if (key == "navigation") {
        int v = 0;
        ss >> v;
        log.navigation = v != 0;
      } else if (key == "goal") {
        for (int i = 0; i < 3; ++i) {
          std::string v;
          ss >> v;
          log.goal[i] = parse_field(v, line_no, key);
        }
      } else if (key == "diverged") {
        int v = 0;
        ss >> v;
        log.diverged = v != 0;
      } else if (key == "diagnostic") {
        std::getline(ss >> std::ws, log.diagnostic);
      }
      continue;
    }
    header.clear();
    std::stringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) header.push_back(name);
    break;
  }
  if (header.empty()) fail(ErrorKind::LogFormat, "log has no column header");
  const auto& cols = log_columns();
  std::vector<std::size_t> position;
  for (const auto& c : cols) {
    const auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) fail(ErrorKind::LogFormat, "log is missing column '" + c + "'");
    position.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    tokens.clear();
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      tokens.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (tokens.size() != header.size()) {
      fail(ErrorKind::LogFormat, "log line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " + std::to_string(tokens.size()));
    }
    LogRecord r;
    std::size_t k = 0;
    for_each_field(r, [&](double& v) {
      v = parse_field(tokens[position[k]], line_no, cols[k]);
      ++k;
    });
    log.rows.push_back(r);
  }
  return log;
}

FlightLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::LogFormat, "cannot open log " + path.string());
  return read_log(in);
}

// ---------------------------------------------------------------------------
// Metrics

bool RunMetrics::operator==(const RunMetrics& o) const {
  return injected == o.injected && same(injection_time, o.injection_time) && detected == o.detected &&
         same(detection_time, o.detection_time) && same(fdd_latency, o.fdd_latency) &&
         detected_rotor == o.detected_rotor && detected_class == o.detected_class && false_alarm == o.false_alarm &&
         missed_detection == o.missed_detection && same(min_altitude, o.min_altitude) && same(rmse, o.rmse) &&
         same(rmse_integral, o.rmse_integral) && same(max_yaw_rate, o.max_yaw_rate) && same(final_error, o.final_error) &&
         same(min_clearance, o.min_clearance) && collision == o.collision && diverged == o.diverged &&
         goal_reached == o.goal_reached && success == o.success && same(duration, o.duration);
}

RunMetrics compute_metrics(const FlightLog& log, const Scenario& s) {
  RunMetrics m;
  if (log.rows.empty()) fail(ErrorKind::LogFormat, "log has no rows");
  const auto& rows = log.rows;
  m.diverged = log.diverged;
  m.duration = rows.back().t;
  m.injected = log.injection_time >= 0.0;
  if (m.injected) m.injection_time = log.injection_time;

  for (const auto& r : rows) {
    if (r.fdd_reports <= 0) continue;
    m.detection_time = r.t;
    m.detected_rotor = r.fdd_rotor;
    m.detected_class = r.fdd_class;
    if (!m.injected || r.t < log.injection_time || r.fdd_rotor != log.injected_rotor) {
      m.false_alarm = true;
    } else {
      m.detected = true;
      m.fdd_latency = r.t - log.injection_time;
    }
    break;
  }
  m.missed_detection = m.injected && !m.detected;

  bool airborne = false;
  for (const auto& r : rows) {
    if (!airborne && r.truth.eta.z() > 0.0) airborne = true;
    if (airborne) m.min_altitude = std::isnan(m.min_altitude) ? r.truth.eta.z() : std::min(m.min_altitude, r.truth.eta.z());
    m.max_yaw_rate = std::max(m.max_yaw_rate, std::abs(r.truth.w.z()));
    if (!std::isnan(r.clearance)) {
      m.min_clearance = std::isnan(m.min_clearance) ? r.clearance : std::min(m.min_clearance, r.clearance);
      if (r.clearance <= 0.0) m.collision = true;
    }
    if (log.navigation && (r.truth.eta - log.goal).norm() <= s.nav.goal_tolerance) m.goal_reached = true;
  }
  if (!airborne) m.min_altitude = rows.front().truth.eta.z();

  const double t1 = s.rmse_start >= 0.0 ? s.rmse_start : rows.front().t;
  const double t2 = s.rmse_end >= 0.0 ? s.rmse_end : rows.back().t;
  double sum = 0.0, integral = 0.0;
  std::size_t count = 0;
  const LogRecord* prev = nullptr;
  for (const auto& r : rows) {
    if (r.t < t1 || r.t > t2) continue;
    const Vector3d e = r.truth.eta - r.ref_p;
    sum += e.squaredNorm();
    ++count;
    if (prev) {
      // Exact for an error that is linear between samples.
      const Vector3d ep = prev->truth.eta - prev->ref_p;
      integral += (r.t - prev->t) * (ep.squaredNorm() + ep.dot(e) + e.squaredNorm()) / 3.0;
    }
    prev = &r;
  }
  if (count > 0) m.rmse = std::sqrt(sum / static_cast<double>(count));
  if (t2 > t1) m.rmse_integral = std::sqrt(integral) / (t2 - t1);

  for (const auto& r : rows) {
    if (r.t >= rows.back().t - kFinalWindow) m.final_error = std::max(m.final_error, (r.truth.eta - r.ref_p).norm());
  }
  const bool altitude_ok = !(m.min_altitude < 0.0);
  m.success = !m.diverged && !m.collision && altitude_ok && m.final_error < kFinalErrorBound &&
              (!log.navigation || m.goal_reached);
  return m;
}

std::string metrics_text(const RunMetrics& m) {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "1" : "0"; };
  out << "success = " << b(m.success) << "\n";
  out << "injected = " << b(m.injected) << "\n";
  out << "injection_time = " << format_double(m.injection_time) << "\n";
  out << "detected = " << b(m.detected) << "\n";
  out << "detection_time = " << format_double(m.detection_time) << "\n";
  out << "fdd_latency = " << format_double(m.fdd_latency) << "\n";
  out << "detected_rotor = " << m.detected_rotor << "\n";
  out << "detected_class = "
      << (m.detected_class < 0 ? "none" : to_string(static_cast<FaultClass>(m.detected_class))) << "\n";
  out << "false_alarm = " << b(m.false_alarm) << "\n";
  out << "missed_detection = " << b(m.missed_detection) << "\n";
  out << "min_altitude = " << format_double(m.min_altitude) << "\n";
  out << "rmse = " << format_double(m.rmse) << "\n";
  out << "rmse_integral = " << format_double(m.rmse_integral) << "\n";
  out << "max_yaw_rate = " << format_double(m.max_yaw_rate) << "\n";
  out << "final_error = " << format_double(m.final_error) << "\n";
  out << "min_clearance = " << format_double(m.min_clearance) << "\n";
  out << "collision = " << b(m.collision) << "\n";
  out << "diverged = " << b(m.diverged) << "\n";
  out << "goal_reached = " << b(m.goal_reached) << "\n";
  out << "duration = " << format_double(m.duration) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Closed loop

namespace {

// Receding-horizon planner over the revealed part of the world.
class Navigator {
 public:
  Navigator(OccupancyWorld& world, const Scenario& s, const Vector3d& goal, ComputeStats& stats,
            std::vector<double>& plan_ms)
      : world_(world), s_(s), goal_(goal), stats_(stats), plan_ms_(plan_ms) {}

  const FlatTrajectory& reference() const { return *reference_; }
  bool has_reference() const { return reference_ != nullptr; }
  bool fault() const { return fault_; }

  void set_fault() {
    if (fault_) return;
    fault_ = true;
    force_replan_ = true;
  }

  /// Senses and replans as due. Returns false if the first plan failed.
  bool update(double t, const Vector3d& position) {
    bool must = force_replan_ || !reference_;
    if (!reference_ || t + 1e-9 >= next_reveal_) {
      next_reveal_ = t + s_.nav.reveal_period;
      const std::size_t changed = world_.reveal(position, s_.nav.sensor_range);
      if (changed > 0 && reference_ && !remaining_clear(t)) must = true;
    }
    if (!reached_ && t + 1e-9 >= next_replan_) must = true;
    if (!must) return true;
    next_replan_ = t + s_.nav.replan_period;
    force_replan_ = false;
    return replan(t);
  }

 private:
  bool remaining_clear(double t) const {
    const double end = reference_->duration();
    const double need = s_.planner.safe_distance - 0.05;
    for (double tau = t; tau <= end; tau += 0.05) {
      const Vector3d p = reference_->sample(tau).p;
      if (!world_.bounds().contains(p) || world_.distance_query(p).distance < need) return false;
    }
    return true;
  }

  bool replan(double t) {
    BoundaryState head = rest_state(world_.start);
    if (reference_) {
      const FlatSample x = reference_->sample(t);
      head.col(0) = x.p;
      head.col(1) = x.v;
      head.col(2) = x.a;
    }
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    for (double scale : {1.0, 0.75, 0.5}) {
      try {
        const PathResult path = plan_toward(world_, head.col(0), goal_, scale * s_.planner.safe_distance);
        if ((path.waypoints.back() - head.col(0)).norm() < 0.2) {
          reached_ = path.reached;
          ok = reference_ != nullptr;
          break;
        }
        PlanProblem pb;
        pb.head = head;
        pb.tail = rest_state(path.waypoints.back());
        pb.world = &world_;
        pb.limits = s_.planner;
        pb.a_max = active_accel_limit(s_.planner, s_.vehicle, fault_);
        PlanOutcome out = optimize_trajectory(path.waypoints, pb);
        auto traj = std::make_shared<PiecewiseTrajectory>(std::move(out.trajectory));
        reference_ = std::make_shared<DelayedTrajectory>(traj, t);
        reached_ = path.reached;
        ok = true;
        break;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Planning) throw;
      }
    }
    const double ms = ms_since(start);
    plan_ms_.push_back(ms);
    ++stats_.plans;
    return ok;
  }

  OccupancyWorld& world_;
  const Scenario& s_;
  Vector3d goal_;
  ComputeStats& stats_;
  std::vector<double>& plan_ms_;
  std::shared_ptr<const FlatTrajectory> reference_;
  double next_reveal_ = 0.0, next_replan_ = 0.0;
  bool fault_ = false, force_replan_ = false, reached_ = false;
};

VehicleState estimate(const SensorFrame& f, const VehicleParams& p, std::optional<int> failed) {
  VehicleState x;
  x.eta = f.odom_position;
  x.q = f.odom_attitude;
  x.v = f.odom_velocity;
  x.w = f.gyro_meas;
  for (int i = 0; i < kNumRotors; ++i) x.t[i] = p.rpm_to_thrust(f.rpm_meas[i]);
  if (failed) x.t[*failed] = 0.0;
  return x;
}

void summarize(const std::vector<double>& v, double& mean, double* max) {
  if (v.empty()) return;
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  if (max) *max = *std::max_element(v.begin(), v.end());
}

}  // namespace

RunResult run_scenario(const Scenario& s) {
  s.validate();
  RunResult res;
  FlightLog& log = res.log;
  log.scenario = s.name;
  log.seed = s.seed;

  std::optional<OccupancyWorld> world;
  if (!s.world_file.empty()) world = load_world(s.world_file);
  else if (s.world) world = generate_world(*s.world);

  const Mission& m = s.mission;
  VehicleState x0;
  std::shared_ptr<const FlatTrajectory> reference;
  double takeoff_end = -1.0, nav_start = 0.0;
  std::optional<Navigator> nav;
  std::vector<double> nmpc_ms, fdd_ms, plan_ms;

  switch (m.kind) {
    case MissionKind::Hover:
      x0 = VehicleState::hover(s.vehicle, m.position);
      reference = std::make_shared<HoverTrajectory>(m.position);
      break;
    case MissionKind::Takeoff: {
      const Vector3d pad(m.position.x(), m.position.y(), 0.0);
      x0 = VehicleState::hover(s.vehicle, pad);
      auto climb = std::make_shared<TakeoffTrajectory>(pad, m.height, m.climb_speed);
      takeoff_end = m.start_time + climb->duration();
      reference = std::make_shared<DelayedTrajectory>(climb, m.start_time);
      break;
    }
    case MissionKind::Lemniscate: {
      auto lem = std::make_shared<LemniscateTrajectory>(m.center, m.size, m.speed, m.laps, m.ramp_time);
      x0 = VehicleState::hover(s.vehicle, lem->start_point());
      reference = std::make_shared<DelayedTrajectory>(lem, m.start_time);
      break;
    }
    case MissionKind::Waypoints: {
      std::vector<Vector3d> path{m.position};
      path.insert(path.end(), m.waypoints.begin(), m.waypoints.end());
      PlanProblem pb;
      pb.head = rest_state(path.front());
      pb.tail = rest_state(path.back());
      pb.limits = s.planner;
      pb.a_max = s.planner.a_max_n;
      if (world) {
        world->reveal_all();
        pb.world = &*world;
      }
      const auto start = std::chrono::steady_clock::now();
      auto traj = std::make_shared<PiecewiseTrajectory>(optimize_trajectory(path, pb).trajectory);
      plan_ms.push_back(ms_since(start));
      ++res.stats.plans;
      x0 = VehicleState::hover(s.vehicle, m.position);
      reference = std::make_shared<DelayedTrajectory>(traj, m.start_time);
      break;
    }
    case MissionKind::Navigate:
      log.navigation = true;
      log.goal = world->goal;
      {
        const Vector3d pad(world->start.x(), world->start.y(), 0.0);
        x0 = VehicleState::hover(s.vehicle, pad);
        auto climb = std::make_shared<TakeoffTrajectory>(pad, world->start.z(), m.climb_speed);
        takeoff_end = m.start_time + climb->duration();
        nav_start = takeoff_end + m.settle_time;
        reference = std::make_shared<DelayedTrajectory>(climb, m.start_time);
      }
      nav.emplace(*world, s, world->goal, res.stats, plan_ms);
      break;
  }

  Simulator sim(s.vehicle, s.sim, x0, s.failures, s.seed);
  FaultDetector fdd(s.vehicle, s.fdd, s.sim.cutoffs);
  NmpcController ctl(s.vehicle, s.nmpc, s.control_period);
  const long ticks = std::lround(s.duration / s.sim.control_dt);
  const long ratio = std::lround(s.control_period / s.sim.control_dt);
  ControlCommand cmd;
  cmd.u = x0.t;
  SensorFrame frame = sim.measure();
  SolverStats last;
  double arrived = -1.0;

  for (long k = 0; k < ticks; ++k) {
    const double t = sim.time();
    const FlightStage stage = t < takeoff_end ? FlightStage::Takeoff : FlightStage::Tracking;
    if (k % ratio == 0) {
      if (nav && t + 1e-9 >= nav_start) {
        if (fdd.faulted()) nav->set_fault();
        const bool first = !nav->has_reference();
        if (!nav->update(t, frame.odom_position) && first) fail(ErrorKind::Planning, "navigation: no initial plan");
      }
      const bool navigating = nav && nav->has_reference();
      const FlatTrajectory& ref = navigating ? nav->reference() : *reference;
      const auto refs = reference_from_trajectory(ref, t, s.nmpc, s.vehicle, ctl.failed_rotor());
      const auto start = std::chrono::steady_clock::now();
      const NmpcSolution sol = ctl.compute(estimate(frame, s.vehicle, ctl.failed_rotor()), refs);
      nmpc_ms.push_back(ms_since(start));
      cmd = sol.command;
      last = sol.stats;
    }
    frame = sim.advance(cmd);
    const auto start = std::chrono::steady_clock::now();
    fdd.update(frame, cmd.u, stage);
    fdd_ms.push_back(ms_since(start));
    if (!ctl.failed_rotor()) {
      if (const auto primary = fdd.primary()) ctl.set_failed_rotor(primary->rotor);
    }

    LogRecord r;
    r.t = sim.time();
    r.stage = static_cast<int>(stage);
    r.truth = sim.state();
    r.effectiveness = sim.effectiveness();
    r.frame = frame;
    r.command = cmd.u;
    const FlatSample ref = (nav && nav->has_reference() ? nav->reference() : *reference).sample(r.t);
    r.ref_p = ref.p;
    r.ref_v = ref.v;
    r.injected_rotor = sim.failed_rotor();
    if (const auto primary = fdd.primary()) {
      r.fdd_rotor = primary->rotor;
      r.fdd_class = static_cast<int>(primary->fault_class);
    }
    r.fdd_reports = static_cast<int>(fdd.reports().size());
    r.nmpc_kkt = last.kkt;
    r.nmpc_degraded = last.degraded ? 1 : 0;
    r.planner_fault = nav && nav->fault() ? 1 : 0;
    if (world) r.clearance = world->truth_distance(r.truth.eta);
    log.rows.push_back(r);

    const auto x = sim.state().pack();
    if (!x.allFinite() || x.head<3>().cwiseAbs().maxCoeff() > 1e3) {
      log.diverged = true;
      log.diagnostic = "state diverged at t = " + format_double(r.t);
      break;
    }
    if (sim.lifted_off() && r.truth.eta.z() < -1.0) {
      log.diagnostic = "fell below the ground plane at t = " + format_double(r.t);
      break;
    }
    if (nav && arrived < 0.0 && (r.truth.eta - world->goal).norm() <= s.nav.goal_tolerance) arrived = r.t;
    if (arrived >= 0.0 && r.t >= arrived + kFinalWindow) break;
  }
  log.injection_time = sim.first_injection_time();
  log.injected_rotor = sim.failed_rotor();
  res.metrics = compute_metrics(log, s);

  summarize(nmpc_ms, res.stats.nmpc_mean_ms, &res.stats.nmpc_max_ms);
  summarize(fdd_ms, res.stats.fdd_mean_ms, nullptr);
  summarize(plan_ms, res.stats.planner_mean_ms, &res.stats.planner_max_ms);
  res.stats.nmpc_solves = static_cast<int>(nmpc_ms.size());

  if (!s.output_dir.empty()) {
    std::filesystem::create_directories(s.output_dir);
    write_log(log, s.output_dir / "log.csv");
    std::ofstream(s.output_dir / "metrics.txt") << metrics_text(res.metrics);
    std::ofstream timing(s.output_dir / "timing.txt");
    timing << "nmpc_mean_ms = " << res.stats.nmpc_mean_ms << "\nnmpc_max_ms = " << res.stats.nmpc_max_ms
           << "\nnmpc_solves = " << res.stats.nmpc_solves << "\nfdd_mean_ms = " << res.stats.fdd_mean_ms
           << "\nplanner_mean_ms = " << res.stats.planner_mean_ms << "\nplanner_max_ms = " << res.stats.planner_max_ms
           << "\nplans = " << res.stats.plans << "\n";
    std::ofstream table(s.output_dir / "reference.csv");
    table << "t,ref_px,ref_py,ref_pz,px,py,pz\n";
    for (std::size_t i = 1; i < log.rows.size(); i += 2) {
      const auto& r = log.rows[i];
      table << format_double(r.t) << "," << format_double(r.ref_p.x()) << "," << format_double(r.ref_p.y()) << ","
            << format_double(r.ref_p.z()) << "," << format_double(r.truth.eta.x()) << ","
            << format_double(r.truth.eta.y()) << "," << format_double(r.truth.eta.z()) << "\n";
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Suites

const char* to_string(SuiteGroup g) {
  switch (g) {
    case SuiteGroup::Test1: return "test1";
    case SuiteGroup::Test2: return "test2";
    case SuiteGroup::Test3: return "test3";
    case SuiteGroup::Test4: return "test4";
    case SuiteGroup::NavIndoor: return "nav-indoor";
    case SuiteGroup::NavForest: return "nav-forest";
  }
  return "?";
}

std::vector<SuiteGroup> suite_groups(const std::string& id) {
  if (id == "tests1-4") return {SuiteGroup::Test1, SuiteGroup::Test2, SuiteGroup::Test3, SuiteGroup::Test4};
  if (id == "tests1") return {SuiteGroup::Test1};
  if (id == "tests2") return {SuiteGroup::Test2};
  if (id == "tests3") return {SuiteGroup::Test3};
  if (id == "tests4") return {SuiteGroup::Test4};
  if (id == "nav-indoor") return {SuiteGroup::NavIndoor};
  if (id == "nav-forest") return {SuiteGroup::NavForest};
  fail(ErrorKind::Config, "suite: unknown id '" + id + "'");
}

Scenario suite_scenario(SuiteGroup g, int k, std::uint64_t base_seed) {
  Scenario s;
  s.seed = base_seed + static_cast<std::uint64_t>(k);
  s.name = std::string(to_string(g)) + "-" + std::to_string(k);
  std::uint64_t rng = s.seed * 0x2545f4914f6cdd1dULL + static_cast<std::uint64_t>(g);
  FailureEvent e;
  e.rotor = k % kNumRotors;
  const bool propeller = g == SuiteGroup::Test1 || g == SuiteGroup::Test3;
  e.mode = propeller ? FailureMode::PropellerLoss : FailureMode::MotorStop;
  switch (g) {
    case SuiteGroup::Test1:
    case SuiteGroup::Test2:
      s.mission.kind = MissionKind::Lemniscate;
      e.time = 4.0 + 4.0 * uniform01(rng);
      s.duration = e.time + 8.0;
      s.rmse_start = e.time;
      break;
    case SuiteGroup::Test3:
    case SuiteGroup::Test4:
      s.mission.kind = MissionKind::Takeoff;
      s.mission.position = Vector3d::Zero();
      s.mission.start_time = 0.5;
      e.time = s.mission.start_time + 0.1 + 0.3 * uniform01(rng);
      s.duration = e.time + 8.0;
      break;
    case SuiteGroup::NavIndoor:
    case SuiteGroup::NavForest: {
      WorldSpec w;
      w.seed = s.seed;
      if (g == SuiteGroup::NavIndoor) {
        w.kind = WorldKind::Room;
        w.size = Vector3d(20.0, 10.0, 3.0);
        w.density = 0.08;
      } else {
        w.kind = WorldKind::Forest;
      }
      s.world = w;
      // The propeller is lost during the climb; the vehicle then navigates
      // on three rotors.
      s.mission.kind = MissionKind::Navigate;
      s.mission.start_time = 0.5;
      e.mode = FailureMode::PropellerLoss;
      e.time = s.mission.start_time + 0.1 + 0.3 * uniform01(rng);
      s.duration = 80.0;
      break;
    }
  }
  s.failures.events.push_back(e);
  return s;
}

bool AggregateRow::operator==(const AggregateRow& o) const {
  return group == o.group && runs == o.runs && same(success_rate, o.success_rate) &&
         same(fdd_time_mean, o.fdd_time_mean) && same(fdd_time_max, o.fdd_time_max) &&
         same(missed_detection_rate, o.missed_detection_rate) && same(false_alarm_rate, o.false_alarm_rate) &&
         same(min_altitude, o.min_altitude) && same(rmse_mean, o.rmse_mean);
}

AggregateRow aggregate(const std::string& group, const std::vector<RunResult>& runs) {
  AggregateRow row;
  row.group = group;
  row.runs = static_cast<int>(runs.size());
  if (runs.empty()) return row;
  int success = 0, missed = 0, alarms = 0, detected = 0, injected = 0;
  double fdd_sum = 0.0, rmse_sum = 0.0, nmpc_sum = 0.0;
  for (const auto& r : runs) {
    const auto& m = r.metrics;
    success += m.success;
    alarms += m.false_alarm;
    injected += m.injected;
    missed += m.missed_detection;
    if (m.detected) {
      ++detected;
      fdd_sum += m.fdd_latency;
      row.fdd_time_max = std::isnan(row.fdd_time_max) ? m.fdd_latency : std::max(row.fdd_time_max, m.fdd_latency);
    }
    if (!std::isnan(m.min_altitude)) {
      row.min_altitude = std::isnan(row.min_altitude) ? m.min_altitude : std::min(row.min_altitude, m.min_altitude);
    }
    rmse_sum += m.rmse;
    nmpc_sum += r.stats.nmpc_mean_ms;
  }
  const double n = static_cast<double>(runs.size());
  row.success_rate = 100.0 * success / n;
  row.false_alarm_rate = 100.0 * alarms / n;
  row.missed_detection_rate = injected ? 100.0 * missed / injected : 0.0;
  if (detected) row.fdd_time_mean = fdd_sum / detected;
  row.rmse_mean = rmse_sum / n;
  row.nmpc_mean_ms = nmpc_sum / n;
  return row;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, std::ostream& out) {
  out << "group,runs,sucr_pct,fdd_time_mean_s,fdd_time_max_s,mdr_pct,far_pct,min_altitude_m,rmse_mean_m\n";
  for (const auto& r : rows) {
    out << r.group << "," << r.runs << "," << format_double(r.success_rate) << "," << format_double(r.fdd_time_mean)
        << "," << format_double(r.fdd_time_max) << "," << format_double(r.missed_detection_rate) << ","
        << format_double(r.false_alarm_rate) << "," << format_double(r.min_altitude) << ","
        << format_double(r.rmse_mean) << "\n";
  }
}

std::string summary_table(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "group" << std::right << std::setw(6) << "runs" << std::setw(10) << "SucR(%)"
      << std::setw(14) << "FDD time(s)" << std::setw(9) << "MDR(%)" << std::setw(9) << "FAR(%)" << std::setw(11)
      << "MiniA(m)" << std::setw(10) << "RMSE(m)" << std::setw(12) << "NMPC(ms)" << "\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.group << std::right << std::setw(6) << r.runs << std::setw(10)
        << std::setprecision(1) << r.success_rate << std::setw(14) << std::setprecision(3) << r.fdd_time_mean
        << std::setw(9) << std::setprecision(1) << r.missed_detection_rate << std::setw(9) << r.false_alarm_rate
        << std::setw(11) << std::setprecision(3) << r.min_altitude << std::setw(10) << r.rmse_mean << std::setw(12)
        << r.nmpc_mean_ms << "\n";
  }
  return out.str();
}

SuiteResult run_suite(const std::string& suite_id, int repetitions, std::uint64_t base_seed,
                      const std::filesystem::path& out, bool write_logs) {
  if (repetitions < 1) fail(ErrorKind::Config, "suite: repetitions must be at least 1");
  const auto groups = suite_groups(suite_id);
  SuiteResult result;
  std::ofstream runs_csv;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    runs_csv.open(out / "runs.csv");
    runs_csv << "group,run,seed,rotor,injection_time,success,detected,fdd_latency,false_alarm,missed,"
                "min_altitude,rmse,rmse_integral,max_yaw_rate,final_error,min_clearance\n";
  }
  for (const SuiteGroup g : groups) {
    std::vector<RunResult> runs;
    for (int k = 0; k < repetitions; ++k) {
      Scenario s = suite_scenario(g, k, base_seed);
      if (!out.empty() && write_logs) s.output_dir = out / to_string(g) / ("run_" + std::to_string(k));
      try {
        runs.push_back(run_scenario(s));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) {
          fail(ErrorKind::Config, std::string("suite ") + to_string(g) + " run " + std::to_string(k) + ": " + e.what());
        }
        throw;
      }
      const auto& m = runs.back().metrics;
      if (runs_csv) {
        runs_csv << to_string(g) << "," << k << "," << s.seed << "," << s.failures.events.front().rotor << ","
                 << format_double(m.injection_time) << "," << m.success << "," << m.detected << ","
                 << format_double(m.fdd_latency) << "," << m.false_alarm << "," << m.missed_detection << ","
                 << format_double(m.min_altitude) << "," << format_double(m.rmse) << ","
                 << format_double(m.rmse_integral) << "," << format_double(m.max_yaw_rate) << ","
                 << format_double(m.final_error) << "," << format_double(m.min_clearance) << "\n";
      }
    }
    result.rows.push_back(aggregate(to_string(g), runs));
    std::vector<RunMetrics> metrics;
    for (const auto& r : runs) metrics.push_back(r.metrics);
    result.runs.push_back(std::move(metrics));
  }
  if (!out.empty()) {
    std::ofstream agg(out / "aggregate.csv");
    write_aggregate_csv(result.rows, agg);
    std::ofstream(out / "summary.txt") << summary_table(result.rows);
  }
  return result;
}

}  // namespace rfa
