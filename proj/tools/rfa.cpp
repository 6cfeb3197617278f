#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rfa/config.hpp"
#include "rfa/error.hpp"
#include "rfa/harness.hpp"
#include "rfa/traj_opt.hpp"
#include "rfa/world.hpp"

namespace {

constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

Eigen::Vector3d parse_point(const std::string& text, const std::string& name) {
  std::string t = text;
  for (char& c : t) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(t);
  Eigen::Vector3d p;
  if (!(in >> p.x() >> p.y() >> p.z())) rfa::fail(rfa::ErrorKind::Config, name + ": expected x,y,z");
  std::string rest;
  if (in >> rest) rfa::fail(rfa::ErrorKind::Config, name + ": expected x,y,z");
  return p;
}

int simulate(const std::string& scenario_path, std::optional<std::uint64_t> seed, const std::string& out) {
  rfa::Scenario s = rfa::Scenario::load(scenario_path);
  if (seed) {
    s.seed = *seed;
    if (s.world) s.world->seed = *seed;
  }
  if (!out.empty()) s.output_dir = out;
  const auto r = rfa::run_scenario(s);
  std::cout << rfa::metrics_text(r.metrics);
  std::cout << "nmpc_mean_ms = " << r.stats.nmpc_mean_ms << "  (informational)\n";
  if (!r.log.diagnostic.empty()) std::cout << "diagnostic: " << r.log.diagnostic << "\n";
  return r.metrics.success ? 0 : kRunFailure;
}

int plan(const std::string& world_path, const std::string& start, const std::string& goal, bool fault,
         const std::string& config_path, const std::string& out) {
  rfa::VehicleParams vehicle;
  rfa::PlannerLimits limits;
  if (!config_path.empty()) {
    const auto file = rfa::KeyValueFile::load(config_path);
    vehicle = rfa::VehicleParams::from_file(file, "vehicle.");
    limits = rfa::PlannerLimits::from_file(file, "planner.");
    file.check_all_consumed();
  }
  limits.validate(vehicle);
  rfa::OccupancyWorld world = rfa::load_world(world_path);
  world.reveal_all();
  const Eigen::Vector3d a = parse_point(start, "--start"), b = parse_point(goal, "--goal");
  const auto path = rfa::plan_path(world, a, b, limits.safe_distance);
  rfa::PlanProblem pb;
  pb.head = rfa::rest_state(a);
  pb.tail = rfa::rest_state(b);
  pb.world = &world;
  pb.limits = limits;
  pb.a_max = rfa::active_accel_limit(limits, vehicle, fault);
  const auto outcome = rfa::optimize_trajectory(path.waypoints, pb);
  std::cout << "segments = " << outcome.trajectory.segments() << "\n"
            << "duration = " << outcome.trajectory.duration() << "\n"
            << "a_max = " << pb.a_max << "\n"
            << "max_speed = " << outcome.check.max_speed << "\n"
            << "max_accel = " << outcome.check.max_accel << "\n"
            << "max_jerk = " << outcome.check.max_jerk << "\n"
            << "min_clearance = " << outcome.check.min_clearance << "\n"
            << "iterations = " << outcome.iterations << "\n"
            << "escalated = " << outcome.escalated << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    rfa::write_trajectory_table(outcome.trajectory, std::filesystem::path(out) / "trajectory.csv");
    rfa::write_trajectory_segments(outcome.trajectory, std::filesystem::path(out) / "segments.txt");
    std::ofstream wp(std::filesystem::path(out) / "path.csv");
    wp << "x,y,z\n";
    for (const auto& p : path.waypoints) wp << p.x() << "," << p.y() << "," << p.z() << "\n";
  }
  return 0;
}

int generate(const std::string& kind, std::uint64_t seed, const std::string& size, double density,
             const std::string& out) {
  rfa::WorldSpec spec;
  spec.kind = rfa::world_kind_from_string(kind);
  spec.seed = seed;
  if (!size.empty()) spec.size = parse_point(size, "--size");
  if (density > 0.0) spec.density = density;
  const auto world = rfa::generate_world(spec);
  rfa::save_world(world, out);
  std::cout << "start = " << world.start.transpose() << "\ngoal = " << world.goal.transpose()
            << "\nobstacles = " << world.obstacles.size() << "\n";
  return 0;
}

int benchmark(const std::string& suite, int reps, std::uint64_t seed, const std::string& out, bool logs) {
  const auto result = rfa::run_suite(suite, reps, seed, out, logs);
  std::cout << rfa::summary_table(result.rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotor-failure flight stack: simulation, planning and benchmarks"};
  app.require_subcommand(1);

  std::string scenario, out, world, start, goal, config, suite = "tests1-4", kind = "forest", size;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> sim_seed;
  int reps = 20;
  bool fault = false, logs = false;
  double density = 0.0;

  auto* sim = app.add_subcommand("simulate", "Run one scenario");
  sim->add_option("--scenario", scenario, "Scenario file")->required();
  sim->add_option("--seed", sim_seed, "Override the scenario seed");
  sim->add_option("--out", out, "Output directory");

  auto* pl = app.add_subcommand("plan", "Plan a trajectory in a world file");
  pl->add_option("--world", world, "World file")->required();
  pl->add_option("--start", start, "x,y,z")->required();
  pl->add_option("--goal", goal, "x,y,z")->required();
  pl->add_flag("--fault", fault, "Use the post-failure acceleration budget");
  pl->add_option("--config", config, "Vehicle and planner keys");
  pl->add_option("--out", out, "Output directory for trajectory tables");

  auto* gen = app.add_subcommand("generate-world", "Generate and save a world");
  gen->add_option("--kind", kind, "forest, room, corridor or empty");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--size", size, "x,y,z in metres");
  gen->add_option("--density", density, "Obstacle density");
  gen->add_option("--out", out, "World file")->required();

  auto* bench = app.add_subcommand("benchmark", "Run a benchmark suite");
  bench->add_option("--suite", suite, "tests1-4, tests1..tests4, nav-indoor or nav-forest");
  bench->add_option("--reps", reps, "Repetitions per group");
  bench->add_option("--seed", seed, "Base seed; run k uses seed + k");
  bench->add_option("--out", out, "Output directory");
  bench->add_flag("--logs", logs, "Write every run's log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*sim) return simulate(scenario, sim_seed, out);
    if (*pl) return plan(world, start, goal, fault, config, out);
    if (*gen) return generate(kind, seed, size, density, out);
    if (*bench) return benchmark(suite, reps, seed, out, logs);
  } catch (const rfa::Error& e) {
    std::cerr << "error (" << rfa::to_string(e.kind()) << "): " << e.what() << "\n";
    const bool config_like = e.kind() == rfa::ErrorKind::Config || e.kind() == rfa::ErrorKind::InvalidInput ||
                             e.kind() == rfa::ErrorKind::LogFormat;
    return config_like ? kConfigError : kRunFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailure;
  }
  return 0;
}
