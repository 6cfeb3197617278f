#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "rfa/error.hpp"
#include "rfa/world.hpp"

using namespace rfa;

namespace {

OccupancyWorld box_world(double side, double res) {
  return OccupancyWorld(Aabb{Vector3d::Zero(), Vector3d::Constant(side)}, res);
}

/// Nearest blocked cube surface or bounds face by scanning every cell.
double brute_distance(const OccupancyWorld& w, const Vector3d& p) {
  const double res = w.resolution();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    best = std::min({best, p[i] - w.bounds().min[i], w.bounds().max[i] - p[i]});
  }
  const bool inside = w.blocked(w.cell_at(p));
  double nearest_free = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < w.cell_count(); ++k) {
    const Vector3i c = w.cell_of(k);
    const Vector3d lo = w.bounds().min + c.cast<double>() * res;
    const Vector3d q = p.cwiseMax(lo).cwiseMin(lo + Vector3d::Constant(res));
    const double d = (p - q).norm();
    if (w.blocked(c)) best = std::min(best, d);
    else nearest_free = std::min(nearest_free, d);
  }
  return inside ? -nearest_free : best;
}

/// Plain Dijkstra over the same traversability rule.
double brute_path_cost(const OccupancyWorld& w, const Vector3i& s, const Vector3i& g, double clearance) {
  const std::size_t n = w.cell_count();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::set<std::pair<double, std::size_t>> queue;
  dist[w.index(s)] = 0.0;
  queue.insert({0.0, w.index(s)});
  while (!queue.empty()) {
    const auto [d, i] = *queue.begin();
    queue.erase(queue.begin());
    const Vector3i c = w.cell_of(i);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Vector3i nb = c + Vector3i(dx, dy, dz);
          if (nb == c || !w.in_grid(nb) || w.center_clearance(nb) < clearance) continue;
          const double nd = d + w.resolution() * Vector3d(dx, dy, dz).norm();
          const std::size_t ni = w.index(nb);
          if (nd < dist[ni]) {
            queue.erase({dist[ni], ni});
            dist[ni] = nd;
            queue.insert({nd, ni});
          }
        }
  }
  return dist[w.index(g)];
}

void add_random_blocks(OccupancyWorld& w, std::mt19937_64& rng, double fraction) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < w.cell_count(); ++k) {
    if (u(rng) < fraction) w.set_truth(w.cell_of(k), true);
  }
}

}  // namespace

TEST_CASE("empty world has no occupied cells") {
  WorldSpec spec;
  spec.kind = WorldKind::Empty;
  spec.size = Vector3d(10.0, 6.0, 3.0);
  const OccupancyWorld w = generate_world(spec);
  CHECK(w.occupied_truth_count() == 0);
  CHECK(w.dims() == Vector3i(100, 60, 30));
  CHECK(w.known_count(CellState::Unknown) == w.cell_count());
}

TEST_CASE("forest generation is deterministic and keeps passages") {
  WorldSpec spec;
  spec.seed = 7;
  const OccupancyWorld a = generate_world(spec);
  const OccupancyWorld b = generate_world(spec);
  REQUIRE(a.obstacles.size() == b.obstacles.size());
  CHECK(a.obstacles.size() > 20);
  CHECK(a.occupied_truth_count() == b.occupied_truth_count());
  bool same = true;
  for (std::size_t k = 0; k < a.cell_count(); ++k) same = same && a.truth(a.cell_of(k)) == b.truth(b.cell_of(k));
  CHECK(same);
  spec.seed = 8;
  CHECK(generate_world(spec).occupied_truth_count() != a.occupied_truth_count());

  for (std::size_t i = 0; i < a.obstacles.size(); ++i) {
    const auto& o = a.obstacles[i];
    CHECK(o.shape == Obstacle::Shape::Cylinder);
    CHECK(o.size.x() >= 0.1);
    CHECK(o.size.x() <= 0.4);
    for (std::size_t j = i + 1; j < a.obstacles.size(); ++j) {
      const auto& p = a.obstacles[j];
      CHECK((o.center.head<2>() - p.center.head<2>()).norm() - o.size.x() - p.size.x() >= 1.0);
    }
  }
  OccupancyWorld probe = a;
  probe.reveal_all();
  CHECK_NOTHROW(plan_path(probe, a.start, a.goal, 2.0 * spec.safe_distance));
}

TEST_CASE("corridor and room worlds are feasible") {
  for (WorldKind kind : {WorldKind::Corridor, WorldKind::Room}) {
    WorldSpec spec;
    spec.kind = kind;
    spec.size = Vector3d(12.0, 6.0, 3.0);
    spec.density = kind == WorldKind::Corridor ? 0.25 : 0.1;
    spec.seed = 3;
    OccupancyWorld w = generate_world(spec);
    CHECK(w.occupied_truth_count() > 0);
    w.reveal_all();
    CHECK_NOTHROW(plan_path(w, w.start, w.goal, 0.6));
  }
  WorldSpec tight;
  tight.kind = WorldKind::Forest;
  tight.size = Vector3d(4.0, 2.0, 3.0);
  tight.density = 5.0;
  tight.max_retries = 3;
  CHECK_THROWS_AS(generate_world(tight), Error);
}

TEST_CASE("reveal copies truth, is idempotent and respects occlusion") {
  OccupancyWorld w = box_world(2.0, 0.1);
  w.set_truth(Vector3i(10, 10, 10), true);
  w.update_truth_distance();
  const Vector3d eye = w.center(Vector3i(4, 10, 10));

  const std::size_t first = w.reveal(eye, 0.85);
  CHECK(first > 0);
  CHECK(w.reveal(eye, 0.85) == 0);
  CHECK(w.known(Vector3i(10, 10, 10)) == CellState::Occupied);
  CHECK(w.known(Vector3i(9, 10, 10)) == CellState::Free);
  CHECK(w.known(Vector3i(11, 10, 10)) == CellState::Unknown);  // directly behind the cell
  CHECK(w.known(Vector3i(12, 10, 10)) == CellState::Unknown);
  CHECK(w.known(Vector3i(4, 19, 10)) == CellState::Unknown);   // out of range

  const std::size_t known_before = w.cell_count() - w.known_count(CellState::Unknown);
  w.reveal(w.center(Vector3i(15, 15, 15)), 0.5);
  CHECK(w.cell_count() - w.known_count(CellState::Unknown) >= known_before);
  CHECK(w.known(Vector3i(9, 10, 10)) == CellState::Free);

  w.reveal(eye, 10.0);
  w.reveal(w.center(Vector3i(16, 10, 10)), 10.0);
  for (std::size_t k = 0; k < w.cell_count(); ++k) {
    const Vector3i c = w.cell_of(k);
    CHECK((w.known(c) == CellState::Occupied) == w.truth(c));
  }
  CHECK_THROWS_AS(w.reveal(eye, 0.0), Error);
}

TEST_CASE("distance query: bounds, face-on cell and inside") {
  OccupancyWorld w = box_world(3.0, 0.1);
  w.reveal_all();
  const Vector3d p(1.05, 1.25, 1.45);
  const auto q = w.distance_query(p);
  CHECK(q.distance == doctest::Approx(1.05));
  CHECK(q.normal.isApprox(Vector3d::UnitX()));

  const Vector3i cell(20, 12, 14);
  w.set_truth(cell, true);
  w.reveal_all();
  const Vector3d face = w.center(cell) - Vector3d(1.0, 0.0, 0.0);
  const auto f = w.distance_query(face);
  CHECK(f.distance == doctest::Approx(1.0 - 0.05).epsilon(1e-12));
  CHECK(f.normal.isApprox(-Vector3d::UnitX()));
  CHECK((face - f.surface).dot(f.normal) == doctest::Approx(f.distance));

  const Vector3d in = w.center(cell) + Vector3d(0.03, 0.0, 0.0);
  const auto i = w.distance_query(in);
  CHECK(i.distance <= 0.0);
  CHECK(i.distance == doctest::Approx(-0.02));
  CHECK(i.normal.isApprox(Vector3d::UnitX()));
  CHECK_FALSE(w.blocked(w.cell_at(in + (std::abs(i.distance) + 1e-6) * i.normal)));

  CHECK_THROWS_AS(w.distance_query(Vector3d(-0.1, 1.0, 1.0)), Error);
  const auto out = w.distance_query_unchecked(Vector3d(-0.1, 1.0, 1.0));
  CHECK(out.distance == doctest::Approx(-0.1));
}

TEST_CASE("unknown space counts as occupied") {
  OccupancyWorld w = box_world(2.0, 0.1);
  CHECK(w.distance_query(Vector3d(1.0, 1.0, 1.0)).distance <= 0.0);
  CHECK_THROWS_AS(plan_path(w, Vector3d(0.5, 0.5, 0.5), Vector3d(1.5, 1.5, 1.5), 0.1), Error);
  w.reveal(Vector3d(1.0, 1.0, 1.0), 0.5);
  CHECK(w.distance_query(Vector3d(1.0, 1.0, 1.0)).distance == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("distance query agrees with brute force on random points") {
  std::mt19937_64 rng(11);
  OccupancyWorld w = box_world(2.0, 0.1);
  add_random_blocks(w, rng, 0.01);
  w.reveal(Vector3d(1.0, 1.0, 1.0), 0.8);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const double diagonal = std::sqrt(3.0) * w.resolution();
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Vector3d p(u(rng), u(rng), u(rng));
    const auto q = w.distance_query(p);
    const double ref = brute_distance(w, p);
    worst = std::max(worst, std::abs(q.distance - ref));
    CHECK(q.normal.norm() == doctest::Approx(1.0));
    CHECK((p - q.surface).dot(q.normal) == doctest::Approx(q.distance).epsilon(1e-9));
  }
  CHECK(worst <= diagonal);
  MESSAGE("max distance error " << worst);
}

TEST_CASE("plan_path: straight line in an empty world") {
  OccupancyWorld w = box_world(4.0, 0.1);
  w.reveal_all();
  const auto r = plan_path(w, Vector3d(0.55, 2.0, 2.0), Vector3d(3.45, 2.0, 2.0), 0.3);
  REQUIRE(r.waypoints.size() == 2);
  CHECK(r.waypoints.front().isApprox(Vector3d(0.55, 2.0, 2.0)));
  CHECK(r.waypoints.back().isApprox(Vector3d(3.45, 2.0, 2.0)));
  CHECK(r.raw_cost == doctest::Approx(2.9));
}

TEST_CASE("plan_path routes through a gap optimally") {
  OccupancyWorld w = box_world(2.0, 0.1);  // 20^3 cells
  for (int j = 0; j < 20; ++j)
    for (int k = 0; k < 20; ++k)
      if (!(j >= 13 && j <= 17 && k >= 8 && k <= 12)) w.set_truth(Vector3i(10, j, k), true);
  w.reveal_all();
  const Vector3d s = w.center(Vector3i(3, 5, 10)), g = w.center(Vector3i(17, 5, 10));
  const auto r = plan_path(w, s, g, 0.1);
  bool through_gap = false;
  for (const auto& p : r.raw) {
    const Vector3i c = w.cell_at(p);
    if (c.x() == 10) through_gap = c.y() >= 13 && c.y() <= 17;
    CHECK_FALSE(w.blocked(c));
  }
  CHECK(through_gap);
  CHECK(r.raw_cost >= (g - s).norm());
  CHECK(r.raw_cost == doctest::Approx(brute_path_cost(w, w.cell_at(s), w.cell_at(g), 0.1)).epsilon(1e-12));
  for (std::size_t i = 0; i + 1 < r.waypoints.size(); ++i) {
    CHECK(segment_clear(w, r.waypoints[i], r.waypoints[i + 1], 0.1));
  }
  CHECK_THROWS_AS(plan_path(w, s, w.center(Vector3i(10, 2, 2)), 0.1), Error);
}

TEST_CASE("A* cost equals exhaustive search on random grids") {
  std::mt19937_64 rng(5);
  int compared = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const double side = trial % 2 == 0 ? 2.0 : 3.0;
    OccupancyWorld w = box_world(side, 0.1);
    add_random_blocks(w, rng, 0.15 + 0.02 * (trial % 4));
    w.reveal_all();
    const Vector3i s(1, 1, 1), g = w.dims() - Vector3i::Constant(2);
    w.set_truth(s, false);
    w.set_truth(g, false);
    w.reveal_all();
    const double ref = brute_path_cost(w, s, g, 0.0);
    if (!std::isfinite(ref)) {
      CHECK_THROWS_AS(plan_path(w, w.center(s), w.center(g), 0.0), Error);
      continue;
    }
    const auto r = plan_path(w, w.center(s), w.center(g), 0.0);
    CHECK(r.raw_cost == doctest::Approx(ref).epsilon(1e-12));
    ++compared;
  }
  CHECK(compared >= 6);
}

TEST_CASE("world files round-trip and points import") {
  WorldSpec spec;
  spec.kind = WorldKind::Room;
  spec.size = Vector3d(6.0, 5.0, 2.5);
  spec.density = 0.15;
  spec.seed = 21;
  const OccupancyWorld a = generate_world(spec);
  const auto dir = std::filesystem::temp_directory_path() / "rfa_world_test";
  std::filesystem::create_directories(dir);
  save_world(a, dir / "room.world");
  const OccupancyWorld b = load_world(dir / "room.world");
  CHECK(b.dims() == a.dims());
  CHECK(b.kind == WorldKind::Room);
  CHECK(b.seed == 21);
  CHECK(b.start.isApprox(a.start));
  CHECK(b.obstacles.size() == a.obstacles.size());
  bool same = true;
  for (std::size_t k = 0; k < a.cell_count(); ++k) same = same && a.truth(a.cell_of(k)) == b.truth(b.cell_of(k));
  CHECK(same);

  {
    std::ofstream pts(dir / "points.txt");
    pts << "# x y z\n1.0 1.0 1.0\n1.05 1.0 1.0\n2.0 0.5 0.2\n";
  }
  OccupancyWorld imported = import_points(dir / "points.txt", 0.1);
  CHECK(imported.occupied_truth_count() == 2);
  CHECK(imported.truth(imported.cell_at(Vector3d(2.0, 0.5, 0.2))));
  CHECK(imported.truth_distance(Vector3d(2.0, 0.5, 0.2)) == 0.0);
  {
    std::ofstream bad(dir / "bad.txt");
    bad << "1.0 2.0\n";
  }
  CHECK_THROWS_AS(import_points(dir / "bad.txt", 0.1), Error);
  std::filesystem::remove_all(dir);
}
