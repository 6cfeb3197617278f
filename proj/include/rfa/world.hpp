#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rfa {

using Eigen::Vector3d;
using Eigen::Vector3i;

enum class CellState : std::uint8_t { Unknown = 0, Free = 1, Occupied = 2 };

enum class WorldKind { Empty, Corridor, Forest, Room, Imported };

const char* to_string(WorldKind kind);
WorldKind world_kind_from_string(const std::string& text);

struct Aabb {
  Vector3d min = Vector3d::Zero();
  Vector3d max = Vector3d::Zero();

  bool contains(const Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vector3d size() const { return max - min; }
};

/// Generation primitive. Cylinders are vertical; `size` holds (radius, -, -).
struct Obstacle {
  enum class Shape { Cylinder, Box };
  Shape shape = Shape::Box;
  Vector3d center = Vector3d::Zero();
  Vector3d size = Vector3d::Zero();  // full extents for boxes
  double z_min = 0.0, z_max = 0.0;
};

struct DistanceQuery {
  double distance = 0.0;                       // d_o, negative inside an obstacle
  Vector3d surface = Vector3d::Zero();         // s
  Vector3d normal = Vector3d::UnitX();         // v, toward free space
};

/// Uniform occupancy grid with a ground-truth layer and a tri-state known
/// layer. Distance queries and path search read the known layer only, with
/// unknown cells treated as occupied.
class OccupancyWorld {
 public:
  OccupancyWorld() = default;
  OccupancyWorld(const Aabb& bounds, double resolution);

  const Aabb& bounds() const { return bounds_; }
  double resolution() const { return res_; }
  const Vector3i& dims() const { return dims_; }
  std::size_t cell_count() const { return truth_.size(); }

  WorldKind kind = WorldKind::Empty;
  std::uint64_t seed = 0;
  Vector3d start = Vector3d::Zero();
  Vector3d goal = Vector3d::Zero();
  std::vector<Obstacle> obstacles;

  std::size_t index(const Vector3i& c) const {
    return static_cast<std::size_t>(c.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(c.y()) + static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(c.z()));
  }
  Vector3i cell_of(std::size_t index) const;
  /// Cell containing `p` (clamped to the grid).
  Vector3i cell_at(const Vector3d& p) const;
  Vector3d center(const Vector3i& c) const;
  bool in_grid(const Vector3i& c) const {
    return (c.array() >= 0).all() && (c.array() < dims_.array()).all();
  }

  bool truth(const Vector3i& c) const { return truth_[index(c)] != 0; }
  void set_truth(const Vector3i& c, bool occupied) { truth_[index(c)] = occupied ? 1 : 0; }
  CellState known(const Vector3i& c) const { return known_[index(c)]; }
  bool blocked(const Vector3i& c) const { return known_[index(c)] != CellState::Free; }
  std::size_t occupied_truth_count() const;
  std::size_t known_count(CellState state) const;

  /// Copies truth into the known layer for every cell within `radius` of
  /// `position` that is visible along a straight line. Returns the number of
  /// cells whose known state changed. Known cells never revert to unknown.
  std::size_t reveal(const Vector3d& position, double radius);
  /// known = truth everywhere.
  void reveal_all();

  /// Nearest blocked surface (or bounds face) from `p`. Throws a Query error
  /// outside the bounds.
  DistanceQuery distance_query(const Vector3d& p) const;
  /// Same, but outside the bounds returns the negative distance to the box.
  DistanceQuery distance_query_unchecked(const Vector3d& p) const;
  /// Distance from the centre of cell `c` to the nearest blocked cell centre
  /// (or bounds face).
  double center_clearance(const Vector3i& c) const;
  /// Distance from `p` to the nearest truth-occupied cell surface (bounds
  /// ignored), zero inside. Requires update_truth_distance() after the last
  /// truth edit.
  double truth_distance(const Vector3d& p) const;

  /// Recomputes the known-layer distance transforms. reveal() and
  /// reveal_all() call this themselves.
  void update_distance();
  void update_truth_distance();

 private:
  struct Field {
    std::vector<float> d2;             // squared centre distance, cells^2
    std::vector<std::int32_t> site;    // nearest site index, -1 if none
  };
  template <class IsSite>
  Field build_field(IsSite is_site) const;
  /// Exact distance from `p` to the nearest site cube among the sites
  /// recorded around the cell of `p`. Returns false if there is no site.
  bool nearest_site_box(const Field& f, const Vector3d& p, double& dist, Vector3d& surface,
                        Vector3i& site_cell) const;
  double bounds_distance(const Vector3d& p, Vector3d& surface, Vector3d& normal) const;

  Aabb bounds_;
  double res_ = 0.1;
  Vector3i dims_ = Vector3i::Zero();
  std::vector<std::uint8_t> truth_;
  std::vector<CellState> known_;
  // Squared centre distance (cells^2) to the nearest blocked / free cell and
  // the index of that cell.
  Field blocked_field_, free_field_, truth_field_;
};

struct WorldSpec {
  WorldKind kind = WorldKind::Forest;
  Vector3d size{30.0, 20.0, 3.0};
  double resolution = 0.1;
  /// Forest: trees per m^2. Room: boxes per m^2 of floor. Corridor: walls per m.
  double density = 0.08;
  /// Minimum free gap between obstacle surfaces.
  double min_passage = 1.0;
  double safe_distance = 0.3;
  double flight_height = 1.0;
  std::uint64_t seed = 0;
  int max_retries = 20;

  void validate() const;
};

/// Deterministic for a given spec. Fills `start` and `goal` with a pair joined
/// by a ground-truth path of clearance at least 2 safe_distance. Known layer
/// starts unknown.
OccupancyWorld generate_world(const WorldSpec& spec);

/// Rasterizes `x y z` points at `resolution`; bounds are the point bounding
/// box padded by `margin` unless given.
OccupancyWorld import_points(const std::filesystem::path& path, double resolution, double margin = 1.0,
                             std::optional<Aabb> bounds = std::nullopt);

/// Header plus run-length-encoded truth layer.
void save_world(const OccupancyWorld& world, const std::filesystem::path& path);
OccupancyWorld load_world(const std::filesystem::path& path);

struct PathResult {
  std::vector<Vector3d> raw;        // cell centres from start to goal
  std::vector<Vector3d> waypoints;  // line-of-sight pruned, exact start and goal
  double raw_cost = 0.0;            // metres along the raw cell path
  std::size_t expanded = 0;
  bool reached = true;              // false when plan_toward stopped short
};

/// 26-connected A* over cells whose centre clearance is at least `clearance`.
/// Throws a Planning error if no path exists.
PathResult plan_path(const OccupancyWorld& world, const Vector3d& start, const Vector3d& goal, double clearance);

/// Like plan_path, but an unreachable or untraversable goal yields the path to
/// the reachable cell closest to it, with `reached` false.
PathResult plan_toward(const OccupancyWorld& world, const Vector3d& start, const Vector3d& goal, double clearance);

/// True if every cell touched by the segment is traversable at `clearance`.
bool segment_clear(const OccupancyWorld& world, const Vector3d& a, const Vector3d& b, double clearance);

}  // namespace rfa
