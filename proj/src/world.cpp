#include "rfa/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <random>
#include <sstream>

#include "rfa/config.hpp"
#include "rfa/error.hpp"

namespace rfa {

const char* to_string(WorldKind kind) {
  switch (kind) {
    case WorldKind::Empty: return "empty";
    case WorldKind::Corridor: return "corridor";
    case WorldKind::Forest: return "forest";
    case WorldKind::Room: return "room";
    case WorldKind::Imported: return "imported";
  }
  return "unknown";
}

WorldKind world_kind_from_string(const std::string& text) {
  for (WorldKind k : {WorldKind::Empty, WorldKind::Corridor, WorldKind::Forest, WorldKind::Room, WorldKind::Imported}) {
    if (text == to_string(k)) return k;
  }
  fail(ErrorKind::Config, "unknown world kind '" + text + "'");
}

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

/// Lower envelope of parabolas (q - p)^2 + g(p) over the finite entries of g.
void distance_1d(const std::vector<double>& g, int n, std::vector<double>& d, std::vector<int>& arg,
                 std::vector<int>& v, std::vector<double>& z) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(g[static_cast<std::size_t>(q)])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((g[static_cast<std::size_t>(q)] + double(q) * q) - (g[static_cast<std::size_t>(p)] + double(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    std::fill(d.begin(), d.begin() + n, std::numeric_limits<double>::infinity());
    std::fill(arg.begin(), arg.begin() + n, -1);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = double(q - p) * (q - p) + g[static_cast<std::size_t>(p)];
    arg[static_cast<std::size_t>(q)] = p;
  }
}

/// Visits the grid cells crossed by the segment a-b in order until `fn`
/// returns false. Returns false in that case.
template <class Fn>
bool traverse(const OccupancyWorld& w, const Vector3d& a, const Vector3d& b, Fn fn) {
  const Vector3d ua = (a - w.bounds().min) / w.resolution();
  const Vector3d ub = (b - w.bounds().min) / w.resolution();
  Vector3i c = w.cell_at(a);
  const Vector3i end = w.cell_at(b);
  const Vector3d d = ub - ua;
  Vector3i step;
  Vector3d t_max, t_delta;
  for (int i = 0; i < 3; ++i) {
    if (d[i] > 0.0) {
      step[i] = 1;
      t_max[i] = (c[i] + 1 - ua[i]) / d[i];
      t_delta[i] = 1.0 / d[i];
    } else if (d[i] < 0.0) {
      step[i] = -1;
      t_max[i] = (c[i] - ua[i]) / d[i];
      t_delta[i] = -1.0 / d[i];
    } else {
      step[i] = 0;
      t_max[i] = std::numeric_limits<double>::infinity();
      t_delta[i] = std::numeric_limits<double>::infinity();
    }
  }
  const int max_steps = (end - c).cwiseAbs().sum() + 3;
  for (int n = 0; n <= max_steps; ++n) {
    if (!fn(c)) return false;
    if (c == end) break;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > 1.0) break;
    c[axis] += step[axis];
    if (!w.in_grid(c)) break;
    t_max[axis] += t_delta[axis];
  }
  return true;
}

std::uint64_t mix_seed(std::uint64_t seed, int attempt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(attempt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

bool inside(const Obstacle& o, const Vector3d& p) {
  if (p.z() < o.z_min || p.z() > o.z_max) return false;
  if (o.shape == Obstacle::Shape::Cylinder) {
    return (p.head<2>() - o.center.head<2>()).squaredNorm() <= o.size.x() * o.size.x();
  }
  return ((p - o.center).cwiseAbs().head<2>().array() <= 0.5 * o.size.head<2>().array()).all();
}

void rasterize(OccupancyWorld& w, const Obstacle& o) {
  Vector3d lo, hi;
  if (o.shape == Obstacle::Shape::Cylinder) {
    lo << o.center.x() - o.size.x(), o.center.y() - o.size.x(), o.z_min;
    hi << o.center.x() + o.size.x(), o.center.y() + o.size.x(), o.z_max;
  } else {
    lo << o.center.head<2>() - 0.5 * o.size.head<2>(), o.z_min;
    hi << o.center.head<2>() + 0.5 * o.size.head<2>(), o.z_max;
  }
  const Vector3i a = w.cell_at(lo), b = w.cell_at(hi);
  for (int k = a.z(); k <= b.z(); ++k) {
    for (int j = a.y(); j <= b.y(); ++j) {
      for (int i = a.x(); i <= b.x(); ++i) {
        const Vector3i c(i, j, k);
        if (inside(o, w.center(c))) w.set_truth(c, true);
      }
    }
  }
}

/// Horizontal gap between two obstacle footprints (boxes approximated by
/// their circumscribed circle for the spacing test).
double footprint_gap(const Obstacle& a, const Obstacle& b) {
  auto radius = [](const Obstacle& o) {
    return o.shape == Obstacle::Shape::Cylinder ? o.size.x() : 0.5 * o.size.head<2>().norm();
  };
  return (a.center.head<2>() - b.center.head<2>()).norm() - radius(a) - radius(b);
}

bool place_obstacles(const WorldSpec& spec, std::mt19937_64& rng, const Vector3d& start, const Vector3d& goal,
                     std::vector<Obstacle>& out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vector3d& size = spec.size;
  const double keep_out = 2.0 * spec.safe_distance + 0.5;
  switch (spec.kind) {
    case WorldKind::Empty:
    case WorldKind::Imported:
      return true;
    case WorldKind::Forest:
    case WorldKind::Room: {
      const bool forest = spec.kind == WorldKind::Forest;
      const int target = static_cast<int>(std::lround(spec.density * size.x() * size.y()));
      const int attempts = 50 * std::max(target, 1);
      for (int a = 0; a < attempts && static_cast<int>(out.size()) < target; ++a) {
        Obstacle o;
        if (forest) {
          o.shape = Obstacle::Shape::Cylinder;
          o.size = Vector3d(0.1 + 0.3 * unit(rng), 0.0, 0.0);
          o.z_min = 0.0;
          o.z_max = size.z();
        } else {
          o.shape = Obstacle::Shape::Box;
          o.size = Vector3d(0.4 + 0.8 * unit(rng), 0.4 + 0.8 * unit(rng), 0.5 + 2.0 * unit(rng));
          o.z_min = 0.0;
          o.z_max = std::min(o.size.z(), size.z());
        }
        o.center = Vector3d(size.x() * unit(rng), size.y() * unit(rng), 0.5 * (o.z_min + o.z_max));
        Obstacle probe_s, probe_g;
        probe_s.shape = probe_g.shape = Obstacle::Shape::Cylinder;
        probe_s.center = start;
        probe_g.center = goal;
        if (footprint_gap(o, probe_s) < keep_out || footprint_gap(o, probe_g) < keep_out) continue;
        bool ok = true;
        for (const auto& other : out) {
          if (footprint_gap(o, other) < spec.min_passage) {
            ok = false;
            break;
          }
        }
        if (ok) out.push_back(o);
      }
      return static_cast<int>(out.size()) == target;
    }
    case WorldKind::Corridor: {
      const int walls = std::max(1, static_cast<int>(std::lround(spec.density * size.x())));
      const double x0 = start.x() + keep_out, x1 = goal.x() - keep_out;
      if (x1 <= x0) return false;
      const double gap_min = std::max(spec.min_passage, 4.0 * spec.safe_distance + 0.2);
      for (int i = 0; i < walls; ++i) {
        const double x = x0 + (x1 - x0) * (i + 0.25 + 0.5 * unit(rng)) / walls;
        const double gap = gap_min + 0.6 * unit(rng);
        if (gap + 0.2 >= size.y()) return false;
        const double gy = 0.5 * gap + 0.1 + (size.y() - gap - 0.2) * unit(rng);
        const double below = gy - 0.5 * gap, above = size.y() - (gy + 0.5 * gap);
        for (const auto& [lo, len] : {std::pair{0.0, below}, std::pair{gy + 0.5 * gap, above}}) {
          if (len <= 0.0) continue;
          Obstacle o;
          o.shape = Obstacle::Shape::Box;
          o.size = Vector3d(0.2, len, size.z());
          o.center = Vector3d(x, lo + 0.5 * len, 0.5 * size.z());
          o.z_min = 0.0;
          o.z_max = size.z();
          out.push_back(o);
        }
      }
      return true;
    }
  }
  return false;
}

}  // namespace

OccupancyWorld::OccupancyWorld(const Aabb& bounds, double resolution) : bounds_(bounds), res_(resolution) {
  if (!(resolution > 0.0)) fail(ErrorKind::Config, "world: resolution must be positive");
  if (!((bounds.max - bounds.min).array() > 0.0).all()) fail(ErrorKind::Config, "world: empty bounds");
  for (int i = 0; i < 3; ++i) {
    dims_[i] = std::max(1, static_cast<int>(std::ceil((bounds.max[i] - bounds.min[i]) / resolution - 1e-9)));
  }
  bounds_.max = bounds_.min + dims_.cast<double>() * res_;
  const std::size_t n = static_cast<std::size_t>(dims_.x()) * dims_.y() * dims_.z();
  if (n > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    fail(ErrorKind::Config, "world: grid too large");
  }
  truth_.assign(n, 0);
  known_.assign(n, CellState::Unknown);
  update_distance();
}

Vector3i OccupancyWorld::cell_of(std::size_t index) const {
  const auto nx = static_cast<std::size_t>(dims_.x()), ny = static_cast<std::size_t>(dims_.y());
  return Vector3i(static_cast<int>(index % nx), static_cast<int>((index / nx) % ny), static_cast<int>(index / (nx * ny)));
}

Vector3i OccupancyWorld::cell_at(const Vector3d& p) const {
  Vector3i c;
  for (int i = 0; i < 3; ++i) {
    const double u = std::floor((p[i] - bounds_.min[i]) / res_);
    c[i] = static_cast<int>(std::clamp(u, 0.0, static_cast<double>(dims_[i] - 1)));
  }
  return c;
}

Vector3d OccupancyWorld::center(const Vector3i& c) const {
  return bounds_.min + (c.cast<double>().array() + 0.5).matrix() * res_;
}

std::size_t OccupancyWorld::occupied_truth_count() const {
  return static_cast<std::size_t>(std::count(truth_.begin(), truth_.end(), std::uint8_t{1}));
}

std::size_t OccupancyWorld::known_count(CellState state) const {
  return static_cast<std::size_t>(std::count(known_.begin(), known_.end(), state));
}

std::size_t OccupancyWorld::reveal(const Vector3d& position, double radius) {
  if (!(radius > 0.0)) fail(ErrorKind::InvalidInput, "reveal: radius must be positive");
  const Vector3i lo = cell_at(position - Vector3d::Constant(radius));
  const Vector3i hi = cell_at(position + Vector3d::Constant(radius));
  const Vector3i origin = cell_at(position);
  const double r2 = radius * radius;
  std::size_t changed = 0;
  for (int k = lo.z(); k <= hi.z(); ++k) {
    for (int j = lo.y(); j <= hi.y(); ++j) {
      for (int i = lo.x(); i <= hi.x(); ++i) {
        const Vector3i c(i, j, k);
        const std::size_t idx = index(c);
        const CellState want = truth_[idx] ? CellState::Occupied : CellState::Free;
        if (known_[idx] == want) continue;
        const Vector3d target = center(c);
        if ((target - position).squaredNorm() > r2) continue;
        const bool visible = traverse(*this, position, target, [&](const Vector3i& cell) {
          if (cell == c) return true;
          return cell == origin || truth_[index(cell)] == 0;
        });
        if (!visible) continue;
        known_[idx] = want;
        ++changed;
      }
    }
  }
  if (changed > 0) update_distance();
  return changed;
}

void OccupancyWorld::reveal_all() {
  for (std::size_t i = 0; i < truth_.size(); ++i) known_[i] = truth_[i] ? CellState::Occupied : CellState::Free;
  update_distance();
}

template <class IsSite>
OccupancyWorld::Field OccupancyWorld::build_field(IsSite is_site) const {
  Field f;
  const std::size_t n = truth_.size();
  f.d2.assign(n, kInf);
  f.site.assign(n, -1);
  const int longest = dims_.maxCoeff();
  std::vector<double> g(static_cast<std::size_t>(longest)), d(static_cast<std::size_t>(longest));
  std::vector<int> arg(static_cast<std::size_t>(longest)), v(static_cast<std::size_t>(longest));
  std::vector<double> z(static_cast<std::size_t>(longest) + 1);
  std::vector<std::int32_t> site_line(static_cast<std::size_t>(longest));
  const int strides[3] = {1, dims_.x(), dims_.x() * dims_.y()};

  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const int len = dims_[axis];
    for (int u = 0; u < dims_[a1]; ++u) {
      for (int w = 0; w < dims_[a2]; ++w) {
        const std::size_t base = static_cast<std::size_t>(u) * strides[a1] + static_cast<std::size_t>(w) * strides[a2];
        for (int q = 0; q < len; ++q) {
          const std::size_t idx = base + static_cast<std::size_t>(q) * strides[axis];
          if (axis == 0) {
            g[static_cast<std::size_t>(q)] = is_site(idx) ? 0.0 : std::numeric_limits<double>::infinity();
            site_line[static_cast<std::size_t>(q)] = static_cast<std::int32_t>(idx);
          } else {
            g[static_cast<std::size_t>(q)] = f.d2[idx];
            site_line[static_cast<std::size_t>(q)] = f.site[idx];
          }
        }
        distance_1d(g, len, d, arg, v, z);
        for (int q = 0; q < len; ++q) {
          const std::size_t idx = base + static_cast<std::size_t>(q) * strides[axis];
          const int p = arg[static_cast<std::size_t>(q)];
          f.d2[idx] = p < 0 ? kInf : static_cast<float>(d[static_cast<std::size_t>(q)]);
          f.site[idx] = p < 0 ? -1 : site_line[static_cast<std::size_t>(p)];
        }
      }
    }
  }
  return f;
}

void OccupancyWorld::update_distance() {
  blocked_field_ = build_field([&](std::size_t i) { return known_[i] != CellState::Free; });
  free_field_ = build_field([&](std::size_t i) { return known_[i] == CellState::Free; });
}

void OccupancyWorld::update_truth_distance() {
  truth_field_ = build_field([&](std::size_t i) { return truth_[i] != 0; });
}

bool OccupancyWorld::nearest_site_box(const Field& f, const Vector3d& p, double& dist, Vector3d& surface,
                                      Vector3i& site_cell) const {
  const Vector3i c = cell_at(p);
  bool found = false;
  dist = std::numeric_limits<double>::infinity();
  std::array<std::int32_t, 27> seen{};
  int n_seen = 0;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const Vector3i nb = c + Vector3i(dx, dy, dz);
        if (!in_grid(nb)) continue;
        const std::int32_t s = f.site[index(nb)];
        if (s < 0 || std::find(seen.begin(), seen.begin() + n_seen, s) != seen.begin() + n_seen) continue;
        seen[static_cast<std::size_t>(n_seen++)] = s;
        const Vector3i sc = cell_of(static_cast<std::size_t>(s));
        const Vector3d lo = bounds_.min + sc.cast<double>() * res_;
        const Vector3d box_point = p.cwiseMax(lo).cwiseMin(lo + Vector3d::Constant(res_));
        const double dd = (p - box_point).norm();
        if (dd < dist) {
          dist = dd;
          surface = box_point;
          site_cell = sc;
          found = true;
        }
      }
    }
  }
  return found;
}

double OccupancyWorld::bounds_distance(const Vector3d& p, Vector3d& surface, Vector3d& normal) const {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double lo = p[i] - bounds_.min[i], hi = bounds_.max[i] - p[i];
    if (lo < best) {
      best = lo;
      surface = p;
      surface[i] = bounds_.min[i];
      normal = Vector3d::Unit(i);
    }
    if (hi < best) {
      best = hi;
      surface = p;
      surface[i] = bounds_.max[i];
      normal = -Vector3d::Unit(i);
    }
  }
  return best;
}

DistanceQuery OccupancyWorld::distance_query(const Vector3d& p) const {
  if (truth_.empty()) fail(ErrorKind::Query, "distance query on an empty world");
  if (!p.allFinite() || !bounds_.contains(p)) fail(ErrorKind::Query, "distance query outside the world bounds");
  return distance_query_unchecked(p);
}

DistanceQuery OccupancyWorld::distance_query_unchecked(const Vector3d& p) const {
  DistanceQuery out;
  if (!bounds_.contains(p)) {
    const Vector3d s = p.cwiseMax(bounds_.min).cwiseMin(bounds_.max);
    const double dist = (s - p).norm();
    out.distance = -dist;
    out.surface = s;
    out.normal = (s - p) / dist;
    return out;
  }
  const Vector3i c = cell_at(p);
  double dist = 0.0;
  Vector3d s;
  Vector3i site;
  if (blocked(c)) {
    if (!nearest_site_box(free_field_, p, dist, s, site)) {
      out.distance = 0.0;
      out.surface = p;
      out.normal = Vector3d::UnitZ();
      return out;
    }
    out.distance = -dist;
    out.surface = s;
    const Vector3d dir = dist > 0.0 ? Vector3d(s - p) : Vector3d(center(site) - center(c));
    out.normal = dir.normalized();
    return out;
  }
  Vector3d sb, nb;
  const double db = bounds_distance(p, sb, nb);
  out.distance = db;
  out.surface = sb;
  out.normal = nb;
  if (nearest_site_box(blocked_field_, p, dist, s, site) && dist < db) {
    out.distance = dist;
    out.surface = s;
    const Vector3d dir = dist > 0.0 ? Vector3d(p - s) : Vector3d(center(c) - center(site));
    out.normal = dir.normalized();
  }
  return out;
}

double OccupancyWorld::center_clearance(const Vector3i& c) const {
  if (blocked(c)) return -res_;
  const Vector3d p = center(c);
  Vector3d sb, nb;
  double best = bounds_distance(p, sb, nb);
  const std::int32_t s = blocked_field_.site[index(c)];
  if (s >= 0) {
    const Vector3d lo = bounds_.min + cell_of(static_cast<std::size_t>(s)).cast<double>() * res_;
    const Vector3d box_point = p.cwiseMax(lo).cwiseMin(lo + Vector3d::Constant(res_));
    best = std::min(best, (p - box_point).norm());
  }
  return best;
}

double OccupancyWorld::truth_distance(const Vector3d& p) const {
  if (truth_field_.site.size() != truth_.size()) fail(ErrorKind::InvalidState, "truth distance field not built");
  double dist = 0.0;
  Vector3d s;
  Vector3i site;
  if (!nearest_site_box(truth_field_, p, dist, s, site)) return std::numeric_limits<double>::infinity();
  return dist;
}

void WorldSpec::validate() const {
  if (!(resolution > 0.0)) fail(ErrorKind::Config, "world.resolution must be positive");
  if (!(size.array() > 0.0).all()) fail(ErrorKind::Config, "world.size must be positive");
  if (!(density >= 0.0)) fail(ErrorKind::Config, "world.density must be non-negative");
  if (!(min_passage >= 0.0)) fail(ErrorKind::Config, "world.min_passage must be non-negative");
  if (!(safe_distance > 0.0)) fail(ErrorKind::Config, "world.safe_distance must be positive");
  if (!(flight_height > 0.0 && flight_height < size.z())) {
    fail(ErrorKind::Config, "world.flight_height must lie inside the world height");
  }
  if (max_retries < 1) fail(ErrorKind::Config, "world.max_retries must be at least 1");
}

OccupancyWorld generate_world(const WorldSpec& spec) {
  spec.validate();
  const double margin = std::min(1.5, 0.25 * spec.size.x());
  const Vector3d start(margin, 0.5 * spec.size.y(), spec.flight_height);
  const Vector3d goal(spec.size.x() - margin, 0.5 * spec.size.y(), spec.flight_height);
  const double need = 2.0 * spec.safe_distance;
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    std::mt19937_64 rng(mix_seed(spec.seed, attempt));
    std::vector<Obstacle> obstacles;
    if (!place_obstacles(spec, rng, start, goal, obstacles)) continue;
    OccupancyWorld w(Aabb{Vector3d::Zero(), spec.size}, spec.resolution);
    w.kind = spec.kind;
    w.seed = spec.seed;
    w.start = start;
    w.goal = goal;
    w.obstacles = obstacles;
    for (const auto& o : obstacles) rasterize(w, o);
    OccupancyWorld probe = w;
    probe.reveal_all();
    if (probe.center_clearance(probe.cell_at(start)) < need || probe.center_clearance(probe.cell_at(goal)) < need) {
      continue;
    }
    try {
      plan_path(probe, start, goal, need);
    } catch (const Error&) {
      continue;
    }
    w.update_truth_distance();
    return w;
  }
  fail(ErrorKind::Generation, std::string("no valid ") + to_string(spec.kind) + " world after " +
                                  std::to_string(spec.max_retries) + " attempts (seed " +
                                  std::to_string(spec.seed) + ")");
}

OccupancyWorld import_points(const std::filesystem::path& path, double resolution, double margin,
                             std::optional<Aabb> bounds) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidInput, "cannot open point file " + path.string());
  std::vector<Vector3d> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    Vector3d p;
    if (!(ss >> p.x())) continue;
    if (!(ss >> p.y() >> p.z()) || !p.allFinite()) {
      fail(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(line_no) + ": expected 'x y z'");
    }
    points.push_back(p);
  }
  Aabb box;
  if (bounds) {
    box = *bounds;
  } else {
    if (points.empty()) fail(ErrorKind::InvalidInput, "point file " + path.string() + " has no points");
    box.min = box.max = points.front();
    for (const auto& p : points) {
      box.min = box.min.cwiseMin(p);
      box.max = box.max.cwiseMax(p);
    }
    box.min.array() -= margin;
    box.max.array() += margin;
  }
  OccupancyWorld w(box, resolution);
  w.kind = WorldKind::Imported;
  for (const auto& p : points) {
    if (w.bounds().contains(p)) w.set_truth(w.cell_at(p), true);
  }
  w.update_truth_distance();
  return w;
}

void save_world(const OccupancyWorld& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write world file " + path.string());
  auto vec = [](const Vector3d& v) {
    return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
  };
  out << "rfa-world 1\n";
  out << "kind " << to_string(w.kind) << "\n";
  out << "seed " << w.seed << "\n";
  out << "resolution " << format_double(w.resolution()) << "\n";
  out << "bounds " << vec(w.bounds().min) << " " << vec(w.bounds().max) << "\n";
  out << "start " << vec(w.start) << "\n";
  out << "goal " << vec(w.goal) << "\n";
  for (const auto& o : w.obstacles) {
    out << "obstacle " << (o.shape == Obstacle::Shape::Cylinder ? "cylinder " : "box ") << vec(o.center) << " "
        << vec(o.size) << " " << format_double(o.z_min) << " " << format_double(o.z_max) << "\n";
  }
  out << "dims " << w.dims().x() << " " << w.dims().y() << " " << w.dims().z() << "\n";
  out << "rle";
  std::size_t i = 0, runs = 0;
  const std::size_t n = w.cell_count();
  while (i < n) {
    const bool v = w.truth(w.cell_of(i));
    std::size_t j = i;
    while (j < n && w.truth(w.cell_of(j)) == v) ++j;
    out << (runs % 16 == 0 ? "\n" : " ") << (j - i) << ":" << (v ? 1 : 0);
    ++runs;
    i = j;
  }
  out << "\nend\n";
}

OccupancyWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidInput, "cannot open world file " + path.string());
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "rfa-world" || version != 1) {
    fail(ErrorKind::InvalidInput, path.string() + ": not a world file");
  }
  auto bad = [&](const std::string& what) { fail(ErrorKind::InvalidInput, path.string() + ": " + what); };
  auto read_vec = [&](Vector3d& v) {
    if (!(in >> v.x() >> v.y() >> v.z())) bad("malformed vector");
  };
  WorldKind kind = WorldKind::Empty;
  std::uint64_t seed = 0;
  double res = 0.0;
  Aabb box;
  Vector3d start = Vector3d::Zero(), goal = Vector3d::Zero();
  Vector3i dims = Vector3i::Zero();
  std::vector<Obstacle> obstacles;
  std::string key;
  while (in >> key && key != "rle") {
    if (key == "kind") {
      std::string k;
      in >> k;
      kind = world_kind_from_string(k);
    } else if (key == "seed") {
      in >> seed;
    } else if (key == "resolution") {
      in >> res;
    } else if (key == "bounds") {
      read_vec(box.min);
      read_vec(box.max);
    } else if (key == "start") {
      read_vec(start);
    } else if (key == "goal") {
      read_vec(goal);
    } else if (key == "obstacle") {
      std::string shape;
      Obstacle o;
      in >> shape;
      o.shape = shape == "cylinder" ? Obstacle::Shape::Cylinder : Obstacle::Shape::Box;
      read_vec(o.center);
      read_vec(o.size);
      if (!(in >> o.z_min >> o.z_max)) bad("malformed obstacle");
      obstacles.push_back(o);
    } else if (key == "dims") {
      if (!(in >> dims.x() >> dims.y() >> dims.z())) bad("malformed dims");
    } else {
      bad("unknown header key '" + key + "'");
    }
  }
  if (key != "rle") bad("missing rle section");
  OccupancyWorld w(box, res);
  if (w.dims() != dims) bad("dims do not match bounds and resolution");
  w.kind = kind;
  w.seed = seed;
  w.start = start;
  w.goal = goal;
  w.obstacles = obstacles;
  std::size_t i = 0;
  std::string token;
  while (in >> token && token != "end") {
    const auto colon = token.find(':');
    if (colon == std::string::npos) bad("malformed run '" + token + "'");
    const std::size_t count = std::stoul(token.substr(0, colon));
    const bool v = token.substr(colon + 1) == "1";
    if (i + count > w.cell_count()) bad("run-length data exceeds the grid");
    for (std::size_t k = 0; k < count; ++k) w.set_truth(w.cell_of(i + k), v);
    i += count;
  }
  if (token != "end" || i != w.cell_count()) bad("run-length data does not cover the grid");
  w.update_truth_distance();
  return w;
}

namespace {

// A* from `start` to the cell of `goal`. With `partial`, an unreachable goal
// ends the search at the expanded cell closest to it instead of failing.
PathResult search(const OccupancyWorld& w, const Vector3d& start, const Vector3d& goal, double clearance,
                  bool partial) {
  if (!w.bounds().contains(start) || !w.bounds().contains(goal)) {
    fail(ErrorKind::Planning, "plan_path: start or goal outside the world");
  }
  const Vector3i sc = w.cell_at(start);
  Vector3i gc = w.cell_at(goal);
  if (w.center_clearance(sc) < clearance) fail(ErrorKind::Planning, "plan_path: start is not in free space");
  if (w.center_clearance(gc) < clearance) {
    if (!partial) fail(ErrorKind::Planning, "plan_path: goal is not in free space");
    // Aim at the traversable cell nearest the goal; the search falls back
    // to the closest expanded cell if that one is cut off.
    double best = std::numeric_limits<double>::infinity();
    const Vector3d gp = w.center(gc);
    for (std::size_t i = 0; i < w.cell_count(); ++i) {
      const Vector3i c = w.cell_of(i);
      const double d = (w.center(c) - gp).norm();
      if (d < best && w.center_clearance(c) >= clearance) {
        best = d;
        gc = c;
      }
    }
  }

  const std::size_t n = w.cell_count();
  const double res = w.resolution();
  std::vector<double> g(n, std::numeric_limits<double>::infinity());
  std::vector<std::int32_t> parent(n, -1);
  std::vector<std::int8_t> state(n, 0);  // 0 unseen, 1 open, 2 closed, -1 blocked
  struct Node {
    double f;
    std::int32_t idx;
    bool operator>(const Node& o) const { return f > o.f || (f == o.f && idx > o.idx); }
  };
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> open;
  const Vector3d goal_c = w.center(gc);
  auto heuristic = [&](const Vector3i& c) { return (w.center(c) - goal_c).norm(); };

  std::array<Vector3i, 26> offsets;
  std::array<double, 26> costs;
  int m = 0;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        offsets[static_cast<std::size_t>(m)] = Vector3i(dx, dy, dz);
        costs[static_cast<std::size_t>(m)] = res * std::sqrt(double(dx * dx + dy * dy + dz * dz));
        ++m;
      }
    }
  }

  const std::size_t s_idx = w.index(sc), g_idx = w.index(gc);
  g[s_idx] = 0.0;
  open.push({heuristic(sc), static_cast<std::int32_t>(s_idx)});
  state[s_idx] = 1;
  PathResult result;
  bool reached = false;
  while (!open.empty()) {
    const Node top = open.top();
    open.pop();
    const auto idx = static_cast<std::size_t>(top.idx);
    if (state[idx] == 2) continue;
    state[idx] = 2;
    ++result.expanded;
    if (idx == g_idx) {
      reached = true;
      break;
    }
    const Vector3i c = w.cell_of(idx);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const Vector3i nb = c + offsets[k];
      if (!w.in_grid(nb)) continue;
      const std::size_t ni = w.index(nb);
      if (state[ni] == 2 || state[ni] == -1) continue;
      if (state[ni] == 0 && w.center_clearance(nb) < clearance) {
        state[ni] = -1;
        continue;
      }
      const double cand = g[idx] + costs[k];
      if (cand < g[ni]) {
        g[ni] = cand;
        parent[ni] = static_cast<std::int32_t>(idx);
        state[ni] = 1;
        open.push({cand + heuristic(nb), static_cast<std::int32_t>(ni)});
      }
    }
  }
  std::size_t end_idx = g_idx;
  if (!reached) {
    if (!partial) fail(ErrorKind::Planning, "plan_path: no path at the requested clearance");
    const Vector3d gp = w.center(w.cell_at(goal));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (state[i] != 2) continue;
      const double d = (w.center(w.cell_of(i)) - gp).norm();
      if (d < best) {
        best = d;
        end_idx = i;
      }
    }
  }

  for (std::int32_t i = static_cast<std::int32_t>(end_idx); i >= 0; i = parent[static_cast<std::size_t>(i)]) {
    result.raw.push_back(w.center(w.cell_of(static_cast<std::size_t>(i))));
  }
  std::reverse(result.raw.begin(), result.raw.end());
  result.raw_cost = g[end_idx];
  result.reached = reached && w.cell_at(goal) == gc;

  const Vector3d end = result.reached ? goal : result.raw.back();
  std::vector<Vector3d> pts = result.raw;
  pts.front() = start;
  if (pts.size() == 1) pts.push_back(end);
  else pts.back() = end;
  result.waypoints.push_back(pts.front());
  std::size_t anchor = 0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    if (!segment_clear(w, pts[anchor], pts[i + 1], clearance)) {
      result.waypoints.push_back(pts[i]);
      anchor = i;
    }
  }
  result.waypoints.push_back(pts.back());
  return result;
}

}  // namespace

PathResult plan_path(const OccupancyWorld& w, const Vector3d& start, const Vector3d& goal, double clearance) {
  return search(w, start, goal, clearance, false);
}

PathResult plan_toward(const OccupancyWorld& w, const Vector3d& start, const Vector3d& goal, double clearance) {
  return search(w, start, goal, clearance, true);
}

bool segment_clear(const OccupancyWorld& w, const Vector3d& a, const Vector3d& b, double clearance) {
  return traverse(w, a, b, [&](const Vector3i& c) { return w.center_clearance(c) >= clearance; });
}

}  // namespace rfa
