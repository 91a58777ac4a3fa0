#include "gaterace/world.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <queue>
#include <sstream>

namespace gaterace {

std::vector<Primitive> Gate::frame() const {
  const double aw = aperture.x();
  const double ah = aperture.y();
  const double th = frame_thickness;
  const Vec3 t = lateral();
  const Vec3 z = Vec3::UnitZ();
  std::vector<Primitive> bars;
  bars.reserve(4);
  // Side bars cover the corners; top and bottom bars span the opening.
  const Vec3 side_half(0.5 * th, 0.5 * th, ah + th);
  const Vec3 cap_half(0.5 * th, aw, 0.5 * th);
  bars.push_back({Shape::kBox, center + (aw + 0.5 * th) * t, yaw, side_half});
  bars.push_back({Shape::kBox, center - (aw + 0.5 * th) * t, yaw, side_half});
  bars.push_back({Shape::kBox, center + (ah + 0.5 * th) * z, yaw, cap_half});
  bars.push_back({Shape::kBox, center - (ah + 0.5 * th) * z, yaw, cap_half});
  return bars;
}

void Track::validate() const {
  if (gates.size() < 2) {
    throw std::invalid_argument("track '" + name + "': needs at least 2 gates");
  }
  for (std::size_t i = 0; i + 1 < gates.size(); ++i) {
    if ((gates[i].center - gates[i + 1].center).norm() < 1e-9) {
      throw std::invalid_argument("track '" + name +
                                  "': consecutive gates coincide");
    }
  }
  for (const Gate& g : gates) {
    if (g.aperture.minCoeff() <= kDroneRadius) {
      throw std::invalid_argument("track '" + name +
                                  "': gate aperture smaller than the drone");
    }
  }
  if (start_points.empty()) {
    throw std::invalid_argument("track '" + name + "': no start points");
  }
  for (const StartPoint& sp : start_points) {
    if (sp.next_gate < 0 || sp.next_gate >= static_cast<int>(gates.size())) {
      throw std::invalid_argument("track '" + name +
                                  "': start point references a missing gate");
    }
  }
  if (lap_gates <= 0 || (!closed && lap_gates > static_cast<int>(gates.size()))) {
    throw std::invalid_argument("track '" + name + "': invalid lap_gates");
  }
  quad.validate();
}

int Track::wrap(int gate_index) const {
  const int n = static_cast<int>(gates.size());
  return ((gate_index % n) + n) % n;
}

int Track::gates_to_finish(const StartPoint& sp) const {
  if (closed) return lap_gates;
  return static_cast<int>(gates.size()) - sp.next_gate;
}

std::optional<Vec3> Track::section_anchor(int gate_index) const {
  if (gate_index > 0) return gates[gate_index - 1].center;
  if (closed) return gates.back().center;
  for (const StartPoint& sp : start_points) {
    if (sp.next_gate == gate_index) return sp.position;
  }
  return std::nullopt;
}

Aabb default_bounds(const std::vector<Gate>& gates,
                    const std::vector<StartPoint>& starts) {
  Aabb box{gates.front().center, gates.front().center};
  auto grow = [&box](const Vec3& p) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  };
  for (const Gate& g : gates) grow(g.center);
  for (const StartPoint& sp : starts) grow(sp.position);
  box.lo.x() -= 3.0;
  box.lo.y() -= 3.0;
  box.hi.x() += 3.0;
  box.hi.y() += 3.0;
  box.lo.z() = 0.0;
  box.hi.z() += 2.5;
  return box;
}

std::vector<Section> track_sections(const Track& track) {
  std::vector<Section> out;
  for (int k = 0; k < static_cast<int>(track.gates.size()); ++k) {
    const auto anchor = track.section_anchor(k);
    if (!anchor) continue;
    out.push_back({k, section_cuboid(*anchor, track.gates[k].center,
                                     track.margin)});
  }
  return out;
}

namespace {

class Fnv1a {
 public:
  void add(const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= bytes[i];
      h_ *= 1099511628211ull;
    }
  }
  void add(double v) { add(&v, sizeof v); }
  void add(std::int64_t v) { add(&v, sizeof v); }
  void add(const Vec3& v) {
    add(v.x());
    add(v.y());
    add(v.z());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

}  // namespace

Scene::Scene(Track track, std::vector<Obstacle> obstacles, std::uint64_t seed,
             int density)
    : track_(std::move(track)),
      obstacles_(std::move(obstacles)),
      seed_(seed),
      density_(density) {
  primitives_.reserve(obstacles_.size() + 4 * track_.gates.size());
  for (const Obstacle& o : obstacles_) {
    if (!(o.half_extents.array() > 0.0).all()) {
      throw std::invalid_argument("obstacle half extents must be positive");
    }
    primitives_.push_back(o.primitive());
  }
  for (const Gate& g : track_.gates) {
    for (const Primitive& bar : g.frame()) primitives_.push_back(bar);
  }
}

std::uint64_t Scene::hash() const {
  Fnv1a h;
  for (const Gate& g : track_.gates) {
    h.add(g.center);
    h.add(g.yaw);
  }
  for (const Obstacle& o : obstacles_) {
    h.add(static_cast<std::int64_t>(o.shape));
    h.add(o.position);
    h.add(o.yaw);
    h.add(o.half_extents);
  }
  h.add(static_cast<std::int64_t>(density_));
  return h.value();
}

Aabb section_cuboid(const Vec3& a, const Vec3& b, const SectionMargin& margin) {
  const Vec3 m(margin.lateral, margin.lateral, margin.vertical);
  return {a.cwiseMin(b) - m, a.cwiseMax(b) + m};
}

Track randomize_track(const Track& track, double xy_range, double z_range,
                      std::mt19937_64& rng) {
  if (xy_range < 0.0 || z_range < 0.0) {
    throw std::invalid_argument("randomize_track: ranges must be >= 0");
  }
  Track out = track;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (Gate& g : out.gates) {
    const double dx = unit(rng);
    const double dy = unit(rng);
    const double dz = unit(rng);
    g.center += Vec3(xy_range * dx, xy_range * dy, z_range * dz);
  }
  return out;
}

bool gate_passed(const Vec3& p_prev, const Vec3& p_curr, const Gate& gate) {
  const Vec3 n = gate.normal();
  const double s0 = n.dot(p_prev - gate.center);
  const double s1 = n.dot(p_curr - gate.center);
  if (!(s0 < 0.0 && s1 >= 0.0)) return false;
  const double frac = s0 / (s0 - s1);
  const Vec3 hit = p_prev + frac * (p_curr - p_prev) - gate.center;
  return std::abs(hit.dot(gate.lateral())) <= gate.aperture.x() &&
         std::abs(hit.z()) <= gate.aperture.y();
}

namespace {

double bounds_clearance(const Vec3& p, const Aabb& b) {
  if (!b.contains(p)) return 0.0;
  return std::min((p - b.lo).minCoeff(), (b.hi - p).minCoeff());
}

}  // namespace

double distance_to_nearest_collision(const Vec3& p, double radius,
                                     const Scene& scene) {
  double d = kNoCollisionSentinel;
  for (const Primitive& prim : scene.primitives()) {
    d = std::min(d, signed_distance(prim, p) - radius);
  }
  if (scene.track().bounds) {
    d = std::min(d, bounds_clearance(p, *scene.track().bounds) - radius);
  }
  return std::max(d, 0.0);
}

namespace {

// Lazily evaluated voxel occupancy over one section.
class VoxelGrid {
 public:
  VoxelGrid(const Scene& scene, const Aabb& box,
            const TraversabilityConfig& cfg)
      : scene_(scene), cfg_(cfg), lo_(box.lo) {
    for (int i = 0; i < 3; ++i) {
      dims_[i] = std::max(1, static_cast<int>(
                                 std::ceil(box.extent()[i] / cfg.voxel)));
    }
    state_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], 0);
    const Aabb grid_box{lo_, lo_ + cfg.voxel * Vec3(dims_[0], dims_[1],
                                                    dims_[2])};
    const std::size_t n_obst = scene.obstacle_primitive_count();
    const auto& prims = scene.primitives();
    for (std::size_t i = 0; i < prims.size(); ++i) {
      const bool is_obstacle = i < n_obst;
      const double reach =
          cfg.radius + (is_obstacle ? cfg.clearance : 0.0) + cfg.voxel;
      if (!prims[i].bounds().expanded(reach).overlaps(grid_box)) continue;
      (is_obstacle ? obstacles_ : fixed_).push_back(&prims[i]);
    }
  }

  bool index_of(const Vec3& p, std::array<int, 3>& idx) const {
    for (int i = 0; i < 3; ++i) {
      idx[i] = static_cast<int>(std::floor((p[i] - lo_[i]) / cfg_.voxel));
      if (idx[i] < 0 || idx[i] >= dims_[i]) return false;
    }
    return true;
  }

  bool in_range(const std::array<int, 3>& idx) const {
    for (int i = 0; i < 3; ++i) {
      if (idx[i] < 0 || idx[i] >= dims_[i]) return false;
    }
    return true;
  }

  std::size_t flat(const std::array<int, 3>& idx) const {
    return (static_cast<std::size_t>(idx[2]) * dims_[1] + idx[1]) * dims_[0] +
           idx[0];
  }

  Vec3 center(const std::array<int, 3>& idx) const {
    return lo_ + cfg_.voxel * Vec3(idx[0] + 0.5, idx[1] + 0.5, idx[2] + 0.5);
  }

  bool free(const std::array<int, 3>& idx) {
    std::int8_t& s = state_[flat(idx)];
    if (s == 0) s = evaluate(center(idx)) ? 1 : -1;
    return s > 0;
  }

  std::size_t size() const { return state_.size(); }

 private:
  bool evaluate(const Vec3& p) const {
    for (const Primitive* prim : obstacles_) {
      if (signed_distance(*prim, p) - cfg_.radius <= cfg_.clearance) {
        return false;
      }
    }
    for (const Primitive* prim : fixed_) {
      if (signed_distance(*prim, p) - cfg_.radius <= 0.0) return false;
    }
    if (scene_.track().bounds &&
        bounds_clearance(p, *scene_.track().bounds) - cfg_.radius <= 0.0) {
      return false;
    }
    return true;
  }

  const Scene& scene_;
  TraversabilityConfig cfg_;
  Vec3 lo_;
  std::array<int, 3> dims_{};
  std::vector<std::int8_t> state_;
  std::vector<const Primitive*> obstacles_;
  std::vector<const Primitive*> fixed_;
};

}  // namespace

bool start_traversable(const Scene& scene, const StartPoint& sp,
                       const TraversabilityConfig& cfg) {
  const Track& track = scene.track();
  const Gate& gate = track.gates[sp.next_gate];
  const auto anchor = track.section_anchor(sp.next_gate);
  Aabb box = section_cuboid(anchor.value_or(sp.position), gate.center,
                            track.margin);
  box.lo = box.lo.cwiseMin(sp.position - Vec3::Constant(1.0));
  box.hi = box.hi.cwiseMax(sp.position + Vec3::Constant(1.0));
  if (track.bounds) {
    box.lo = box.lo.cwiseMax(track.bounds->lo);
    box.hi = box.hi.cwiseMin(track.bounds->hi);
  }

  VoxelGrid grid(scene, box, cfg);
  std::array<int, 3> start{};
  if (!grid.index_of(sp.position, start) || !grid.free(start)) return false;

  const Vec3 n = gate.normal();
  const Vec3 t = gate.lateral();
  auto plane_offset = [&](const Vec3& x) { return n.dot(x - gate.center); };

  // Best-first flood fill ordered by distance to the gate center. It visits
  // the same connected component as a plain BFS, so the answer is identical,
  // but open sections terminate after a near-straight walk.
  using Entry = std::pair<double, std::array<int, 3>>;
  auto later = [](const Entry& a, const Entry& b) { return a.first > b.first; };
  std::priority_queue<Entry, std::vector<Entry>, decltype(later)> frontier(later);
  auto push = [&](const std::array<int, 3>& v) {
    frontier.emplace((grid.center(v) - gate.center).squaredNorm(), v);
  };
  std::vector<bool> visited(grid.size(), false);
  visited[grid.flat(start)] = true;
  push(start);
  static constexpr int kSteps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                       {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!frontier.empty()) {
    const std::array<int, 3> u = frontier.top().second;
    frontier.pop();
    const double s_u = plane_offset(grid.center(u));
    for (const auto& st : kSteps) {
      const std::array<int, 3> v{u[0] + st[0], u[1] + st[1], u[2] + st[2]};
      if (!grid.in_range(v)) continue;
      const std::size_t fv = grid.flat(v);
      if (visited[fv]) continue;
      if (!grid.free(v)) {
        visited[fv] = true;
        continue;
      }
      const Vec3 cv = grid.center(v);
      if (s_u < 0.0 && plane_offset(cv) >= 0.0) {
        const Vec3 rel = cv - gate.center;
        if (std::abs(rel.dot(t)) <= gate.aperture.x() &&
            std::abs(rel.z()) <= gate.aperture.y()) {
          return true;
        }
      }
      visited[fv] = true;
      push(v);
    }
  }
  return false;
}

bool traversable(const Scene& scene, const TraversabilityConfig& cfg) {
  for (const StartPoint& sp : scene.track().start_points) {
    if (!start_traversable(scene, sp, cfg)) return false;
  }
  return true;
}

namespace {

class ObstacleSampler {
 public:
  ObstacleSampler(const ShapeSpec& spec, std::mt19937_64& rng)
      : spec_(spec),
        rng_(rng),
        pick_({spec.box.weight, spec.cylinder.weight, spec.sphere.weight}) {}

  // Returns nullopt when the drawn shape does not fit inside the section.
  std::optional<Obstacle> draw(const Section& sec) {
    Obstacle o;
    o.section = sec.gate_index;
    const int kind = pick_(rng_);
    const Vec3 ext = sec.box.extent();
    switch (kind) {
      case 0: {
        o.shape = Shape::kBox;
        for (int i = 0; i < 3; ++i) o.half_extents[i] = size(spec_.box);
        o.yaw = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(
            rng_);
        break;
      }
      case 1: {
        o.shape = Shape::kCylinder;
        const double r = size(spec_.cylinder);
        o.half_extents = Vec3(r, r, 0.5 * ext.z());
        break;
      }
      default: {
        o.shape = Shape::kSphere;
        o.half_extents = Vec3::Constant(size(spec_.sphere));
        break;
      }
    }
    const Aabb local = Primitive{o.shape, Vec3::Zero(), o.yaw, o.half_extents}
                           .bounds();
    const Vec3 half = local.hi;
    for (int i = 0; i < 3; ++i) {
      if (2.0 * half[i] > ext[i] + 1e-12) return std::nullopt;
    }
    for (int i = 0; i < 3; ++i) {
      const double lo = sec.box.lo[i] + half[i];
      const double hi = sec.box.hi[i] - half[i];
      o.position[i] =
          hi > lo ? std::uniform_real_distribution<double>(lo, hi)(rng_) : lo;
    }
    return o;
  }

 private:
  double size(const ShapeRange& r) {
    return std::uniform_real_distribution<double>(r.min_size, r.max_size)(rng_);
  }

  const ShapeSpec& spec_;
  std::mt19937_64& rng_;
  std::discrete_distribution<int> pick_;
};

bool clear_of_starts(const Obstacle& o, const Track& track) {
  for (const StartPoint& sp : track.start_points) {
    if ((o.position - sp.position).norm() < kStartSafetyMargin) return false;
  }
  return true;
}

}  // namespace

Scene generate_obstacles(const Track& track, int density,
                         const ShapeSpec& shapes, std::uint64_t seed,
                         const GeneratorConfig& cfg) {
  if (density < 0 || density > 8) {
    throw std::invalid_argument("generate_obstacles: density must be in [0, 8]");
  }
  if (density == 0) return Scene(track, {}, seed, 0);

  std::mt19937_64 rng(seed);
  ObstacleSampler sampler(shapes, rng);
  const std::vector<Section> sections = track_sections(track);
  int rejections = 0;
  auto reject = [&](const char* why) {
    if (++rejections > cfg.max_consecutive_rejections) {
      std::ostringstream msg;
      msg << "infeasible density " << density << " on track '" << track.name
          << "' (last rejection: " << why << ")";
      throw InfeasibleDensity(msg.str());
    }
  };

  while (true) {
    std::vector<Obstacle> placed;
    for (const Section& sec : sections) {
      while (true) {
        std::vector<Obstacle> candidate = placed;
        bool sampled = true;
        for (int k = 0; k < density && sampled; ++k) {
          while (true) {
            std::optional<Obstacle> o = sampler.draw(sec);
            if (!o) {
              reject("shape larger than section");
              continue;
            }
            if (!clear_of_starts(*o, track)) {
              reject("start point margin");
              continue;
            }
            candidate.push_back(*o);
            break;
          }
        }
        const Scene trial(track, candidate, seed, density);
        bool ok = true;
        for (const StartPoint& sp : track.start_points) {
          const auto anchor = track.section_anchor(sp.next_gate);
          const Aabb sp_box = section_cuboid(
              anchor.value_or(sp.position), track.gates[sp.next_gate].center,
              track.margin);
          if (!sp_box.expanded(1.0).overlaps(sec.box)) continue;
          if (!start_traversable(trial, sp, cfg.traversability)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          placed = std::move(candidate);
          rejections = 0;
          break;
        }
        reject("section not traversable");
      }
    }
    Scene scene(track, std::move(placed), seed, density);
    if (traversable(scene, cfg.traversability)) return scene;
    reject("layout not traversable");
  }
}

}  // namespace gaterace
