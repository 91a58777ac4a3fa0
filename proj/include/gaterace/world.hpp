#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaterace/dynamics.hpp"
#include "gaterace/geometry.hpp"

namespace gaterace {

inline constexpr double kDroneRadius = 0.15;
inline constexpr double kStartSafetyMargin = 0.5;
inline constexpr double kNoCollisionSentinel = 1e3;

struct Gate {
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;  // heading of the traversal normal
  Eigen::Vector2d aperture = Eigen::Vector2d(0.5, 0.5);  // half width, height
  double frame_thickness = 0.1;

  Vec3 normal() const { return {std::cos(yaw), std::sin(yaw), 0.0}; }
  Vec3 lateral() const { return {-std::sin(yaw), std::cos(yaw), 0.0}; }
  // Four frame bars: left, right, top, bottom.
  std::vector<Primitive> frame() const;
};

struct StartPoint {
  Vec3 position = Vec3::Zero();
  int next_gate = 0;
};

struct SectionMargin {
  double lateral = 1.5;
  double vertical = 1.0;
};

struct ShapeRange {
  double weight = 1.0;
  double min_size = 0.2;
  double max_size = 0.5;
};

// Obstacle family sampling ranges (box half-extents, cylinder and sphere
// radii). Cylinders span the full height of their section.
struct ShapeSpec {
  ShapeRange box{1.0, 0.2, 0.5};
  ShapeRange cylinder{1.0, 0.1, 0.3};
  ShapeRange sphere{1.0, 0.2, 0.4};
};

struct Track {
  std::string name;
  std::vector<Gate> gates;
  std::vector<StartPoint> start_points;
  int lap_gates = 0;
  // Closed tracks wrap from the last gate back to the first.
  bool closed = false;
  // Flight volume; leaving it counts as a crash. Its floor is the ground.
  std::optional<Aabb> bounds;
  SectionMargin margin;
  int default_density = 3;
  ShapeSpec shapes;
  QuadParams quad;

  void validate() const;
  int wrap(int gate_index) const;
  // Number of gate passages that complete a run from the given start point.
  int gates_to_finish(const StartPoint& sp) const;
  // Anchor point of the section leading to gate k: the previous gate center,
  // or the start point for the first gate of an open track.
  std::optional<Vec3> section_anchor(int gate_index) const;
};

// Computes a world box around gates and start points.
Aabb default_bounds(const std::vector<Gate>& gates,
                    const std::vector<StartPoint>& starts);

struct Obstacle {
  Shape shape = Shape::kBox;
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  Vec3 half_extents = Vec3::Constant(0.3);
  int section = 0;  // gate index whose section holds the obstacle

  Primitive primitive() const { return {shape, position, yaw, half_extents}; }
};

struct Section {
  int gate_index = 0;
  Aabb box;
};

std::vector<Section> track_sections(const Track& track);

class Scene {
 public:
  Scene() = default;
  Scene(Track track, std::vector<Obstacle> obstacles, std::uint64_t seed,
        int density);

  const Track& track() const { return track_; }
  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  std::uint64_t seed() const { return seed_; }
  int density() const { return density_; }
  // Obstacles followed by gate frame bars.
  const std::vector<Primitive>& primitives() const { return primitives_; }
  std::size_t obstacle_primitive_count() const { return obstacles_.size(); }
  std::uint64_t hash() const;

 private:
  Track track_;
  std::vector<Obstacle> obstacles_;
  std::uint64_t seed_ = 0;
  int density_ = 0;
  std::vector<Primitive> primitives_;
};

using ScenePtr = std::shared_ptr<const Scene>;

class InfeasibleDensity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Aabb section_cuboid(const Vec3& a, const Vec3& b, const SectionMargin& margin);
inline Aabb section_cuboid(const Gate& a, const Gate& b,
                           const SectionMargin& margin) {
  return section_cuboid(a.center, b.center, margin);
}

Track randomize_track(const Track& track, double xy_range, double z_range,
                      std::mt19937_64& rng);

bool gate_passed(const Vec3& p_prev, const Vec3& p_curr, const Gate& gate);

double distance_to_nearest_collision(const Vec3& p, double radius,
                                     const Scene& scene);

struct TraversabilityConfig {
  double voxel = 0.1;
  double clearance = 0.4;
  double radius = kDroneRadius;
};

bool traversable(const Scene& scene, const TraversabilityConfig& cfg = {});

// Checks one start point; exposed for diagnostics and tests.
bool start_traversable(const Scene& scene, const StartPoint& sp,
                       const TraversabilityConfig& cfg = {});

struct GeneratorConfig {
  int max_consecutive_rejections = 1000;
  TraversabilityConfig traversability;
};

Scene generate_obstacles(const Track& track, int density,
                         const ShapeSpec& shapes, std::uint64_t seed,
                         const GeneratorConfig& cfg = {});

}  // namespace gaterace
