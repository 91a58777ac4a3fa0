#pragma once

#include <optional>

#include "gaterace/math.hpp"

namespace gaterace {

struct Aabb {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  bool contains(const Aabb& o) const {
    return (o.lo.array() >= lo.array()).all() &&
           (o.hi.array() <= hi.array()).all();
  }
  bool overlaps(const Aabb& o) const {
    return (lo.array() <= o.hi.array()).all() &&
           (o.lo.array() <= hi.array()).all();
  }
  Aabb expanded(double r) const {
    return {lo - Vec3::Constant(r), hi + Vec3::Constant(r)};
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
};

enum class Shape { kBox, kCylinder, kSphere };

// Collision primitive. Boxes rotate about world z by `yaw`; cylinders are
// vertical with radius half.x() and half-height half.z(); spheres use
// half.x() as the radius.
struct Primitive {
  Shape shape = Shape::kBox;
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  Vec3 half = Vec3::Constant(0.5);

  Vec3 to_local(const Vec3& p) const;
  Vec3 dir_to_local(const Vec3& d) const;
  Aabb bounds() const;
  double bounding_radius() const;
};

// Negative inside the primitive.
double signed_distance(const Primitive& prim, const Vec3& p);

// Smallest t in [0, t_max] with origin + t * dir on the primitive surface,
// where dir is unit length. Returns 0 when the origin is inside.
std::optional<double> ray_hit(const Primitive& prim, const Vec3& origin,
                              const Vec3& dir, double t_max);

}  // namespace gaterace
