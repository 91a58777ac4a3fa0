#include "gaterace/geometry.hpp"

#include <algorithm>
#include <limits>

namespace gaterace {

Vec3 Primitive::to_local(const Vec3& p) const {
  return dir_to_local(p - center);
}

Vec3 Primitive::dir_to_local(const Vec3& d) const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

Aabb Primitive::bounds() const {
  Vec3 h;
  switch (shape) {
    case Shape::kBox: {
      const double c = std::abs(std::cos(yaw));
      const double s = std::abs(std::sin(yaw));
      h = Vec3(c * half.x() + s * half.y(), s * half.x() + c * half.y(),
               half.z());
      break;
    }
    case Shape::kCylinder:
      h = Vec3(half.x(), half.x(), half.z());
      break;
    case Shape::kSphere:
      h = Vec3::Constant(half.x());
      break;
  }
  return {center - h, center + h};
}

double Primitive::bounding_radius() const {
  switch (shape) {
    case Shape::kBox:
      return half.norm();
    case Shape::kCylinder:
      return std::hypot(half.x(), half.z());
    case Shape::kSphere:
      return half.x();
  }
  return half.norm();
}

double signed_distance(const Primitive& prim, const Vec3& p) {
  switch (prim.shape) {
    case Shape::kBox: {
      const Vec3 q = prim.to_local(p).cwiseAbs() - prim.half;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case Shape::kCylinder: {
      const Vec3 d = p - prim.center;
      const double dr = std::hypot(d.x(), d.y()) - prim.half.x();
      const double dz = std::abs(d.z()) - prim.half.z();
      return std::min(std::max(dr, dz), 0.0) +
             std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
    }
    case Shape::kSphere:
      return (p - prim.center).norm() - prim.half.x();
  }
  return std::numeric_limits<double>::infinity();
}

namespace {

std::optional<double> ray_box(const Primitive& prim, const Vec3& origin,
                              const Vec3& dir, double t_max) {
  const Vec3 o = prim.to_local(origin);
  const Vec3 d = prim.dir_to_local(dir);
  double t0 = 0.0;
  double t1 = t_max;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-300) {
      if (std::abs(o[i]) > prim.half[i]) return std::nullopt;
      continue;
    }
    double ta = (-prim.half[i] - o[i]) / d[i];
    double tb = (prim.half[i] - o[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

std::optional<double> ray_sphere(const Primitive& prim, const Vec3& origin,
                                 const Vec3& dir, double t_max) {
  const Vec3 oc = origin - prim.center;
  const double r = prim.half.x();
  const double c = oc.squaredNorm() - r * r;
  if (c <= 0.0) return 0.0;
  const double b = oc.dot(dir);
  const double disc = b * b - c;
  if (disc < 0.0 || b > 0.0) return std::nullopt;
  // Numerically stable near root: t = c / (-b + sqrt(disc)).
  const double t = c / (-b + std::sqrt(disc));
  if (t > t_max) return std::nullopt;
  return t;
}

std::optional<double> ray_cylinder(const Primitive& prim, const Vec3& origin,
                                   const Vec3& dir, double t_max) {
  const Vec3 o = origin - prim.center;
  const double r = prim.half.x();
  const double hz = prim.half.z();
  const double o_rr = o.x() * o.x() + o.y() * o.y();
  const bool inside_r = o_rr <= r * r;
  if (inside_r && std::abs(o.z()) <= hz) return 0.0;

  // Slab in z.
  double t0 = 0.0;
  double t1 = t_max;
  if (std::abs(dir.z()) < 1e-300) {
    if (std::abs(o.z()) > hz) return std::nullopt;
  } else {
    double ta = (-hz - o.z()) / dir.z();
    double tb = (hz - o.z()) / dir.z();
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  // Infinite vertical cylinder.
  const double a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a < 1e-300) {
    if (!inside_r) return std::nullopt;
  } else {
    const double b = o.x() * dir.x() + o.y() * dir.y();
    const double c = o_rr - r * r;
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double ta;
    double tb;
    if (b > 0.0) {
      const double qv = -(b + sq);
      ta = qv / a;
      tb = c / qv;
    } else {
      const double qv = -b + sq;
      ta = c / qv;
      tb = qv / a;
    }
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  return t0;
}

}  // namespace

std::optional<double> ray_hit(const Primitive& prim, const Vec3& origin,
                              const Vec3& dir, double t_max) {
  switch (prim.shape) {
    case Shape::kBox:
      return ray_box(prim, origin, dir, t_max);
    case Shape::kCylinder:
      return ray_cylinder(prim, origin, dir, t_max);
    case Shape::kSphere:
      return ray_sphere(prim, origin, dir, t_max);
  }
  return std::nullopt;
}

}  // namespace gaterace
