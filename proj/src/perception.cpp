#include "gaterace/perception.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace gaterace {

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("camera resolution must be positive");
  }
  if (!(horizontal_fov > 0.0 && horizontal_fov < std::numbers::pi)) {
    throw std::invalid_argument("camera fov must be in (0, pi)");
  }
  if (!(max_range > 0.0) || !(min_range > 0.0)) {
    throw std::invalid_argument("camera ranges must be positive");
  }
}

double CameraModel::focal() const {
  return 0.5 * width / std::tan(0.5 * horizontal_fov);
}

double CameraModel::vertical_fov() const {
  return 2.0 * std::atan(0.5 * height / focal());
}

Vec3 CameraModel::pixel_ray(int row, int col) const {
  const double f = focal();
  return Vec3(1.0, -(col - 0.5 * width) / f, -(row - 0.5 * height) / f)
      .normalized();
}

DepthGrid render_depth(const QuadState& state, const Scene& scene,
                       const CameraModel& camera) {
  const Quat cam_to_world = state.q * camera.rotation_B;
  const Vec3 origin = state.p_W + state.q * camera.offset_B;
  const Vec3 forward = cam_to_world * Vec3::UnitX();
  const double range = camera.max_range;

  // Primitives that can possibly be seen, with bounding spheres for
  // per-ray rejection.
  struct Candidate {
    const Primitive* prim;
    Vec3 center;
    double radius;
  };
  std::vector<Candidate> visible;
  for (const Primitive& prim : scene.primitives()) {
    const double r = prim.bounding_radius();
    const Vec3 rel = prim.center - origin;
    if (rel.norm() - r > range) continue;
    if (rel.dot(forward) < -r) continue;
    visible.push_back({&prim, prim.center, r});
  }

  DepthGrid out{camera.width, camera.height,
                std::vector<double>(static_cast<std::size_t>(camera.width) *
                                    camera.height)};
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const Vec3 dir = cam_to_world * camera.pixel_ray(row, col);
      double best = range;
      if (dir.z() < 0.0) {
        const double t_ground = -origin.z() / dir.z();
        if (t_ground >= 0.0) best = std::min(best, t_ground);
      }
      for (const Candidate& c : visible) {
        const Vec3 oc = c.center - origin;
        const double along = oc.dot(dir);
        if (along + c.radius < 0.0) continue;
        if (oc.squaredNorm() - along * along > c.radius * c.radius &&
            oc.squaredNorm() > c.radius * c.radius) {
          continue;
        }
        if (auto t = ray_hit(*c.prim, origin, dir, best)) best = *t;
      }
      out.at(row, col) = best;
    }
  }
  return out;
}

DepthImage to_observation(const DepthGrid& raw, const CameraModel& camera,
                          double sigma, std::mt19937_64& rng) {
  DepthImage img{raw.width, raw.height,
                 std::vector<float>(raw.values.size())};
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    double v = camera.min_range / std::max(raw.values[i], 1e-9);
    if (sigma > 0.0) v += sigma * noise(rng);
    img.values[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

void write_pgm(const std::string& path, const DepthImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.values) {
    const auto byte = static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(byte));
  }
}

}  // namespace gaterace
