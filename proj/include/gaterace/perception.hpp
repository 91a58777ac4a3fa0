#pragma once

#include <random>
#include <vector>

#include "gaterace/dynamics.hpp"
#include "gaterace/world.hpp"

namespace gaterace {

struct CameraModel {
  int width = 64;
  int height = 64;
  double horizontal_fov = 87.0 * std::numbers::pi / 180.0;
  double max_range = 10.0;
  double min_range = 0.3;  // inverse-depth normalization
  Vec3 offset_B = Vec3::Zero();
  Quat rotation_B = Quat::Identity();  // camera (x forward, z up) -> body

  void validate() const;
  double focal() const;
  // Unit ray direction for pixel (row, col) in the camera frame. Column
  // width/2 and row height/2 lie exactly on the optical axis.
  Vec3 pixel_ray(int row, int col) const;
  double vertical_fov() const;
};

// Row-major grid of values, width * height entries.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> values;

  T& at(int row, int col) { return values[row * width + col]; }
  const T& at(int row, int col) const { return values[row * width + col]; }
};

using DepthGrid = Grid<double>;
// Inverse depth in [0, 1].
using DepthImage = Grid<float>;

DepthGrid render_depth(const QuadState& state, const Scene& scene,
                       const CameraModel& camera);

DepthImage to_observation(const DepthGrid& raw, const CameraModel& camera,
                          double sigma, std::mt19937_64& rng);

// Binary P5 image for inspection; values mapped linearly to 0..255.
void write_pgm(const std::string& path, const DepthImage& image);

}  // namespace gaterace
