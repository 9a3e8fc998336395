#pragma once

#include <array>
#include <string>
#include <vector>

#include "featfield/vec3.hpp"

namespace ff {

struct Ray {
  Vec3 o;       // origin (m)
  Vec3 d;       // unit direction
  double t_n = 0, t_f = 0;
};

// Pinhole camera, OpenCV axes: x right, y down, z forward.
struct CameraModel {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int h = 0, w = 0;
  double near = 0.01, far = 10.0;
  std::array<double, 16> c2w{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};  // row-major

  Vec3 position() const { return {c2w[3], c2w[7], c2w[11]}; }
  Vec3 axis_x() const { return {c2w[0], c2w[4], c2w[8]}; }
  Vec3 axis_y() const { return {c2w[1], c2w[5], c2w[9]}; }
  Vec3 axis_z() const { return {c2w[2], c2w[6], c2w[10]}; }  // optical axis

  // Throws if the rotation block is not orthonormal (1e-6) or near/far are bad.
  void validate() const;

  // Camera at eye, optical axis toward target, world up approximately `up`.
  static CameraModel look_at(Vec3 eye, Vec3 target, Vec3 up, double fx, double fy, double cx,
                             double cy, int h, int w, double near, double far);

  std::string to_json() const;
  static CameraModel from_json(const std::string& text);
  void save_json(const std::string& path) const;
  static CameraModel load_json(const std::string& path);
};

// Ray through continuous pixel coordinates (u,v); (cx,cy) maps to the optical
// axis. Full-image rendering passes pixel centers (ix+0.5, iy+0.5).
Ray ray_through(const CameraModel& cam, double u, double v);
inline Ray ray_for_pixel(const CameraModel& cam, int ix, int iy) {
  return ray_through(cam, ix + 0.5, iy + 0.5);
}

std::vector<Ray> generate_rays(const CameraModel& cam, const std::vector<std::pair<double, double>>& uv);

}  // namespace ff
