#include "featfield/camera.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ff {

void CameraModel::validate() const {
  const Vec3 ax = axis_x(), ay = axis_y(), az = axis_z();
  const double tol = 1e-6;
  auto near1 = [&](double v) { return std::abs(v - 1.0) <= tol; };
  auto near0 = [&](double v) { return std::abs(v) <= tol; };
  if (!near1(norm(ax)) || !near1(norm(ay)) || !near1(norm(az)) || !near0(dot(ax, ay)) ||
      !near0(dot(ax, az)) || !near0(dot(ay, az)))
    throw std::runtime_error("camera: rotation block is not orthonormal");
  if (!(near > 0 && near < far)) throw std::runtime_error("camera: require 0 < near < far");
  if (h <= 0 || w <= 0) throw std::runtime_error("camera: bad image extents");
  for (int i = 0; i < 4; ++i) {
    const double want = i == 3 ? 1.0 : 0.0;
    if (std::abs(c2w[12 + i] - want) > tol)
      throw std::runtime_error("camera: last matrix row must be [0,0,0,1]");
  }
}

CameraModel CameraModel::look_at(Vec3 eye, Vec3 target, Vec3 up, double fx, double fy, double cx,
                                 double cy, int h, int w, double near, double far) {
  Vec3 zc = normalized(target - eye);  // forward
  Vec3 u = up;
  if (norm(cross(zc, u)) < 1e-9) u = {0, 1, 0};  // degenerate up: pick another
  if (norm(cross(zc, u)) < 1e-9) u = {1, 0, 0};
  Vec3 xc = normalized(cross(zc, u));  // right
  Vec3 yc = cross(zc, xc);             // down (right-handed: x cross y = z)

  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.h = h;
  cam.w = w;
  cam.near = near;
  cam.far = far;
  cam.c2w = {xc.x, yc.x, zc.x, eye.x,
             xc.y, yc.y, zc.y, eye.y,
             xc.z, yc.z, zc.z, eye.z,
             0,    0,    0,    1};
  cam.validate();
  return cam;
}

std::string CameraModel::to_json() const {
  nlohmann::json j;
  j["fx"] = fx;
  j["fy"] = fy;
  j["cx"] = cx;
  j["cy"] = cy;
  j["H"] = h;
  j["W"] = w;
  j["near"] = near;
  j["far"] = far;
  j["c2w"] = c2w;
  return j.dump(2);
}

CameraModel CameraModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CameraModel cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.h = j.at("H").get<int>();
  cam.w = j.at("W").get<int>();
  cam.near = j.at("near").get<double>();
  cam.far = j.at("far").get<double>();
  auto m = j.at("c2w").get<std::vector<double>>();
  if (m.size() != 16) throw std::runtime_error("camera json: c2w must have 16 entries");
  std::copy(m.begin(), m.end(), cam.c2w.begin());
  cam.validate();
  return cam;
}

void CameraModel::save_json(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << to_json() << "\n";
}

CameraModel CameraModel::load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

Ray ray_through(const CameraModel& cam, double u, double v) {
  const Vec3 dir_cam = {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  const Vec3 world = cam.axis_x() * dir_cam.x + cam.axis_y() * dir_cam.y + cam.axis_z() * dir_cam.z;
  Ray r;
  r.o = cam.position();
  r.d = normalized(world);
  r.t_n = cam.near;
  r.t_f = cam.far;
  return r;
}

std::vector<Ray> generate_rays(const CameraModel& cam,
                               const std::vector<std::pair<double, double>>& uv) {
  std::vector<Ray> rays;
  rays.reserve(uv.size());
  for (const auto& [u, v] : uv) rays.push_back(ray_through(cam, u, v));
  return rays;
}

}  // namespace ff
