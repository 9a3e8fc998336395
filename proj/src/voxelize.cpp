#include "featfield/voxelize.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ff {

Tensor voxelize_rgbd(const Tensor& rgb, const Tensor& depth, const CameraModel& cam,
                     const Vec3& ws_lo, const Vec3& ws_hi, size_t n) {
  if (n < 1) throw std::runtime_error("voxelize_rgbd: grid size must be positive");
  const size_t H = static_cast<size_t>(cam.h), W = static_cast<size_t>(cam.w);
  if (rgb.shape() != std::vector<size_t>{H, W, 3})
    throw std::runtime_error("voxelize_rgbd: rgb shape mismatch with camera (" + rgb.shape_str() +
                             ")");
  if (depth.shape() != std::vector<size_t>{H, W})
    throw std::runtime_error("voxelize_rgbd: depth shape mismatch with camera (" +
                             depth.shape_str() + ")");
  const Vec3 ext = ws_hi - ws_lo;
  if (ext.x <= 0 || ext.y <= 0 || ext.z <= 0)
    throw std::runtime_error("voxelize_rgbd: empty workspace bounds");

  Tensor grid = Tensor::zeros({n, n, n, kVoxelChannels}, Dtype::F32);
  auto* g = grid.f32();
  const double nd = static_cast<double>(n);
  size_t hits = 0;
  for (size_t iy = 0; iy < H; ++iy) {
    for (size_t ix = 0; ix < W; ++ix) {
      const size_t pix = iy * W + ix;
      const Ray r = ray_for_pixel(cam, static_cast<int>(ix), static_cast<int>(iy));
      const double t = depth.at(pix);
      const Vec3 p = r.o + r.d * t;
      const double fx = (p.x - ws_lo.x) / ext.x * nd;
      const double fy = (p.y - ws_lo.y) / ext.y * nd;
      const double fz = (p.z - ws_lo.z) / ext.z * nd;
      if (fx < 0 || fy < 0 || fz < 0 || fx >= nd || fy >= nd || fz >= nd) continue;
      const size_t i0 = std::min(static_cast<size_t>(fx), n - 1);
      const size_t i1 = std::min(static_cast<size_t>(fy), n - 1);
      const size_t i2 = std::min(static_cast<size_t>(fz), n - 1);
      float* cell = g + ((i0 * n + i1) * n + i2) * kVoxelChannels;
      cell[0] = static_cast<float>(rgb.at(pix * 3 + 0));
      cell[1] = static_cast<float>(rgb.at(pix * 3 + 1));
      cell[2] = static_cast<float>(rgb.at(pix * 3 + 2));
      cell[3] = static_cast<float>(p.x);
      cell[4] = static_cast<float>(p.y);
      cell[5] = static_cast<float>(p.z);
      cell[6] = static_cast<float>((i0 + 0.5) / nd);
      cell[7] = static_cast<float>((i1 + 0.5) / nd);
      cell[8] = static_cast<float>((i2 + 0.5) / nd);
      cell[9] = 1.0f;
      ++hits;
    }
  }
  if (hits == 0)
    std::fprintf(stderr,
                 "[voxelize] warning: no depth points landed inside the workspace; "
                 "returning an empty grid\n");
  return grid;
}

}  // namespace ff
