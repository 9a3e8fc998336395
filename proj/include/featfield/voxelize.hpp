#pragma once

#include "featfield/camera.hpp"
#include "featfield/tensor.hpp"
#include "featfield/vec3.hpp"

namespace ff {

// Number of channels in the observation voxel grid:
// RGB (3) + world position (3) + normalized cell index (3) + occupancy (1).
constexpr size_t kVoxelChannels = 10;

// Back-projects an RGB-D view into a dense [n,n,n,10] float grid over the
// axis-aligned workspace [ws_lo, ws_hi]. `depth` holds the Euclidean distance
// along each unit pixel ray. Points outside the workspace are dropped; when
// several pixels land in one cell the last one in row-major pixel order wins.
// If every point falls outside, a warning is printed and the grid stays empty.
Tensor voxelize_rgbd(const Tensor& rgb, const Tensor& depth, const CameraModel& cam,
                     const Vec3& ws_lo, const Vec3& ws_hi, size_t n);

}  // namespace ff
