#pragma once

#include "featfield/nn.hpp"

namespace ff {

// 3D UNet-style encoder over the observation voxel grid.
// Three stride-2 stages down, mirrored trilinear-resize + conv stages up with
// additive skip connections, then a plain projection to out_channels.
// Spatial resolution of the output matches the input.
struct EncoderConfig {
  size_t in_channels = 10;
  size_t c0 = 8, c1 = 16, c2 = 32, c3 = 64;  // stage widths
  size_t out_channels = 128;
  size_t out_kernel = 3;  // 1 for the small fast preset
  bool skips = true;      // additive skip connections (ablation switch)
  double leaky_slope = 0.01;
  Dtype dtype = Dtype::F32;
};

class VoxelEncoder {
 public:
  VoxelEncoder() = default;
  VoxelEncoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

  // [n,n,n,in_channels] -> [n,n,n,out_channels]; throws on a channel mismatch.
  Tensor forward(const Tensor& obs) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Conv3dBlock conv0_, d1_, d2_, d3_, d4_, d5_, d6_, u1_, u2_, u3_, out_;
};

}  // namespace ff
