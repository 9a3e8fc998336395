#include "featfield/encoder.hpp"

#include <stdexcept>

namespace ff {

using namespace ff::ops;

VoxelEncoder::VoxelEncoder(ParamStore& store, const std::string& prefix,
                           const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const Dtype dt = cfg.dtype;
  const double s = cfg.leaky_slope;
  auto blk = [&](const char* name, size_t cin, size_t cout, size_t k, int stride, bool norm,
                 bool act) {
    return make_conv_block(store, prefix + "/" + name, cin, cout, k, stride,
                           static_cast<int>(k / 2), rng, dt, norm, act, s);
  };
  conv0_ = blk("conv0", cfg.in_channels, cfg.c0, 3, 1, true, true);
  d1_ = blk("d1", cfg.c0, cfg.c1, 3, 2, true, true);
  d2_ = blk("d2", cfg.c1, cfg.c1, 3, 1, true, true);
  d3_ = blk("d3", cfg.c1, cfg.c2, 3, 2, true, true);
  d4_ = blk("d4", cfg.c2, cfg.c2, 3, 1, true, true);
  d5_ = blk("d5", cfg.c2, cfg.c3, 3, 2, true, true);
  d6_ = blk("d6", cfg.c3, cfg.c3, 3, 1, true, true);
  u1_ = blk("u1", cfg.c3, cfg.c2, 3, 1, true, true);
  u2_ = blk("u2", cfg.c2, cfg.c1, 3, 1, true, true);
  u3_ = blk("u3", cfg.c1, cfg.c0, 3, 1, true, true);
  out_ = blk("out", cfg.c0, cfg.out_channels, cfg.out_kernel, 1, false, false);
}

Tensor VoxelEncoder::forward(const Tensor& obs) const {
  if (obs.rank() != 4 || obs.shape()[3] != cfg_.in_channels)
    throw std::runtime_error("VoxelEncoder: expected [n,n,n," +
                             std::to_string(cfg_.in_channels) + "] input, got " +
                             obs.shape_str());
  auto res_to = [](const Tensor& x, const Tensor& like) {
    const auto& s = like.shape();
    return upsample_trilinear3d(x, s[0], s[1], s[2]);
  };
  const Tensor x0 = conv0_.forward(obs);
  const Tensor x1 = d1_.forward(x0);
  const Tensor x2 = d2_.forward(x1);
  const Tensor x3 = d3_.forward(x2);
  const Tensor x4 = d4_.forward(x3);
  const Tensor x5 = d5_.forward(x4);
  const Tensor x6 = d6_.forward(x5);
  Tensor y = u1_.forward(res_to(x6, x4));
  if (cfg_.skips) y = add(y, x4);
  y = u2_.forward(res_to(y, x2));
  if (cfg_.skips) y = add(y, x2);
  y = u3_.forward(res_to(y, x0));
  if (cfg_.skips) y = add(y, x0);
  return out_.forward(y);
}

}  // namespace ff
