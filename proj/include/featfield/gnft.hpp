#pragma once

#include <string>

#include "featfield/tensor.hpp"

namespace ff::gnft {

// Tensor container used for dataset and checkpoint files.
// Layout: magic "GNFT", u32 LE version=1, u8 dtype (1=f32, 2=f64), u8 rank,
// rank x u64 LE extents, then the row-major little-endian payload.
void save(const std::string& path, const Tensor& t);
Tensor load(const std::string& path);

}  // namespace ff::gnft
