#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "featfield/ops.hpp"
#include "featfield/rng.hpp"
#include "featfield/tensor.hpp"

namespace ff {

// Registry of named trainable leaf tensors. Iteration order is registration
// order, which makes optimizer sweeps and checkpoints deterministic.
class ParamStore {
 public:
  // Registers a zero tensor (caller initializes values afterwards).
  Tensor add(const std::string& name, const std::vector<size_t>& shape, Dtype dt);
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  Tensor get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::vector<Tensor> tensors() const;
  size_t scalar_count() const;
  size_t scalar_count(const std::string& prefix) const;
  void zero_grads() const;

  // Checkpoint: <dir>/manifest.json plus one .gnft file per tensor.
  // load() requires the manifest to cover exactly the registered names with
  // matching shapes, and copies values in place.
  void save(const std::string& dir) const;
  void load(const std::string& dir);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out], undefined when bias is disabled
  bool has_bias = true;
  Tensor forward(const Tensor& x) const;  // [rows, in] -> [rows, out]
};

// He-normal weight init scaled by `gain` (1 = standard), zero bias.
Linear make_linear(ParamStore& store, const std::string& name, size_t in, size_t out, Rng& rng,
                   Dtype dt = Dtype::F32, bool bias = true, double gain = 1.0);

// conv3d -> per-channel standardization with affine -> leaky ReLU.
// Norm and activation can be disabled independently (e.g. output heads).
struct Conv3dBlock {
  Tensor w;  // [k,k,k,cin,cout]
  Tensor b;  // [cout]
  Tensor gamma, beta;
  int stride = 1, pad = 0;
  bool norm = true, act = true;
  double slope = 0.01;
  Tensor forward(const Tensor& x) const;
};

Conv3dBlock make_conv_block(ParamStore& store, const std::string& name, size_t cin, size_t cout,
                            size_t k, int stride, int pad, Rng& rng, Dtype dt = Dtype::F32,
                            bool norm = true, bool act = true, double slope = 0.01);

}  // namespace ff
