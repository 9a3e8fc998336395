#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "featfield/tensor.hpp"

namespace ff {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool lamb = false;  // apply a per-tensor trust ratio to the update
};

// Adam with optional LAMB-style trust ratio. Moment state is kept in f64 and
// swept serially in parameter-registration order, so steps are deterministic.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimConfig& cfg);
  void step();
  void zero_grad() const;
  size_t steps_taken() const { return t_; }

  // Moment state and step counter round-trip through a directory (m.gnft,
  // v.gnft, state.json). load requires matching parameter scalar counts.
  void save(const std::string& dir) const;
  void load(const std::string& dir);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimConfig cfg_;
  size_t t_ = 0;
};

}  // namespace ff
