#pragma once

#include <functional>
#include <string>
#include <vector>

#include "featfield/tensor.hpp"

namespace ff {

struct GradCheckResult {
  bool ok = false;
  double max_rel_err = 0.0;
  std::string worst;  // "input i, coord j"
};

// Central-difference check of d(loss)/d(inputs) in f64.
// fn must rebuild its graph from the leaves on every call and return a scalar.
// Relative error metric: |a-n| / max(1, |a|, |n|).
GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, double eps = 1e-5, double tol = 1e-4);

struct SuiteEntry {
  std::string name;
  GradCheckResult result;
};

// Named gradient-check suites; all run in f64. "ops" covers every primitive,
// "render" the rendering path down to the reconstruction loss, "policy" the
// action pathway. Used by both the CLI and the acceptance tests.
std::vector<SuiteEntry> gradcheck_ops_suite();
std::vector<SuiteEntry> gradcheck_render_suite();
std::vector<SuiteEntry> gradcheck_policy_suite();

}  // namespace ff
