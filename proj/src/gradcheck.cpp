#include "featfield/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "featfield/ops.hpp"
#include "featfield/rng.hpp"

namespace ff {

GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, double eps, double tol) {
  for (auto& t : inputs) {
    if (t.dtype() != Dtype::F64) throw std::runtime_error("gradcheck: inputs must be f64");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = fn(inputs);
  if (loss.dtype() != Dtype::F64 || loss.numel() != 1)
    throw std::runtime_error("gradcheck: fn must return an f64 scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    std::vector<double> g(t.numel());
    for (size_t i = 0; i < g.size(); ++i) g[i] = t.grad().at(i);
    analytic.push_back(std::move(g));
  }

  GradCheckResult res;
  res.ok = true;
  NoGrad guard;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (size_t i = 0; i < t.numel(); ++i) {
      const double x0 = t.at(i);
      t.set(i, x0 + eps);
      const double lp = fn(inputs).item();
      t.set(i, x0 - eps);
      const double lm = fn(inputs).item();
      t.set(i, x0);
      const double num = (lp - lm) / (2 * eps);
      const double ana = analytic[ti][i];
      if (!std::isfinite(num) || !std::isfinite(ana)) {
        res.ok = false;
        res.max_rel_err = INFINITY;
        res.worst = "input " + std::to_string(ti) + ", coord " + std::to_string(i) + " (non-finite)";
        return res;
      }
      const double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(ti) + ", coord " + std::to_string(i);
      }
    }
  }
  res.ok = res.max_rel_err <= tol;
  return res;
}

namespace {

using ff::ops::sum_all;

Tensor rand_f64(Rng& rng, std::vector<size_t> shape, double lo = -1.5, double hi = 1.5,
                double keepout = 0.0) {
  Tensor t = Tensor::zeros(std::move(shape), Dtype::F64);
  for (size_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(lo, hi);
    while (keepout > 0.0 && std::abs(v) < keepout) v = rng.uniform(lo, hi);
    t.set(i, v);
  }
  return t;
}

// Project an arbitrary-shape output to a scalar with a fixed random weighting
// so every output coordinate influences the loss.
Tensor project(const Tensor& out, uint64_t salt) {
  Rng rng(0xfeedf00d ^ salt);
  Tensor p = rand_f64(rng, out.shape(), 0.25, 1.75);
  return sum_all(ff::ops::mul(out, p));
}

}  // namespace

std::vector<SuiteEntry> gradcheck_ops_suite() {
  namespace o = ff::ops;
  std::vector<SuiteEntry> out;
  auto run = [&](const std::string& name, std::vector<Tensor> inputs,
                 std::function<Tensor(const std::vector<Tensor>&)> fn) {
    out.push_back({name, gradcheck(fn, std::move(inputs))});
  };
  Rng rng(20240817);

  run("add", {rand_f64(rng, {3, 4}), rand_f64(rng, {3, 4})},
      [](const std::vector<Tensor>& in) { return project(o::add(in[0], in[1]), 1); });
  run("add_bias_broadcast", {rand_f64(rng, {3, 4}), rand_f64(rng, {4})},
      [](const std::vector<Tensor>& in) { return project(o::add(in[0], in[1]), 2); });
  run("sub", {rand_f64(rng, {5}), rand_f64(rng, {5})},
      [](const std::vector<Tensor>& in) { return project(o::sub(in[0], in[1]), 3); });
  run("mul", {rand_f64(rng, {2, 3, 2}), rand_f64(rng, {2, 3, 2})},
      [](const std::vector<Tensor>& in) { return project(o::mul(in[0], in[1]), 4); });
  run("mul_suffix_broadcast", {rand_f64(rng, {4, 3}), rand_f64(rng, {3})},
      [](const std::vector<Tensor>& in) { return project(o::mul(in[0], in[1]), 5); });
  run("mul_prefix", {rand_f64(rng, {4, 3}), rand_f64(rng, {4})},
      [](const std::vector<Tensor>& in) { return project(o::mul_prefix(in[0], in[1]), 6); });
  run("neg", {rand_f64(rng, {7})},
      [](const std::vector<Tensor>& in) { return project(o::neg(in[0]), 7); });
  run("add_scalar", {rand_f64(rng, {6})},
      [](const std::vector<Tensor>& in) { return project(o::add_scalar(in[0], 0.37), 8); });
  run("scale", {rand_f64(rng, {6})},
      [](const std::vector<Tensor>& in) { return project(o::scale(in[0], -1.3), 9); });

  run("relu", {rand_f64(rng, {40}, -1.5, 1.5, 1e-3)},
      [](const std::vector<Tensor>& in) { return project(o::relu(in[0]), 10); });
  run("leaky_relu", {rand_f64(rng, {40}, -1.5, 1.5, 1e-3)},
      [](const std::vector<Tensor>& in) { return project(o::leaky_relu(in[0], 0.01), 11); });
  run("sigmoid", {rand_f64(rng, {20}, -4, 4)},
      [](const std::vector<Tensor>& in) { return project(o::sigmoid(in[0]), 12); });
  run("softplus", {rand_f64(rng, {20}, -4, 4)},
      [](const std::vector<Tensor>& in) { return project(o::softplus(in[0]), 13); });
  run("vexp", {rand_f64(rng, {20}, -2, 2)},
      [](const std::vector<Tensor>& in) { return project(o::vexp(in[0]), 14); });
  run("vsin", {rand_f64(rng, {20}, -3, 3)},
      [](const std::vector<Tensor>& in) { return project(o::vsin(in[0]), 15); });
  run("vcos", {rand_f64(rng, {20}, -3, 3)},
      [](const std::vector<Tensor>& in) { return project(o::vcos(in[0]), 16); });
  run("square", {rand_f64(rng, {20})},
      [](const std::vector<Tensor>& in) { return project(o::square(in[0]), 17); });

  run("matmul", {rand_f64(rng, {3, 5}), rand_f64(rng, {5, 4})},
      [](const std::vector<Tensor>& in) { return project(o::matmul(in[0], in[1]), 18); });
  run("transpose2d", {rand_f64(rng, {3, 5})},
      [](const std::vector<Tensor>& in) { return project(o::transpose2d(in[0]), 19); });

  run("conv3d_k3s1p1", {rand_f64(rng, {3, 4, 3, 2}), rand_f64(rng, {3, 3, 3, 2, 3}), rand_f64(rng, {3})},
      [](const std::vector<Tensor>& in) { return project(o::conv3d(in[0], in[1], in[2], 1, 1), 20); });
  run("conv3d_k3s2p1", {rand_f64(rng, {5, 5, 5, 2}), rand_f64(rng, {3, 3, 3, 2, 4}), rand_f64(rng, {4})},
      [](const std::vector<Tensor>& in) { return project(o::conv3d(in[0], in[1], in[2], 2, 1), 21); });
  run("conv3d_k1_nobias", {rand_f64(rng, {3, 3, 3, 4}), rand_f64(rng, {1, 1, 1, 4, 2})},
      [](const std::vector<Tensor>& in) { return project(o::conv3d(in[0], in[1], Tensor(), 1, 0), 22); });
  run("conv3d_k5s5p0", {rand_f64(rng, {5, 5, 5, 2}), rand_f64(rng, {5, 5, 5, 2, 3}), rand_f64(rng, {3})},
      [](const std::vector<Tensor>& in) { return project(o::conv3d(in[0], in[1], in[2], 5, 0), 23); });

  run("upsample_trilinear3d", {rand_f64(rng, {2, 3, 2, 3})},
      [](const std::vector<Tensor>& in) { return project(o::upsample_trilinear3d(in[0], 5, 5, 4), 24); });

  {
    // keep query points interior and off cell-center kinks
    Rng prng(991);
    Tensor pts = Tensor::zeros({10, 3}, Dtype::F64);
    for (size_t i = 0; i < pts.numel(); ++i) {
      double v;
      do {
        v = prng.uniform(0.15, 0.85);
      } while (std::abs(v * 4.0 - 0.5 - std::round(v * 4.0 - 0.5)) < 0.02);
      pts.set(i, v);
    }
    run("grid_sample_trilinear", {rand_f64(rng, {4, 4, 4, 3}), pts},
        [](const std::vector<Tensor>& in) { return project(o::grid_sample_trilinear(in[0], in[1]), 25); });
  }

  run("softmax_axis0", {rand_f64(rng, {6, 3})},
      [](const std::vector<Tensor>& in) { return project(o::softmax(in[0], 0), 26); });
  run("softmax_axis1", {rand_f64(rng, {4, 7})},
      [](const std::vector<Tensor>& in) { return project(o::softmax(in[0], 1), 27); });
  run("log_softmax", {rand_f64(rng, {4, 7})},
      [](const std::vector<Tensor>& in) { return project(o::log_softmax(in[0], 1), 28); });

  run("sum_all", {rand_f64(rng, {3, 4})},
      [](const std::vector<Tensor>& in) { return o::sum_all(in[0]); });
  run("mean_all", {rand_f64(rng, {3, 4})},
      [](const std::vector<Tensor>& in) { return o::mean_all(in[0]); });
  run("sum_axis", {rand_f64(rng, {3, 4, 2})},
      [](const std::vector<Tensor>& in) { return project(o::sum_axis(in[0], 1), 29); });
  run("max_axis", {rand_f64(rng, {5, 4})},
      [](const std::vector<Tensor>& in) { return project(o::max_axis(in[0], 0), 30); });

  run("reshape", {rand_f64(rng, {3, 4})},
      [](const std::vector<Tensor>& in) { return project(o::reshape(in[0], {2, 6}), 31); });
  run("concat_axis0", {rand_f64(rng, {2, 3}), rand_f64(rng, {4, 3})},
      [](const std::vector<Tensor>& in) { return project(o::concat({in[0], in[1]}, 0), 32); });
  run("concat_axis1", {rand_f64(rng, {3, 2}), rand_f64(rng, {3, 5})},
      [](const std::vector<Tensor>& in) { return project(o::concat({in[0], in[1]}, 1), 33); });
  run("slice", {rand_f64(rng, {4, 6})},
      [](const std::vector<Tensor>& in) { return project(o::slice(in[0], 1, 2, 3), 34); });
  run("repeat_rows", {rand_f64(rng, {5})},
      [](const std::vector<Tensor>& in) { return project(o::repeat_rows(in[0], 4), 35); });
  run("take_per_row", {rand_f64(rng, {4, 5})}, [](const std::vector<Tensor>& in) {
    return project(o::take_per_row(in[0], {1, 0, 4, 2}), 36);
  });
  run("exclusive_cumsum", {rand_f64(rng, {3, 5})},
      [](const std::vector<Tensor>& in) { return project(o::exclusive_cumsum(in[0], 1), 37); });

  run("norm_lastdim", {rand_f64(rng, {4, 6})},
      [](const std::vector<Tensor>& in) { return project(o::norm_lastdim(in[0], 1e-5), 38); });
  run("norm_per_channel", {rand_f64(rng, {2, 3, 2, 4})},
      [](const std::vector<Tensor>& in) { return project(o::norm_per_channel(in[0], 1e-5), 39); });

  return out;
}

}  // namespace ff
