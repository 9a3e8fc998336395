#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "featfield/encoder.hpp"
#include "featfield/gradcheck.hpp"
#include "featfield/nn.hpp"

using namespace ff;
using namespace ff::ops;
namespace fs = std::filesystem;

TEST_CASE("param store registers, rejects duplicates, counts by prefix") {
  ParamStore store;
  Rng rng(1);
  make_linear(store, "head/a", 4, 3, rng);
  make_linear(store, "head/b", 4, 3, rng, Dtype::F32, false);
  CHECK(store.scalar_count() == 4 * 3 + 3 + 4 * 3);
  CHECK(store.scalar_count("head/a") == 15);
  CHECK(store.scalar_count("head/") == 27);
  CHECK(store.has("head/a/w"));
  CHECK(!store.has("head/c/w"));
  CHECK_THROWS(store.get("head/c/w"));
  CHECK_THROWS(store.add("head/a/w", {2}, Dtype::F32));
  CHECK(store.names().front() == "head/a/w");
}

TEST_CASE("linear layer computes x*w + b") {
  ParamStore store;
  Rng rng(2);
  Linear l = make_linear(store, "l", 2, 2, rng);
  l.w.set(0, 1.0);
  l.w.set(1, 2.0);
  l.w.set(2, 3.0);
  l.w.set(3, 4.0);
  l.b.set(0, 0.5);
  l.b.set(1, -0.5);
  Tensor x = Tensor::zeros({1, 2}, Dtype::F32);
  x.set(0, 1.0);
  x.set(1, 1.0);
  Tensor y = l.forward(x);
  CHECK(y.at(0) == doctest::Approx(1 + 3 + 0.5));
  CHECK(y.at(1) == doctest::Approx(2 + 4 - 0.5));
}

TEST_CASE("a bare 3x3x3 conv block from 1 to 1 channel has 28 parameters") {
  ParamStore store;
  Rng rng(3);
  make_conv_block(store, "c", 1, 1, 3, 1, 1, rng, Dtype::F32, false, false);
  CHECK(store.scalar_count() == 28);
}

TEST_CASE("conv block with norm standardizes channels before the affine") {
  ParamStore store;
  Rng rng(4);
  Conv3dBlock c = make_conv_block(store, "c", 2, 3, 3, 1, 1, rng, Dtype::F32, true, false);
  CHECK(store.scalar_count() == 27 * 2 * 3 + 3 + 3 + 3);
  Tensor x = Tensor::zeros({4, 4, 4, 2}, Dtype::F32);
  Rng data(5);
  for (size_t i = 0; i < x.numel(); ++i) x.set(i, data.normal());
  Tensor y = c.forward(x);
  REQUIRE(y.shape() == std::vector<size_t>{4, 4, 4, 3});
  // gamma=1, beta=0 at init: each output channel is standardized.
  for (size_t ch = 0; ch < 3; ++ch) {
    double m = 0, v = 0;
    for (size_t i = 0; i < 64; ++i) m += y.at(i * 3 + ch);
    m /= 64;
    for (size_t i = 0; i < 64; ++i) {
      const double d = y.at(i * 3 + ch) - m;
      v += d * d;
    }
    v /= 64;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-3);
  }
}

TEST_CASE("param store save/load round-trips values and validates structure") {
  const std::string dir = "/tmp/ff_nn_ckpt_test";
  fs::remove_all(dir);
  ParamStore a;
  Rng rng(6);
  make_linear(a, "enc/l0", 3, 4, rng);
  make_conv_block(a, "enc/c0", 1, 2, 3, 1, 1, rng);
  a.save(dir);

  ParamStore b;
  Rng rng2(999);  // different init; load must overwrite
  make_linear(b, "enc/l0", 3, 4, rng2);
  make_conv_block(b, "enc/c0", 1, 2, 3, 1, 1, rng2);
  b.load(dir);
  for (const auto& name : a.names()) {
    const Tensor ta = a.get(name), tb = b.get(name);
    REQUIRE(ta.numel() == tb.numel());
    for (size_t i = 0; i < ta.numel(); ++i) CHECK(ta.at(i) == tb.at(i));
  }

  ParamStore c;  // structure mismatch: fewer tensors
  Rng rng3(1);
  make_linear(c, "enc/l0", 3, 4, rng3);
  CHECK_THROWS(c.load(dir));

  ParamStore d;  // shape mismatch
  Rng rng4(1);
  make_linear(d, "enc/l0", 3, 5, rng4);
  make_conv_block(d, "enc/c0", 1, 2, 3, 1, 1, rng4);
  CHECK_THROWS(d.load(dir));
  fs::remove_all(dir);
}

namespace {
EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.in_channels = 2;
  cfg.c0 = 2;
  cfg.c1 = 2;
  cfg.c2 = 3;
  cfg.c3 = 3;
  cfg.out_channels = 2;
  cfg.out_kernel = 1;
  cfg.dtype = Dtype::F64;
  return cfg;
}
}  // namespace

TEST_CASE("full-scale encoder parameter count sits in the contract window") {
  ParamStore store;
  Rng rng(7);
  EncoderConfig cfg;  // defaults: 10 -> 128 channels
  VoxelEncoder enc(store, "encoder", cfg, rng);
  const size_t n = store.scalar_count("encoder");
  CHECK(n == 321104);
  CHECK(n >= 200000);
  CHECK(n <= 400000);
}

TEST_CASE("encoder maps [n,n,n,10] to [n,n,n,out] and rejects bad channels") {
  ParamStore store;
  Rng rng(8);
  EncoderConfig cfg;
  cfg.out_channels = 12;
  cfg.out_kernel = 1;
  VoxelEncoder enc(store, "enc", cfg, rng);
  Tensor obs = Tensor::zeros({8, 8, 8, 10}, Dtype::F32);
  Rng data(9);
  for (size_t i = 0; i < obs.numel(); ++i) obs.set(i, data.uniform());
  NoGrad ng;
  Tensor v = enc.forward(obs);
  CHECK(v.shape() == std::vector<size_t>{8, 8, 8, 12});
  CHECK_THROWS(enc.forward(Tensor::zeros({8, 8, 8, 9}, Dtype::F32)));
  CHECK_THROWS(enc.forward(Tensor::zeros({8, 8, 10}, Dtype::F32)));
}

TEST_CASE("translating a blob translates the encoder's response") {
  ParamStore store;
  Rng rng(10);
  EncoderConfig cfg;
  cfg.out_channels = 4;
  cfg.out_kernel = 1;
  VoxelEncoder enc(store, "enc", cfg, rng);
  NoGrad ng;
  auto with_blob = [&](size_t at) {
    Tensor obs = Tensor::zeros({8, 8, 8, 10}, Dtype::F32);
    for (size_t c = 0; c < 10; ++c) obs.set(((at * 8 + at) * 8 + at) * 10 + c, 1.0);
    return enc.forward(obs);
  };
  Tensor a = with_blob(2), b = with_blob(5);
  double diff = 0;
  for (size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
  CHECK(diff > 1e-4);
}

TEST_CASE("encoder is deterministic for a fixed seed") {
  auto build = [](uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    EncoderConfig cfg = tiny_cfg();
    VoxelEncoder enc(store, "enc", cfg, rng);
    Tensor obs = Tensor::zeros({6, 6, 6, 2}, Dtype::F64);
    Rng data(55);
    for (size_t i = 0; i < obs.numel(); ++i) obs.set(i, data.uniform());
    NoGrad ng;
    return enc.forward(obs);
  };
  Tensor a = build(33), b = build(33), c = build(34);
  bool same = true, differs = false;
  for (size_t i = 0; i < a.numel(); ++i) {
    same = same && a.at(i) == b.at(i);
    differs = differs || a.at(i) != c.at(i);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("encoder gradients agree with central differences on a 6^3 grid") {
  ParamStore store;
  Rng rng(11);
  EncoderConfig cfg = tiny_cfg();
  VoxelEncoder enc(store, "enc", cfg, rng);
  Tensor obs = Tensor::zeros({6, 6, 6, 2}, Dtype::F64);
  Rng data(12);
  for (size_t i = 0; i < obs.numel(); ++i) obs.set(i, data.normal() * 0.5);
  // Jitter every parameter away from its init so no activation sits exactly
  // on the leaky-ReLU kink (beta starts at 0 and the 1^3 stage normalizes to
  // exactly 0 there, where central differences are ill-defined).
  for (Tensor t : store.tensors())
    for (size_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + 0.05 * data.normal());

  // Fixed projection weights turn the field output into a scalar.
  std::vector<double> pw;
  Rng proj(13);

  auto fn = [&](const std::vector<Tensor>& /*inputs*/) {
    Tensor out = enc.forward(obs);
    if (pw.empty())
      for (size_t i = 0; i < out.numel(); ++i) pw.push_back(proj.normal());
    Tensor w = Tensor::zeros(out.shape(), Dtype::F64);
    for (size_t i = 0; i < w.numel(); ++i) w.set(i, pw[i]);
    return sum_all(mul(out, w));
  };
  std::vector<Tensor> inputs = store.tensors();
  inputs.push_back(obs);
  const GradCheckResult r = gradcheck(fn, inputs, 1e-6, 2e-4);
  INFO(r.worst, " rel_err=", r.max_rel_err);
  CHECK(r.ok);
}
