#include "featfield/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "featfield/kernels.hpp"
#include "featfield/kernels_ref.hpp"

namespace ff::ops {

namespace {

namespace kr = ff::kernels;
namespace ref = ff::kernels::ref;

[[noreturn]] void fail(const char* op, const std::string& msg) {
  throw std::runtime_error(std::string(op) + ": " + msg);
}

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    fail(op, std::string("dtype mismatch ") + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) +
                 " for shapes " + a.shape_str() + " and " + b.shape_str());
}

std::shared_ptr<Node> make_node(const char* op, std::vector<size_t> shape, Dtype dt,
                                const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->dtype = dt;
  n->value = Buffer(dt, n->numel());
  bool req = false;
  if (grad_enabled())
    for (const Tensor& t : inputs)
      if (t.defined() && t.requires_grad()) req = true;
  if (req) {
    n->requires_grad = true;
    n->is_leaf = false;
    for (const Tensor& t : inputs)
      if (t.defined()) n->parents.push_back(t.ptr());
  }
  return n;
}

// (outer, n, inner) strides for a reduction along `axis`.
struct AxisSplit {
  size_t outer = 1, n = 1, inner = 1;
};
AxisSplit split_axis(const char* op, const std::vector<size_t>& shape, size_t axis) {
  if (axis >= shape.size()) fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
  AxisSplit s;
  for (size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class BinKind { Same, Suffix };

BinKind binary_kind(const char* op, const Tensor& a, const Tensor& b) {
  check_same_dtype(op, a, b);
  if (a.shape() == b.shape()) return BinKind::Same;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() < as.size() &&
      std::equal(bs.begin(), bs.end(), as.end() - long(bs.size())))
    return BinKind::Suffix;
  fail(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// ---- elementwise binary ----------------------------------------------------

enum class BinOp { Add, Sub, Mul };

template <typename T>
void bin_fwd(BinOp op, const T* a, const T* b, T* o, size_t reps, size_t bn) {
  for (size_t r = 0; r < reps; ++r) {
    const T* ar = a + r * bn;
    T* orow = o + r * bn;
    switch (op) {
      case BinOp::Add:
        for (size_t i = 0; i < bn; ++i) orow[i] = ar[i] + b[i];
        break;
      case BinOp::Sub:
        for (size_t i = 0; i < bn; ++i) orow[i] = ar[i] - b[i];
        break;
      case BinOp::Mul:
        for (size_t i = 0; i < bn; ++i) orow[i] = ar[i] * b[i];
        break;
    }
  }
}

Tensor binary(const char* name, BinOp bop, const Tensor& a, const Tensor& b) {
  BinKind kind = binary_kind(name, a, b);
  const size_t bn = b.numel();
  const size_t reps = a.numel() / std::max<size_t>(bn, 1);
  auto out = make_node(name, a.shape(), a.dtype(), {a, b});
  if (a.dtype() == Dtype::F32) {
    if (kind == BinKind::Same) {
      const auto& bk = kr::active();
      const size_t n = a.numel();
      if (bop == BinOp::Add) bk.add(a.f32(), b.f32(), out->value.f32(), n);
      if (bop == BinOp::Sub) bk.sub(a.f32(), b.f32(), out->value.f32(), n);
      if (bop == BinOp::Mul) bk.mul(a.f32(), b.f32(), out->value.f32(), n);
    } else {
      bin_fwd(bop, a.f32(), b.f32(), out->value.f32(), reps, bn);
    }
  } else {
    bin_fwd(bop, a.f64(), b.f64(), out->value.f64(), kind == BinKind::Same ? 1 : reps,
            kind == BinKind::Same ? a.numel() : bn);
  }
  if (out->requires_grad) {
    Node* an = a.node();
    Node* bn_ = b.node();
    Node* on = out.get();
    out->backward_fn = [name, bop, an, bn_, on, reps, bn]() {
      const size_t n = on->numel();
      if (an->requires_grad) {
        if (on->dtype == Dtype::F32) {
          const float* g = on->grad.f32();
          float* ga = an->grad.f32();
          if (bop == BinOp::Mul) {
            const float* bv = bn_->value.f32();
            for (size_t r = 0; r < reps; ++r)
              for (size_t i = 0; i < bn; ++i) ga[r * bn + i] += g[r * bn + i] * bv[i];
          } else {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        } else {
          const double* g = on->grad.f64();
          double* ga = an->grad.f64();
          if (bop == BinOp::Mul) {
            const double* bv = bn_->value.f64();
            for (size_t r = 0; r < reps; ++r)
              for (size_t i = 0; i < bn; ++i) ga[r * bn + i] += g[r * bn + i] * bv[i];
          } else {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        }
      }
      if (bn_->requires_grad) {
        const double sgn = bop == BinOp::Sub ? -1.0 : 1.0;
        if (on->dtype == Dtype::F32) {
          const float* g = on->grad.f32();
          float* gb = bn_->grad.f32();
          const float* av = an->value.f32();
          for (size_t r = 0; r < reps; ++r)
            for (size_t i = 0; i < bn; ++i) {
              float term = g[r * bn + i];
              if (bop == BinOp::Mul) term *= av[r * bn + i];
              gb[i] += float(sgn) * term;
            }
        } else {
          const double* g = on->grad.f64();
          double* gb = bn_->grad.f64();
          const double* av = an->value.f64();
          for (size_t r = 0; r < reps; ++r)
            for (size_t i = 0; i < bn; ++i) {
              double term = g[r * bn + i];
              if (bop == BinOp::Mul) term *= av[r * bn + i];
              gb[i] += sgn * term;
            }
        }
      }
    };
  }
  return Tensor(out);
}

// ---- unary -----------------------------------------------------------------

// fwd(x) -> value; dfn(x, y) -> local derivative
template <typename Fwd, typename Dfn>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Dfn dfn) {
  auto out = make_node(name, x.shape(), x.dtype(), {x});
  const size_t n = x.numel();
  if (x.dtype() == Dtype::F32) {
    const float* xv = x.f32();
    float* ov = out->value.f32();
    for (size_t i = 0; i < n; ++i) ov[i] = float(fwd(double(xv[i])));
  } else {
    const double* xv = x.f64();
    double* ov = out->value.f64();
    for (size_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, dfn]() {
      const size_t n = on->numel();
      if (!xn->requires_grad) return;
      if (on->dtype == Dtype::F32) {
        const float* g = on->grad.f32();
        const float* xv = xn->value.f32();
        const float* yv = on->value.f32();
        float* gx = xn->grad.f32();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i] * float(dfn(double(xv[i]), double(yv[i])));
      } else {
        const double* g = on->grad.f64();
        const double* xv = xn->value.f64();
        const double* yv = on->value.f64();
        double* gx = xn->grad.f64();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i] * dfn(xv[i], yv[i]);
      }
    };
  }
  return Tensor(out);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::Mul, a, b); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor add_scalar(const Tensor& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary("scale", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
               [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return stable_sigmoid(v); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x,
               [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
               [](double v, double) { return stable_sigmoid(v); });
}

Tensor vexp(const Tensor& x) {
  if (x.dtype() == Dtype::F32) {
    auto out = make_node("vexp", x.shape(), x.dtype(), {x});
    kr::active().vexp(x.f32(), out->value.f32(), x.numel());
    if (out->requires_grad) {
      Node* xn = x.node();
      Node* on = out.get();
      out->backward_fn = [xn, on]() {
        if (!xn->requires_grad) return;
        const size_t n = on->numel();
        const float* g = on->grad.f32();
        const float* y = on->value.f32();
        float* gx = xn->grad.f32();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
      };
    }
    return Tensor(out);
  }
  return unary("vexp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor vsin(const Tensor& x) {
  return unary("vsin", x, [](double v) { return std::sin(v); },
               [](double v, double) { return std::cos(v); });
}

Tensor vcos(const Tensor& x) {
  return unary("vcos", x, [](double v) { return std::cos(v); },
               [](double v, double) { return -std::sin(v); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor mul_prefix(const Tensor& x, const Tensor& s) {
  check_same_dtype("mul_prefix", x, s);
  if (x.rank() < 1) fail("mul_prefix", "x must have rank >= 1");
  const size_t L = x.shape().back();
  const size_t rows = x.numel() / std::max<size_t>(L, 1);
  if (s.numel() != rows)
    fail("mul_prefix", "s " + s.shape_str() + " does not match leading extents of x " + x.shape_str());
  auto out = make_node("mul_prefix", x.shape(), x.dtype(), {x, s});
  if (x.dtype() == Dtype::F32) {
    const float* xv = x.f32();
    const float* sv = s.f32();
    float* ov = out->value.f32();
    for (size_t r = 0; r < rows; ++r) kr::active().scale(xv + r * L, sv[r], ov + r * L, L);
  } else {
    const double* xv = x.f64();
    const double* sv = s.f64();
    double* ov = out->value.f64();
    for (size_t r = 0; r < rows; ++r)
      for (size_t i = 0; i < L; ++i) ov[r * L + i] = xv[r * L + i] * sv[r];
  }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* sn = s.node();
    Node* on = out.get();
    out->backward_fn = [xn, sn, on, rows, L]() {
      if (on->dtype == Dtype::F32) {
        const float* g = on->grad.f32();
        if (xn->requires_grad) {
          const float* sv = sn->value.f32();
          float* gx = xn->grad.f32();
          for (size_t r = 0; r < rows; ++r) kr::active().axpy(sv[r], g + r * L, gx + r * L, L);
        }
        if (sn->requires_grad) {
          const float* xv = xn->value.f32();
          float* gs = sn->grad.f32();
          for (size_t r = 0; r < rows; ++r) gs[r] += kr::active().dot(g + r * L, xv + r * L, L);
        }
      } else {
        const double* g = on->grad.f64();
        if (xn->requires_grad) {
          const double* sv = sn->value.f64();
          double* gx = xn->grad.f64();
          for (size_t r = 0; r < rows; ++r)
            for (size_t i = 0; i < L; ++i) gx[r * L + i] += g[r * L + i] * sv[r];
        }
        if (sn->requires_grad) {
          const double* xv = xn->value.f64();
          double* gs = sn->grad.f64();
          for (size_t r = 0; r < rows; ++r) {
            double acc = 0;
            for (size_t i = 0; i < L; ++i) acc += g[r * L + i] * xv[r * L + i];
            gs[r] += acc;
          }
        }
      }
    };
  }
  return Tensor(out);
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype("matmul", a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("matmul", "incompatible shapes " + a.shape_str() + " x " + b.shape_str());
  const size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto out = make_node("matmul", {M, N}, a.dtype(), {a, b});
  if (a.dtype() == Dtype::F32)
    kr::active().gemm_nn(M, N, K, a.f32(), b.f32(), out->value.f32(), false);
  else
    ref::gemm_nn(M, N, K, a.f64(), b.f64(), out->value.f64(), false);
  if (out->requires_grad) {
    Node* an = a.node();
    Node* bn = b.node();
    Node* on = out.get();
    out->backward_fn = [an, bn, on, M, N, K]() {
      if (on->dtype == Dtype::F32) {
        const float* g = on->grad.f32();
        if (an->requires_grad)
          kr::active().gemm_nt(M, K, N, g, bn->value.f32(), an->grad.f32(), true);
        if (bn->requires_grad)
          kr::active().gemm_tn(M, N, K, an->value.f32(), g, bn->grad.f32(), true);
      } else {
        const double* g = on->grad.f64();
        if (an->requires_grad) ref::gemm_nt(M, K, N, g, bn->value.f64(), an->grad.f64(), true);
        if (bn->requires_grad) ref::gemm_tn(M, N, K, an->value.f64(), g, bn->grad.f64(), true);
      }
    };
  }
  return Tensor(out);
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) fail("transpose2d", "rank-2 required, got " + x.shape_str());
  const size_t M = x.dim(0), N = x.dim(1);
  auto out = make_node("transpose2d", {N, M}, x.dtype(), {x});
  for (size_t i = 0; i < M; ++i)
    for (size_t j = 0; j < N; ++j) out->value.set(j * M + i, x.at(i * N + j));
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, M, N]() {
      if (!xn->requires_grad) return;
      for (size_t i = 0; i < M; ++i)
        for (size_t j = 0; j < N; ++j) xn->grad.add(i * N + j, on->grad.at(j * M + i));
    };
  }
  return Tensor(out);
}

// ---- conv3d ----------------------------------------------------------------

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  check_same_dtype("conv3d", x, w);
  if (bias.defined()) check_same_dtype("conv3d", x, bias);
  if (x.rank() != 4) fail("conv3d", "input must be [D,H,W,Cin], got " + x.shape_str());
  if (w.rank() != 5) fail("conv3d", "weight must be [k,k,k,Cin,Cout], got " + w.shape_str());
  if (w.dim(0) != w.dim(1) || w.dim(1) != w.dim(2)) fail("conv3d", "kernel must be cubic: " + w.shape_str());
  if (w.dim(3) != x.dim(3))
    fail("conv3d", "Cin mismatch: input " + x.shape_str() + " vs weight " + w.shape_str());
  const int k = int(w.dim(0)), cin = int(w.dim(3)), cout = int(w.dim(4));
  if (bias.defined() && bias.numel() != size_t(cout)) fail("conv3d", "bias size != Cout");
  auto s = kr::Conv3dShape::make(int(x.dim(0)), int(x.dim(1)), int(x.dim(2)), cin, cout, k, stride, pad);
  auto out = make_node("conv3d", {size_t(s.od), size_t(s.oh), size_t(s.ow), size_t(cout)}, x.dtype(),
                       {x, w, bias});
  if (x.dtype() == Dtype::F32)
    kr::active().conv3d_fwd(s, x.f32(), w.f32(), bias.defined() ? bias.f32() : nullptr, out->value.f32());
  else
    ref::conv3d_fwd(s, x.f64(), w.f64(), bias.defined() ? bias.f64() : nullptr, out->value.f64());
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* wn = w.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    Node* on = out.get();
    out->backward_fn = [xn, wn, bn, on, s]() {
      if (on->dtype == Dtype::F32) {
        const float* g = on->grad.f32();
        if (xn->requires_grad) {
          std::vector<float> tmp(xn->numel());
          kr::active().conv3d_grad_in(s, g, wn->value.f32(), tmp.data());
          kr::active().add(xn->grad.f32(), tmp.data(), xn->grad.f32(), tmp.size());
        }
        if (wn->requires_grad || (bn && bn->requires_grad)) {
          std::vector<float> gw(wn->numel());
          std::vector<float> gb(bn ? bn->numel() : size_t(s.cout));
          kr::active().conv3d_grad_w(s, xn->value.f32(), g, gw.data(), gb.data());
          if (wn->requires_grad) kr::active().add(wn->grad.f32(), gw.data(), wn->grad.f32(), gw.size());
          if (bn && bn->requires_grad) kr::active().add(bn->grad.f32(), gb.data(), bn->grad.f32(), gb.size());
        }
      } else {
        const double* g = on->grad.f64();
        if (xn->requires_grad) {
          std::vector<double> tmp(xn->numel());
          ref::conv3d_grad_in(s, g, wn->value.f64(), tmp.data());
          double* gx = xn->grad.f64();
          for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        }
        if (wn->requires_grad || (bn && bn->requires_grad)) {
          std::vector<double> gw(wn->numel());
          std::vector<double> gb(bn ? bn->numel() : size_t(s.cout));
          ref::conv3d_grad_w(s, xn->value.f64(), g, gw.data(), gb.data());
          if (wn->requires_grad) {
            double* gwp = wn->grad.f64();
            for (size_t i = 0; i < gw.size(); ++i) gwp[i] += gw[i];
          }
          if (bn && bn->requires_grad) {
            double* gbp = bn->grad.f64();
            for (size_t i = 0; i < gb.size(); ++i) gbp[i] += gb[i];
          }
        }
      }
    };
  }
  return Tensor(out);
}

// ---- resize / sampling -----------------------------------------------------

namespace {

struct LerpAxis {
  size_t i0, i1;
  double w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis lerp_axis(double src, size_t n) {
  double g = src;
  if (g < 0) g = 0;
  if (g > double(n - 1)) g = double(n - 1);
  size_t i0 = size_t(g);
  if (i0 >= n - 1 && n > 1) i0 = n - 2;
  if (n == 1) i0 = 0;
  const size_t i1 = n == 1 ? 0 : i0 + 1;
  return {i0, i1, n == 1 ? 0.0 : g - double(i0)};
}

}  // namespace

Tensor upsample_trilinear3d(const Tensor& x, size_t od, size_t oh, size_t ow) {
  if (x.rank() != 4) fail("upsample_trilinear3d", "input must be [D,H,W,C], got " + x.shape_str());
  const size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto out = make_node("upsample_trilinear3d", {od, oh, ow, C}, x.dtype(), {x});
  // 8 corner taps per output voxel, weights shared across channels.
  auto run = [D, H, W, C, od, oh, ow](auto* iv, auto* ov, auto* gin, auto* gout, bool backward_pass) {
    using T = std::remove_cv_t<std::remove_pointer_t<decltype(ov)>>;
    for (size_t d = 0; d < od; ++d) {
      LerpAxis ad = lerp_axis((double(d) + 0.5) * double(D) / double(od) - 0.5, D);
      for (size_t h = 0; h < oh; ++h) {
        LerpAxis ah = lerp_axis((double(h) + 0.5) * double(H) / double(oh) - 0.5, H);
        for (size_t w = 0; w < ow; ++w) {
          LerpAxis aw = lerp_axis((double(w) + 0.5) * double(W) / double(ow) - 0.5, W);
          const size_t obase = ((d * oh + h) * ow + w) * C;
          for (int corner = 0; corner < 8; ++corner) {
            const bool cd = corner & 1, ch = corner & 2, cw = corner & 4;
            const double wt = (cd ? ad.w1 : 1 - ad.w1) * (ch ? ah.w1 : 1 - ah.w1) * (cw ? aw.w1 : 1 - aw.w1);
            if (wt == 0.0) continue;
            const size_t ibase =
                (((cd ? ad.i1 : ad.i0) * H + (ch ? ah.i1 : ah.i0)) * W + (cw ? aw.i1 : aw.i0)) * C;
            if (!backward_pass)
              for (size_t c = 0; c < C; ++c) ov[obase + c] += T(wt) * iv[ibase + c];
            else
              for (size_t c = 0; c < C; ++c) gin[ibase + c] += T(wt) * gout[obase + c];
          }
        }
      }
    }
  };
  if (x.dtype() == Dtype::F32)
    run(x.f32(), out->value.f32(), (float*)nullptr, (const float*)nullptr, false);
  else
    run(x.f64(), out->value.f64(), (double*)nullptr, (const double*)nullptr, false);
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, run]() {
      if (!xn->requires_grad) return;
      if (on->dtype == Dtype::F32)
        run((const float*)nullptr, (float*)nullptr, xn->grad.f32(), on->grad.f32(), true);
      else
        run((const double*)nullptr, (double*)nullptr, xn->grad.f64(), on->grad.f64(), true);
    };
  }
  return Tensor(out);
}

Tensor grid_sample_trilinear(const Tensor& grid, const Tensor& points) {
  check_same_dtype("grid_sample_trilinear", grid, points);
  if (grid.rank() != 4) fail("grid_sample_trilinear", "grid must be [N0,N1,N2,C], got " + grid.shape_str());
  if (points.rank() != 2 || points.dim(1) != 3)
    fail("grid_sample_trilinear", "points must be [M,3], got " + points.shape_str());
  const size_t N0 = grid.dim(0), N1 = grid.dim(1), N2 = grid.dim(2), C = grid.dim(3);
  const size_t M = points.dim(0);
  auto out = make_node("grid_sample_trilinear", {M, C}, grid.dtype(), {grid, points});

  auto fwd = [&](auto* pts, auto* gv, auto* ov) {
    using T = std::remove_cv_t<std::remove_pointer_t<decltype(ov)>>;
    for (size_t m = 0; m < M; ++m) {
      LerpAxis a0 = lerp_axis(double(pts[m * 3 + 0]) * double(N0) - 0.5, N0);
      LerpAxis a1 = lerp_axis(double(pts[m * 3 + 1]) * double(N1) - 0.5, N1);
      LerpAxis a2 = lerp_axis(double(pts[m * 3 + 2]) * double(N2) - 0.5, N2);
      T* orow = ov + m * C;
      for (int corner = 0; corner < 8; ++corner) {
        const bool c0 = corner & 1, c1 = corner & 2, c2 = corner & 4;
        const double wt =
            (c0 ? a0.w1 : 1 - a0.w1) * (c1 ? a1.w1 : 1 - a1.w1) * (c2 ? a2.w1 : 1 - a2.w1);
        if (wt == 0.0) continue;
        const size_t gbase =
            (((c0 ? a0.i1 : a0.i0) * N1 + (c1 ? a1.i1 : a1.i0)) * N2 + (c2 ? a2.i1 : a2.i0)) * C;
        const T tw = T(wt);
        for (size_t c = 0; c < C; ++c) orow[c] += tw * gv[gbase + c];
      }
    }
  };
  if (grid.dtype() == Dtype::F32)
    fwd(points.f32(), grid.f32(), out->value.f32());
  else
    fwd(points.f64(), grid.f64(), out->value.f64());

  if (out->requires_grad) {
    Node* gn = grid.node();
    Node* pn = points.node();
    Node* on = out.get();
    const size_t n0 = N0, n1 = N1, n2 = N2, cc = C, mm = M;
    out->backward_fn = [gn, pn, on, n0, n1, n2, cc, mm]() {
      // Typed inner loops: this runs once per ray sample per iteration.
      auto sweep = [&](auto* pts, auto* go, auto* ggrid, auto* vgrid, auto* gpts) {
        using T = std::remove_cv_t<std::remove_pointer_t<decltype(go)>>;
        for (size_t m = 0; m < mm; ++m) {
          const double p0 = double(pts[m * 3 + 0]) * double(n0) - 0.5;
          const double p1 = double(pts[m * 3 + 1]) * double(n1) - 0.5;
          const double p2 = double(pts[m * 3 + 2]) * double(n2) - 0.5;
          LerpAxis a0 = lerp_axis(p0, n0), a1 = lerp_axis(p1, n1), a2 = lerp_axis(p2, n2);
          const bool in0 = p0 > 0.0 && p0 < double(n0 - 1);
          const bool in1 = p1 > 0.0 && p1 < double(n1 - 1);
          const bool in2 = p2 > 0.0 && p2 < double(n2 - 1);
          double d0 = 0, d1 = 0, d2 = 0;
          const T* grow = go + m * cc;
          for (int corner = 0; corner < 8; ++corner) {
            const bool c0 = corner & 1, c1 = corner & 2, c2 = corner & 4;
            const double w0 = c0 ? a0.w1 : 1 - a0.w1;
            const double w1 = c1 ? a1.w1 : 1 - a1.w1;
            const double w2 = c2 ? a2.w1 : 1 - a2.w1;
            const double wt = w0 * w1 * w2;
            const size_t gbase =
                (((c0 ? a0.i1 : a0.i0) * n1 + (c1 ? a1.i1 : a1.i0)) * n2 + (c2 ? a2.i1 : a2.i0)) * cc;
            if (ggrid && wt != 0.0) {
              T* dst = ggrid + gbase;
              const T tw = T(wt);
              for (size_t c = 0; c < cc; ++c) dst[c] += tw * grow[c];
            }
            if (gpts) {
              double dotgc = 0;
              const auto* src = vgrid + gbase;
              for (size_t c = 0; c < cc; ++c) dotgc += double(grow[c]) * double(src[c]);
              d0 += (c0 ? 1.0 : -1.0) * w1 * w2 * dotgc;
              d1 += (c1 ? 1.0 : -1.0) * w0 * w2 * dotgc;
              d2 += (c2 ? 1.0 : -1.0) * w0 * w1 * dotgc;
            }
          }
          if (gpts) {
            if (in0) gpts[m * 3 + 0] += T(d0 * double(n0));
            if (in1) gpts[m * 3 + 1] += T(d1 * double(n1));
            if (in2) gpts[m * 3 + 2] += T(d2 * double(n2));
          }
        }
      };
      if (on->dtype == Dtype::F32)
        sweep(pn->value.f32(), on->grad.f32(), gn->requires_grad ? gn->grad.f32() : nullptr,
              gn->value.f32(), pn->requires_grad ? pn->grad.f32() : nullptr);
      else
        sweep(pn->value.f64(), on->grad.f64(), gn->requires_grad ? gn->grad.f64() : nullptr,
              gn->value.f64(), pn->requires_grad ? pn->grad.f64() : nullptr);
    };
  }
  return Tensor(out);
}

// ---- softmax family ----------------------------------------------------------

Tensor softmax(const Tensor& x, size_t axis) {
  AxisSplit sp = split_axis("softmax", x.shape(), axis);
  auto out = make_node("softmax", x.shape(), x.dtype(), {x});
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      const size_t base = o * sp.n * sp.inner + in;
      double mx = x.at(base);
      for (size_t i = 1; i < sp.n; ++i) mx = std::max(mx, x.at(base + i * sp.inner));
      double z = 0;
      for (size_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(x.at(base + i * sp.inner) - mx);
        out->value.set(base + i * sp.inner, e);
        z += e;
      }
      for (size_t i = 0; i < sp.n; ++i)
        out->value.set(base + i * sp.inner, out->value.at(base + i * sp.inner) / z);
    }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
          const size_t base = o * sp.n * sp.inner + in;
          double gs = 0;
          for (size_t i = 0; i < sp.n; ++i)
            gs += on->grad.at(base + i * sp.inner) * on->value.at(base + i * sp.inner);
          for (size_t i = 0; i < sp.n; ++i) {
            const size_t idx = base + i * sp.inner;
            xn->grad.add(idx, on->value.at(idx) * (on->grad.at(idx) - gs));
          }
        }
    };
  }
  return Tensor(out);
}

Tensor log_softmax(const Tensor& x, size_t axis) {
  AxisSplit sp = split_axis("log_softmax", x.shape(), axis);
  auto out = make_node("log_softmax", x.shape(), x.dtype(), {x});
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      const size_t base = o * sp.n * sp.inner + in;
      double mx = x.at(base);
      for (size_t i = 1; i < sp.n; ++i) mx = std::max(mx, x.at(base + i * sp.inner));
      double z = 0;
      for (size_t i = 0; i < sp.n; ++i) z += std::exp(x.at(base + i * sp.inner) - mx);
      const double lse = mx + std::log(z);
      for (size_t i = 0; i < sp.n; ++i)
        out->value.set(base + i * sp.inner, x.at(base + i * sp.inner) - lse);
    }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
          const size_t base = o * sp.n * sp.inner + in;
          double gs = 0;
          for (size_t i = 0; i < sp.n; ++i) gs += on->grad.at(base + i * sp.inner);
          for (size_t i = 0; i < sp.n; ++i) {
            const size_t idx = base + i * sp.inner;
            xn->grad.add(idx, on->grad.at(idx) - std::exp(on->value.at(idx)) * gs);
          }
        }
    };
  }
  return Tensor(out);
}

// ---- reductions --------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  auto out = make_node("sum_all", {}, x.dtype(), {x});
  if (x.dtype() == Dtype::F32)
    out->value.set(0, double(kr::active().sum(x.f32(), x.numel())));
  else
    out->value.set(0, ref::sum(x.f64(), x.numel()));
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on]() {
      if (!xn->requires_grad) return;
      const double g = on->grad.at(0);
      for (size_t i = 0; i < xn->numel(); ++i) xn->grad.add(i, g);
    };
  }
  return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) fail("mean_all", "empty tensor");
  return scale(sum_all(x), 1.0 / double(x.numel()));
}

Tensor sum_axis(const Tensor& x, size_t axis) {
  AxisSplit sp = split_axis("sum_axis", x.shape(), axis);
  std::vector<size_t> oshape = x.shape();
  oshape.erase(oshape.begin() + long(axis));
  auto out = make_node("sum_axis", std::move(oshape), x.dtype(), {x});
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      double acc = 0;
      for (size_t i = 0; i < sp.n; ++i) acc += x.at((o * sp.n + i) * sp.inner + in);
      out->value.set(o * sp.inner + in, acc);
    }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
          const double g = on->grad.at(o * sp.inner + in);
          for (size_t i = 0; i < sp.n; ++i) xn->grad.add((o * sp.n + i) * sp.inner + in, g);
        }
    };
  }
  return Tensor(out);
}

Tensor max_axis(const Tensor& x, size_t axis) {
  AxisSplit sp = split_axis("max_axis", x.shape(), axis);
  std::vector<size_t> oshape = x.shape();
  oshape.erase(oshape.begin() + long(axis));
  auto out = make_node("max_axis", std::move(oshape), x.dtype(), {x});
  auto argmax = std::make_shared<std::vector<size_t>>(sp.outer * sp.inner);
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      size_t best = 0;
      double bv = x.at(o * sp.n * sp.inner + in);
      for (size_t i = 1; i < sp.n; ++i) {
        const double v = x.at((o * sp.n + i) * sp.inner + in);
        if (v > bv) {
          bv = v;
          best = i;
        }
      }
      out->value.set(o * sp.inner + in, bv);
      (*argmax)[o * sp.inner + in] = best;
    }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp, argmax]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
          const size_t i = (*argmax)[o * sp.inner + in];
          xn->grad.add((o * sp.n + i) * sp.inner + in, on->grad.at(o * sp.inner + in));
        }
    };
  }
  return Tensor(out);
}

// ---- shape plumbing ----------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<size_t> shape) {
  size_t n = 1;
  for (size_t s : shape) n *= s;
  if (n != x.numel())
    fail("reshape", "cannot reshape " + x.shape_str() + " to " + shape_to_string(shape));
  auto out = make_node("reshape", std::move(shape), x.dtype(), {x});
  out->value = x.value();
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on]() {
      if (!xn->requires_grad) return;
      if (on->dtype == Dtype::F32) {
        const float* g = on->grad.f32();
        float* gx = xn->grad.f32();
        for (size_t i = 0; i < on->numel(); ++i) gx[i] += g[i];
      } else {
        const double* g = on->grad.f64();
        double* gx = xn->grad.f64();
        for (size_t i = 0; i < on->numel(); ++i) gx[i] += g[i];
      }
    };
  }
  return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& xs, size_t axis) {
  if (xs.empty()) fail("concat", "no inputs");
  const auto& s0 = xs[0].shape();
  if (axis >= s0.size()) fail("concat", "axis out of range");
  size_t total = 0;
  for (const Tensor& t : xs) {
    check_same_dtype("concat", xs[0], t);
    if (t.rank() != s0.size()) fail("concat", "rank mismatch");
    for (size_t i = 0; i < s0.size(); ++i)
      if (i != axis && t.shape()[i] != s0[i])
        fail("concat", "shape mismatch " + t.shape_str() + " vs " + xs[0].shape_str());
    total += t.shape()[axis];
  }
  std::vector<size_t> oshape = s0;
  oshape[axis] = total;
  AxisSplit sp = split_axis("concat", oshape, axis);
  auto out = make_node("concat", std::move(oshape), xs[0].dtype(), xs);

  size_t off = 0;  // offset along the axis
  for (const Tensor& t : xs) {
    const size_t tn = t.shape()[axis];
    const size_t blk = tn * sp.inner;
    for (size_t o = 0; o < sp.outer; ++o) {
      const size_t src = o * blk;
      const size_t dst = (o * sp.n + off) * sp.inner;
      if (t.dtype() == Dtype::F32)
        std::memcpy(out->value.f32() + dst, t.f32() + src, blk * sizeof(float));
      else
        std::memcpy(out->value.f64() + dst, t.f64() + src, blk * sizeof(double));
    }
    off += tn;
  }
  if (out->requires_grad) {
    Node* on = out.get();
    struct Piece {
      Node* n;
      size_t off, extent;
    };
    auto pieces = std::make_shared<std::vector<Piece>>();
    size_t o2 = 0;
    for (const Tensor& t : xs) {
      pieces->push_back({t.node(), o2, t.shape()[axis]});
      o2 += t.shape()[axis];
    }
    out->backward_fn = [on, pieces, sp]() {
      for (const auto& p : *pieces) {
        if (!p.n->requires_grad) continue;
        const size_t blk = p.extent * sp.inner;
        for (size_t o = 0; o < sp.outer; ++o) {
          const size_t dst = o * blk;
          const size_t src = (o * sp.n + p.off) * sp.inner;
          for (size_t i = 0; i < blk; ++i) p.n->grad.add(dst + i, on->grad.at(src + i));
        }
      }
    };
  }
  return Tensor(out);
}

Tensor slice(const Tensor& x, size_t axis, size_t start, size_t len) {
  AxisSplit sp = split_axis("slice", x.shape(), axis);
  if (start + len > sp.n) fail("slice", "range out of bounds");
  std::vector<size_t> oshape = x.shape();
  oshape[axis] = len;
  auto out = make_node("slice", std::move(oshape), x.dtype(), {x});
  const size_t blk = len * sp.inner;
  for (size_t o = 0; o < sp.outer; ++o) {
    const size_t src = (o * sp.n + start) * sp.inner;
    const size_t dst = o * blk;
    if (x.dtype() == Dtype::F32)
      std::memcpy(out->value.f32() + dst, x.f32() + src, blk * sizeof(float));
    else
      std::memcpy(out->value.f64() + dst, x.f64() + src, blk * sizeof(double));
  }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp, start, blk]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o) {
        const size_t dst = (o * sp.n + start) * sp.inner;
        const size_t src = o * blk;
        for (size_t i = 0; i < blk; ++i) xn->grad.add(dst + i, on->grad.at(src + i));
      }
    };
  }
  return Tensor(out);
}

Tensor repeat_rows(const Tensor& x, size_t rows) {
  if (x.rank() != 1) fail("repeat_rows", "input must be rank-1, got " + x.shape_str());
  const size_t C = x.dim(0);
  auto out = make_node("repeat_rows", {rows, C}, x.dtype(), {x});
  for (size_t r = 0; r < rows; ++r) {
    if (x.dtype() == Dtype::F32)
      std::memcpy(out->value.f32() + r * C, x.f32(), C * sizeof(float));
    else
      std::memcpy(out->value.f64() + r * C, x.f64(), C * sizeof(double));
  }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, rows, C]() {
      if (!xn->requires_grad) return;
      for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < C; ++c) xn->grad.add(c, on->grad.at(r * C + c));
    };
  }
  return Tensor(out);
}

Tensor take_per_row(const Tensor& x, const std::vector<size_t>& idx) {
  if (x.rank() != 2) fail("take_per_row", "input must be rank-2, got " + x.shape_str());
  const size_t R = x.dim(0), C = x.dim(1);
  if (idx.size() != R) fail("take_per_row", "index count != rows");
  for (size_t r = 0; r < R; ++r)
    if (idx[r] >= C) fail("take_per_row", "index " + std::to_string(idx[r]) + " out of range");
  auto out = make_node("take_per_row", {R}, x.dtype(), {x});
  for (size_t r = 0; r < R; ++r) out->value.set(r, x.at(r * C + idx[r]));
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    auto ix = std::make_shared<std::vector<size_t>>(idx);
    out->backward_fn = [xn, on, ix, C]() {
      if (!xn->requires_grad) return;
      for (size_t r = 0; r < ix->size(); ++r) xn->grad.add(r * C + (*ix)[r], on->grad.at(r));
    };
  }
  return Tensor(out);
}

Tensor exclusive_cumsum(const Tensor& x, size_t axis) {
  AxisSplit sp = split_axis("exclusive_cumsum", x.shape(), axis);
  auto out = make_node("exclusive_cumsum", x.shape(), x.dtype(), {x});
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t in = 0; in < sp.inner; ++in) {
      double acc = 0;
      for (size_t i = 0; i < sp.n; ++i) {
        const size_t idx = (o * sp.n + i) * sp.inner + in;
        out->value.set(idx, acc);
        acc += x.at(idx);
      }
    }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, sp]() {
      if (!xn->requires_grad) return;
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
          double acc = 0;
          for (size_t i = sp.n; i-- > 0;) {
            const size_t idx = (o * sp.n + i) * sp.inner + in;
            xn->grad.add(idx, acc);
            acc += on->grad.at(idx);
          }
        }
    };
  }
  return Tensor(out);
}

// ---- normalization -----------------------------------------------------------

namespace {

// Shared core: normalize over groups of positions per statistic.
// norm_lastdim: stat per row, positions are that row's C entries (stride 1).
// norm_per_channel: stat per channel, positions stride C apart.
Tensor norm_impl(const char* name, const Tensor& x, double eps, bool per_channel) {
  if (x.rank() < 1) fail(name, "rank >= 1 required");
  const size_t C = x.shape().back();
  const size_t rows = x.numel() / std::max<size_t>(C, 1);
  const size_t nstats = per_channel ? C : rows;
  const size_t count = per_channel ? rows : C;
  auto index = [=](size_t stat, size_t j) { return per_channel ? j * C + stat : stat * C + j; };

  auto out = make_node(name, x.shape(), x.dtype(), {x});
  auto mean = std::make_shared<std::vector<double>>(nstats);
  auto inv = std::make_shared<std::vector<double>>(nstats);
  for (size_t s = 0; s < nstats; ++s) {
    double mu = 0;
    for (size_t j = 0; j < count; ++j) mu += x.at(index(s, j));
    mu /= double(count);
    double var = 0;
    for (size_t j = 0; j < count; ++j) {
      const double d = x.at(index(s, j)) - mu;
      var += d * d;
    }
    var /= double(count);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*mean)[s] = mu;
    (*inv)[s] = iv;
    for (size_t j = 0; j < count; ++j) out->value.set(index(s, j), (x.at(index(s, j)) - mu) * iv);
  }
  if (out->requires_grad) {
    Node* xn = x.node();
    Node* on = out.get();
    out->backward_fn = [xn, on, mean, inv, nstats, count, index]() {
      if (!xn->requires_grad) return;
      for (size_t s = 0; s < nstats; ++s) {
        double gmean = 0, gxhat = 0;
        for (size_t j = 0; j < count; ++j) {
          const size_t idx = index(s, j);
          const double g = on->grad.at(idx);
          gmean += g;
          gxhat += g * on->value.at(idx);  // value == x-hat
        }
        gmean /= double(count);
        gxhat /= double(count);
        for (size_t j = 0; j < count; ++j) {
          const size_t idx = index(s, j);
          const double g = on->grad.at(idx);
          const double xh = on->value.at(idx);
          xn->grad.add(idx, (*inv)[s] * (g - gmean - xh * gxhat));
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor norm_lastdim(const Tensor& x, double eps) { return norm_impl("norm_lastdim", x, eps, false); }
Tensor norm_per_channel(const Tensor& x, double eps) { return norm_impl("norm_per_channel", x, eps, true); }

}  // namespace ff::ops
