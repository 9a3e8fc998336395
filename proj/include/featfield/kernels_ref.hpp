#pragma once

// Scalar reference kernels, templated on the element type. The f32
// instantiations back the "scalar" dispatch table; f64 code paths (gradient
// checking runs in 64-bit) call these templates directly.

#include <cmath>
#include <cstddef>

#include "featfield/kernels.hpp"

namespace ff::kernels::ref {

template <typename T>
void add(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(const T* x, T alpha, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * alpha;
}

template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T sum(const T* x, size_t n) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
void vexp(const T* x, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

template <typename T>
void relu(const T* x, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void leaky_relu(const T* x, T slope, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(size_t M, size_t N, size_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (size_t i = 0; i < M; ++i) {
    T* crow = C + i * N;
    if (!accumulate)
      for (size_t j = 0; j < N; ++j) crow[j] = 0;
    const T* arow = A + i * K;
    for (size_t k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + k * N;
      for (size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(size_t M, size_t N, size_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (size_t i = 0; i < M; ++i) {
    const T* arow = A + i * K;
    T* crow = C + i * N;
    for (size_t j = 0; j < N; ++j) {
      const T d = dot(arow, B + j * K, K);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(size_t M, size_t N, size_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < K * N; ++i) C[i] = 0;
  for (size_t k = 0; k < K; ++k) {
    T* crow = C + k * N;
    for (size_t m = 0; m < M; ++m) {
      const T a = A[m * K + k];
      const T* brow = B + m * N;
      for (size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <typename T>
void conv3d_fwd(const Conv3dShape& s, const T* in, const T* w, const T* bias, T* out) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  for (int od = 0; od < s.od; ++od)
    for (int oh = 0; oh < s.oh; ++oh)
      for (int ow = 0; ow < s.ow; ++ow) {
        T* orow = out + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
        for (int c = 0; c < s.cout; ++c) orow[c] = bias ? bias[c] : T(0);
        for (int kd = 0; kd < s.k; ++kd) {
          const int id = od * s.stride - s.pad + kd;
          if (id < 0 || id >= s.d) continue;
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.w) continue;
              const T* irow = in + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
              const T* wtap = w + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                axpy(irow[ic], wtap + size_t(ic) * s.cout, orow, size_t(s.cout));
            }
          }
        }
      }
}

// Gather formulation: each input cell sums the output gradients it fed.
template <typename T>
void conv3d_grad_in(const Conv3dShape& s, const T* gout, const T* w, T* gin) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  for (int id = 0; id < s.d; ++id)
    for (int ih = 0; ih < s.h; ++ih)
      for (int iw = 0; iw < s.w; ++iw) {
        T* grow = gin + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
        for (int ic = 0; ic < s.cin; ++ic) grow[ic] = 0;
        for (int kd = 0; kd < s.k; ++kd) {
          const int t0 = id + s.pad - kd;
          if (t0 < 0 || t0 % s.stride) continue;
          const int od = t0 / s.stride;
          if (od >= s.od) continue;
          for (int kh = 0; kh < s.k; ++kh) {
            const int t1 = ih + s.pad - kh;
            if (t1 < 0 || t1 % s.stride) continue;
            const int oh = t1 / s.stride;
            if (oh >= s.oh) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int t2 = iw + s.pad - kw;
              if (t2 < 0 || t2 % s.stride) continue;
              const int ow = t2 / s.stride;
              if (ow >= s.ow) continue;
              const T* gorow = gout + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
              const T* wtap = w + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                grow[ic] += dot(gorow, wtap + size_t(ic) * s.cout, size_t(s.cout));
            }
          }
        }
      }
}

template <typename T>
void conv3d_grad_w(const Conv3dShape& s, const T* in, const T* gout, T* gw, T* gbias) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  const size_t wn = size_t(s.k) * s.k * s.k * tap_stride;
  for (size_t i = 0; i < wn; ++i) gw[i] = 0;
  if (gbias)
    for (int c = 0; c < s.cout; ++c) gbias[c] = 0;
  for (int od = 0; od < s.od; ++od)
    for (int oh = 0; oh < s.oh; ++oh)
      for (int ow = 0; ow < s.ow; ++ow) {
        const T* gorow = gout + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
        if (gbias) add(gbias, gorow, gbias, size_t(s.cout));
        for (int kd = 0; kd < s.k; ++kd) {
          const int id = od * s.stride - s.pad + kd;
          if (id < 0 || id >= s.d) continue;
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.w) continue;
              const T* irow = in + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
              T* gwtap = gw + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                axpy(irow[ic], gorow, gwtap + size_t(ic) * s.cout, size_t(s.cout));
            }
          }
        }
      }
}

}  // namespace ff::kernels::ref
