// AVX2/FMA variants of the f32 kernels. Built only when the compiler supports
// -mavx2 -mfma; selected at runtime after a cpuid check, so the binary still
// runs on plain SSE machines through the scalar backend.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "featfield/kernels.hpp"

namespace ff::kernels {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

void add_f32(const float* a, const float* b, float* o, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(o + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) o[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* o, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(o + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) o[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* o, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(o + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) o[i] = a[i] * b[i];
}

void axpy_f32(float alpha, const float* x, float* y, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(const float* x, float alpha, float* o, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(o + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) o[i] = x[i] * alpha;
}

float dot_f32(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum8(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float sum_f32(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum8(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

// Cephes-style expf: range reduction by ln2, degree-5 polynomial, 2^n scaling.
inline __m256 exp8(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647950f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_max_ps(_mm256_min_ps(x, hi), lo);
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(x, x), _mm256_add_ps(x, one));

  __m256i n = _mm256_add_epi32(_mm256_cvttps_epi32(fx), _mm256_set1_epi32(0x7f));
  n = _mm256_slli_epi32(n, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

void vexp_f32(const float* x, float* o, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(o + i, exp8(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) o[i] = std::exp(x[i]);
}

void relu_f32(const float* x, float* o, size_t n) {
  const __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(o + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) o[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void lrelu_f32(const float* x, float slope, float* o, size_t n) {
  const __m256 z = _mm256_setzero_ps();
  const __m256 vs = _mm256_set1_ps(slope);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    __m256 neg = _mm256_mul_ps(v, vs);
    _mm256_storeu_ps(o + i, _mm256_blendv_ps(neg, v, _mm256_cmp_ps(v, z, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) o[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void gemm_nn_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  for (size_t i = 0; i < M; ++i) {
    float* crow = C + i * N;
    if (!acc)
      for (size_t j = 0; j < N; ++j) crow[j] = 0.0f;
    const float* arow = A + i * K;
    for (size_t k = 0; k < K; ++k) {
      axpy_f32(arow[k], B + k * N, crow, N);
    }
  }
}

void gemm_nt_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  for (size_t i = 0; i < M; ++i) {
    const float* arow = A + i * K;
    float* crow = C + i * N;
    for (size_t j = 0; j < N; ++j) {
      const float d = dot_f32(arow, B + j * K, K);
      crow[j] = acc ? crow[j] + d : d;
    }
  }
}

void gemm_tn_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  if (!acc)
    for (size_t i = 0; i < K * N; ++i) C[i] = 0.0f;
  for (size_t k = 0; k < K; ++k) {
    float* crow = C + k * N;
    for (size_t m = 0; m < M; ++m) {
      axpy_f32(A[m * K + k], B + m * N, crow, N);
    }
  }
}

void conv_fwd_f32(const Conv3dShape& s, const float* in, const float* w, const float* bias, float* out) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  for (int od = 0; od < s.od; ++od)
    for (int oh = 0; oh < s.oh; ++oh)
      for (int ow = 0; ow < s.ow; ++ow) {
        float* orow = out + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
        if (bias)
          for (int c = 0; c < s.cout; ++c) orow[c] = bias[c];
        else
          for (int c = 0; c < s.cout; ++c) orow[c] = 0.0f;
        for (int kd = 0; kd < s.k; ++kd) {
          const int id = od * s.stride - s.pad + kd;
          if (id < 0 || id >= s.d) continue;
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.w) continue;
              const float* irow = in + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
              const float* wtap = w + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                axpy_f32(irow[ic], wtap + size_t(ic) * s.cout, orow, size_t(s.cout));
            }
          }
        }
      }
}

void conv_gin_f32(const Conv3dShape& s, const float* gout, const float* w, float* gin) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  for (int id = 0; id < s.d; ++id)
    for (int ih = 0; ih < s.h; ++ih)
      for (int iw = 0; iw < s.w; ++iw) {
        float* grow = gin + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
        for (int ic = 0; ic < s.cin; ++ic) grow[ic] = 0.0f;
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
              const float* gorow = gout + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
              const float* wtap = w + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                grow[ic] += dot_f32(gorow, wtap + size_t(ic) * s.cout, size_t(s.cout));
            }
          }
        }
      }
}

void conv_gw_f32(const Conv3dShape& s, const float* in, const float* gout, float* gw, float* gbias) {
  const size_t tap_stride = size_t(s.cin) * s.cout;
  const size_t wn = size_t(s.k) * s.k * s.k * tap_stride;
  for (size_t i = 0; i < wn; ++i) gw[i] = 0.0f;
  if (gbias)
    for (int c = 0; c < s.cout; ++c) gbias[c] = 0.0f;
  for (int od = 0; od < s.od; ++od)
    for (int oh = 0; oh < s.oh; ++oh)
      for (int ow = 0; ow < s.ow; ++ow) {
        const float* gorow = gout + ((size_t(od) * s.oh + oh) * s.ow + ow) * s.cout;
        if (gbias) add_f32(gbias, gorow, gbias, size_t(s.cout));
        for (int kd = 0; kd < s.k; ++kd) {
          const int id = od * s.stride - s.pad + kd;
          if (id < 0 || id >= s.d) continue;
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.h) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.w) continue;
              const float* irow = in + ((size_t(id) * s.h + ih) * s.w + iw) * s.cin;
              float* gwtap = gw + (size_t(kd) * s.k + kh) * s.k * tap_stride + size_t(kw) * tap_stride;
              for (int ic = 0; ic < s.cin; ++ic)
                axpy_f32(irow[ic], gorow, gwtap + size_t(ic) * s.cout, size_t(s.cout));
            }
          }
        }
      }
}

}  // namespace

const Backend& avx2_backend() {
  static const Backend b = {
      "avx2",   add_f32,     sub_f32,     mul_f32,     axpy_f32,    scale_f32,
      dot_f32,  sum_f32,     vexp_f32,    relu_f32,    lrelu_f32,   gemm_nn_f32,
      gemm_nt_f32, gemm_tn_f32, conv_fwd_f32, conv_gin_f32, conv_gw_f32,
  };
  return b;
}

}  // namespace ff::kernels
