#pragma once

#include <cstddef>
#include <string>

namespace ff::kernels {

// Geometry of one 3D convolution. Tensors are channels-last:
// input [d,h,w,cin], weights [k,k,k,cin,cout], output [od,oh,ow,cout].
struct Conv3dShape {
  int d = 0, h = 0, w = 0;
  int cin = 0, cout = 0;
  int k = 1, stride = 1, pad = 0;
  int od = 0, oh = 0, ow = 0;

  static Conv3dShape make(int d, int h, int w, int cin, int cout, int k, int stride, int pad);
};

// Dispatch table for the f32 hot loops. Every entry has a scalar reference
// implementation and may have a SIMD variant; the two are equivalence-tested.
// Accumulation order is fixed per backend, so results are reproducible
// across runs for a given backend selection.
struct Backend {
  const char* name;

  void (*add)(const float* a, const float* b, float* out, size_t n);
  void (*sub)(const float* a, const float* b, float* out, size_t n);
  void (*mul)(const float* a, const float* b, float* out, size_t n);
  void (*axpy)(float alpha, const float* x, float* y, size_t n);  // y += alpha*x
  void (*scale)(const float* x, float alpha, float* out, size_t n);
  float (*dot)(const float* a, const float* b, size_t n);
  float (*sum)(const float* x, size_t n);
  void (*vexp)(const float* x, float* out, size_t n);
  void (*relu)(const float* x, float* out, size_t n);
  void (*leaky_relu)(const float* x, float slope, float* out, size_t n);

  // Row-major GEMM family. accumulate=false overwrites C.
  // nn: C[M,N] += A[M,K] * B[K,N]
  // nt: C[M,N] += A[M,K] * B[N,K]^T
  // tn: C[K,N] += A[M,K]^T * B[M,N]
  void (*gemm_nn)(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool accumulate);
  void (*gemm_nt)(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool accumulate);
  void (*gemm_tn)(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool accumulate);

  void (*conv3d_fwd)(const Conv3dShape& s, const float* in, const float* w, const float* bias, float* out);
  void (*conv3d_grad_in)(const Conv3dShape& s, const float* gout, const float* w, float* gin);
  void (*conv3d_grad_w)(const Conv3dShape& s, const float* in, const float* gout, float* gw, float* gbias);
};

const Backend& scalar_backend();
bool avx2_compiled();
bool avx2_supported();  // compiled in and present on this CPU

// Active backend. Default: avx2 when supported, else scalar. The
// FEATFIELD_KERNELS environment variable ("scalar"/"avx2") overrides the
// default; select() overrides both.
const Backend& active();
void select(const std::string& name);

// Throws when the library was built without AVX2 support; check
// avx2_compiled()/avx2_supported() first.
const Backend& avx2_backend();

}  // namespace ff::kernels
