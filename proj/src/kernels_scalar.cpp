#include "featfield/kernels.hpp"
#include "featfield/kernels_ref.hpp"

namespace ff::kernels {

namespace {
void add_f32(const float* a, const float* b, float* o, size_t n) { ref::add(a, b, o, n); }
void sub_f32(const float* a, const float* b, float* o, size_t n) { ref::sub(a, b, o, n); }
void mul_f32(const float* a, const float* b, float* o, size_t n) { ref::mul(a, b, o, n); }
void axpy_f32(float al, const float* x, float* y, size_t n) { ref::axpy(al, x, y, n); }
void scale_f32(const float* x, float al, float* o, size_t n) { ref::scale(x, al, o, n); }
float dot_f32(const float* a, const float* b, size_t n) { return ref::dot(a, b, n); }
float sum_f32(const float* x, size_t n) { return ref::sum(x, n); }
void vexp_f32(const float* x, float* o, size_t n) { ref::vexp(x, o, n); }
void relu_f32(const float* x, float* o, size_t n) { ref::relu(x, o, n); }
void lrelu_f32(const float* x, float s, float* o, size_t n) { ref::leaky_relu(x, s, o, n); }
void gemm_nn_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  ref::gemm_nn(M, N, K, A, B, C, acc);
}
void gemm_nt_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  ref::gemm_nt(M, N, K, A, B, C, acc);
}
void gemm_tn_f32(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
  ref::gemm_tn(M, N, K, A, B, C, acc);
}
void conv_fwd_f32(const Conv3dShape& s, const float* in, const float* w, const float* b, float* o) {
  ref::conv3d_fwd(s, in, w, b, o);
}
void conv_gin_f32(const Conv3dShape& s, const float* g, const float* w, float* gi) {
  ref::conv3d_grad_in(s, g, w, gi);
}
void conv_gw_f32(const Conv3dShape& s, const float* in, const float* g, float* gw, float* gb) {
  ref::conv3d_grad_w(s, in, g, gw, gb);
}
}  // namespace

const Backend& scalar_backend() {
  static const Backend b = {
      "scalar", add_f32,     sub_f32,     mul_f32,     axpy_f32,    scale_f32,
      dot_f32,  sum_f32,     vexp_f32,    relu_f32,    lrelu_f32,   gemm_nn_f32,
      gemm_nt_f32, gemm_tn_f32, conv_fwd_f32, conv_gin_f32, conv_gw_f32,
  };
  return b;
}

}  // namespace ff::kernels
