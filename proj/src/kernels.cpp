#include "featfield/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace ff::kernels {

Conv3dShape Conv3dShape::make(int d, int h, int w, int cin, int cout, int k, int stride, int pad) {
  if (d <= 0 || h <= 0 || w <= 0 || cin <= 0 || cout <= 0)
    throw std::runtime_error("conv3d: non-positive shape");
  if (k <= 0 || stride <= 0 || pad < 0) throw std::runtime_error("conv3d: bad k/stride/pad");
  Conv3dShape s;
  s.d = d;
  s.h = h;
  s.w = w;
  s.cin = cin;
  s.cout = cout;
  s.k = k;
  s.stride = stride;
  s.pad = pad;
  s.od = (d + 2 * pad - k) / stride + 1;
  s.oh = (h + 2 * pad - k) / stride + 1;
  s.ow = (w + 2 * pad - k) / stride + 1;
  if (s.od <= 0 || s.oh <= 0 || s.ow <= 0) throw std::runtime_error("conv3d: empty output");
  return s;
}

#ifndef FEATFIELD_BUILD_AVX2
const Backend& avx2_backend() { throw std::runtime_error("avx2 backend not compiled in"); }
#endif

bool avx2_compiled() {
#ifdef FEATFIELD_BUILD_AVX2
  return true;
#else
  return false;
#endif
}

bool avx2_supported() {
#if defined(FEATFIELD_BUILD_AVX2) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const Backend* g_active = nullptr;

const Backend* default_backend() {
  if (const char* env = std::getenv("FEATFIELD_KERNELS")) {
    std::string want(env);
    if (want == "scalar") return &scalar_backend();
#ifdef FEATFIELD_BUILD_AVX2
    if (want == "avx2") {
      if (!avx2_supported()) throw std::runtime_error("FEATFIELD_KERNELS=avx2 but cpu lacks avx2/fma");
      return &avx2_backend();
    }
#endif
    if (!want.empty()) throw std::runtime_error("unknown FEATFIELD_KERNELS value: " + want);
  }
#ifdef FEATFIELD_BUILD_AVX2
  if (avx2_supported()) return &avx2_backend();
#endif
  return &scalar_backend();
}

}  // namespace

const Backend& active() {
  if (!g_active) g_active = default_backend();
  return *g_active;
}

void select(const std::string& name) {
  if (name == "scalar") {
    g_active = &scalar_backend();
    return;
  }
#ifdef FEATFIELD_BUILD_AVX2
  if (name == "avx2") {
    if (!avx2_supported()) throw std::runtime_error("avx2 backend requested but cpu lacks avx2/fma");
    g_active = &avx2_backend();
    return;
  }
#endif
  throw std::runtime_error("unknown kernel backend: " + name);
}

}  // namespace ff::kernels
