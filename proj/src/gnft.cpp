#include "featfield/gnft.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ff::gnft {

namespace {

constexpr char kMagic[4] = {'G', 'N', 'F', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
  return v;
}
uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw std::runtime_error(path + ": " + msg);
}

[[noreturn]] void fail_at(const std::string& path, size_t offset, const std::string& msg) {
  throw std::runtime_error(path + ": " + msg + " (byte offset " + std::to_string(offset) + ")");
}

}  // namespace

void save(const std::string& path, const Tensor& t) {
  std::string header;
  header.append(kMagic, 4);
  put_u32(header, kVersion);
  header.push_back(char(uint8_t(t.dtype())));
  header.push_back(char(uint8_t(t.rank())));
  for (size_t e : t.shape()) put_u64(header, uint64_t(e));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  f.write(header.data(), std::streamsize(header.size()));

  // x86 is little-endian; serialize explicitly anyway so the format holds
  // everywhere.
  const size_t n = t.numel();
  std::string payload;
  payload.reserve(n * dtype_size(t.dtype()));
  if (t.dtype() == Dtype::F32) {
    const float* v = t.f32();
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits;
      std::memcpy(&bits, &v[i], 4);
      put_u32(payload, bits);
    }
  } else {
    const double* v = t.f64();
    for (size_t i = 0; i < n; ++i) {
      uint64_t bits;
      std::memcpy(&bits, &v[i], 8);
      put_u64(payload, bits);
    }
  }
  f.write(payload.data(), std::streamsize(payload.size()));
  if (!f) fail(path, "write failed");
}

Tensor load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 10) fail_at(path, bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail_at(path, 0, "bad magic (not a GNFT file)");
  const uint32_t version = get_u32(bytes.data() + 4);
  if (version != kVersion) fail_at(path, 4, "unsupported version " + std::to_string(version));
  const uint8_t dtcode = bytes[8];
  if (dtcode != 1 && dtcode != 2) fail_at(path, 8, "unknown dtype code " + std::to_string(dtcode));
  const Dtype dt = dtcode == 1 ? Dtype::F32 : Dtype::F64;
  const size_t rank = bytes[9];
  if (bytes.size() < 10 + rank * 8) fail_at(path, bytes.size(), "truncated extents");
  std::vector<size_t> shape(rank);
  size_t numel = 1;
  for (size_t i = 0; i < rank; ++i) {
    shape[i] = size_t(get_u64(bytes.data() + 10 + i * 8));
    numel *= shape[i];
  }
  const size_t off = 10 + rank * 8;
  const size_t want = numel * dtype_size(dt);
  if (bytes.size() != off + want)
    fail_at(path, off,
            "payload size mismatch: have " + std::to_string(bytes.size() - off) + " bytes, want " +
                std::to_string(want));

  Tensor t = Tensor::zeros(std::move(shape), dt);
  if (dt == Dtype::F32) {
    float* v = t.f32();
    for (size_t i = 0; i < numel; ++i) {
      const uint32_t bits = get_u32(bytes.data() + off + i * 4);
      std::memcpy(&v[i], &bits, 4);
    }
  } else {
    double* v = t.f64();
    for (size_t i = 0; i < numel; ++i) {
      const uint64_t bits = get_u64(bytes.data() + off + i * 8);
      std::memcpy(&v[i], &bits, 8);
    }
  }
  return t;
}

}  // namespace ff::gnft
