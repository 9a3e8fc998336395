#include <cstdio>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "featfield/gnft.hpp"
#include "featfield/rng.hpp"

using namespace ff;

namespace {
std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}
const char* tmp(const char* name) {
  static std::string p;
  p = std::string("/tmp/") + name;
  return p.c_str();
}
}  // namespace

TEST_CASE("gnft round-trips f32 and f64 tensors exactly") {
  Rng rng(7);
  for (Dtype dt : {Dtype::F32, Dtype::F64}) {
    Tensor t = Tensor::zeros({3, 4, 5}, dt);
    for (size_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal());
    const char* path = tmp("roundtrip.gnft");
    gnft::save(path, t);
    Tensor u = gnft::load(path);
    REQUIRE(u.dtype() == dt);
    REQUIRE(u.shape() == t.shape());
    for (size_t i = 0; i < t.numel(); ++i) CHECK(u.at(i) == t.at(i));
  }
}

TEST_CASE("gnft header bytes follow the documented layout") {
  Tensor t = Tensor::zeros({2, 3}, Dtype::F32);
  t.set(0, 1.0);
  const char* path = tmp("header.gnft");
  gnft::save(path, t);
  auto bytes = slurp(path);
  REQUIRE(bytes.size() == 4u + 4u + 1u + 1u + 2u * 8u + 6u * 4u);
  CHECK(bytes[0] == 'G');
  CHECK(bytes[1] == 'N');
  CHECK(bytes[2] == 'F');
  CHECK(bytes[3] == 'T');
  // version 1, little-endian u32
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // dtype f32
  CHECK(static_cast<unsigned char>(bytes[9]) == 2);  // rank
  CHECK(static_cast<unsigned char>(bytes[10]) == 2); // extent[0] = 2 (LE u64)
  CHECK(static_cast<unsigned char>(bytes[18]) == 3); // extent[1] = 3
}

TEST_CASE("gnft save/load is byte-identical across re-export") {
  Rng rng(9);
  Tensor t = Tensor::zeros({7, 2}, Dtype::F64);
  for (size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform());
  gnft::save(tmp("a.gnft"), t);
  Tensor u = gnft::load(tmp("a.gnft"));
  gnft::save(tmp("b.gnft"), u);
  CHECK(slurp(tmp("a.gnft")) == slurp(tmp("b.gnft")));
}

TEST_CASE("gnft rank-0 scalar round-trips") {
  Tensor t = Tensor::scalar(2.5, Dtype::F64);
  gnft::save(tmp("s.gnft"), t);
  Tensor u = gnft::load(tmp("s.gnft"));
  CHECK(u.rank() == 0);
  CHECK(u.item() == 2.5);
}

TEST_CASE("gnft rejects malformed files with the path in the message") {
  const char* path = tmp("bad.gnft");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_WITH_AS(gnft::load(path), doctest::Contains("bad.gnft"), std::runtime_error);
  // Malformed header errors carry the byte offset of the bad field.
  CHECK_THROWS_WITH_AS(gnft::load(path), doctest::Contains("byte offset"), std::runtime_error);

  // Truncated payload: valid header claiming more data than present.
  Tensor t = Tensor::zeros({4, 4}, Dtype::F32);
  gnft::save(path, t);
  auto bytes = slurp(path);
  bytes.resize(bytes.size() - 7);
  {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(gnft::load(path), std::runtime_error);

  // Unknown dtype code.
  gnft::save(path, t);
  bytes = slurp(path);
  bytes[8] = 7;
  {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(gnft::load(path), std::runtime_error);

  CHECK_THROWS_AS(gnft::load("/tmp/definitely-missing-dir/x.gnft"), std::runtime_error);
}
