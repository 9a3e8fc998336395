#include "featfield/nn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "featfield/gnft.hpp"

namespace ff {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ff::ops;

Tensor ParamStore::add(const std::string& name, const std::vector<size_t>& shape, Dtype dt) {
  if (name.empty()) throw std::runtime_error("ParamStore: empty parameter name");
  if (map_.count(name)) throw std::runtime_error("ParamStore: duplicate parameter '" + name + "'");
  Tensor t = Tensor::zeros(shape, dt);
  t.set_requires_grad(true);
  order_.push_back(name);
  map_.emplace(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::runtime_error("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(order_.size());
  for (const auto& n : order_) out.push_back(map_.at(n));
  return out;
}

size_t ParamStore::scalar_count() const {
  size_t c = 0;
  for (const auto& n : order_) c += map_.at(n).numel();
  return c;
}

size_t ParamStore::scalar_count(const std::string& prefix) const {
  size_t c = 0;
  for (const auto& n : order_)
    if (n.rfind(prefix, 0) == 0) c += map_.at(n).numel();
  return c;
}

void ParamStore::zero_grads() const {
  for (const auto& n : order_) {
    Tensor t = map_.at(n);
    t.zero_grad();
  }
}

void ParamStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  json plist = json::array();
  for (size_t i = 0; i < order_.size(); ++i) {
    const Tensor& t = map_.at(order_[i]);
    const std::string file = "p" + std::to_string(i) + ".gnft";
    gnft::save((fs::path(dir) / file).string(), t);
    json e;
    e["name"] = order_[i];
    e["file"] = file;
    e["shape"] = t.shape();
    plist.push_back(e);
  }
  manifest["params"] = plist;
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("ParamStore: cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

void ParamStore::load(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw std::runtime_error("ParamStore: cannot open " + mpath.string());
  json manifest;
  f >> manifest;
  const auto& plist = manifest.at("params");
  if (plist.size() != order_.size())
    throw std::runtime_error("ParamStore: checkpoint has " + std::to_string(plist.size()) +
                             " tensors but the model defines " + std::to_string(order_.size()));
  size_t seen = 0;
  for (const auto& e : plist) {
    const std::string name = e.at("name").get<std::string>();
    auto it = map_.find(name);
    if (it == map_.end())
      throw std::runtime_error("ParamStore: checkpoint tensor '" + name +
                               "' does not exist in the model");
    Tensor dst = it->second;
    const Tensor src = gnft::load((fs::path(dir) / e.at("file").get<std::string>()).string());
    if (src.shape() != dst.shape() || src.dtype() != dst.dtype())
      throw std::runtime_error("ParamStore: shape/dtype mismatch for '" + name + "' (" +
                               src.shape_str() + " vs " + dst.shape_str() + ")");
    for (size_t i = 0; i < dst.numel(); ++i) dst.set(i, src.at(i));
    ++seen;
  }
  (void)seen;
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  if (has_bias) y = add(y, b);
  return y;
}

Linear make_linear(ParamStore& store, const std::string& name, size_t in, size_t out, Rng& rng,
                   Dtype dt, bool bias, double gain) {
  Linear l;
  l.w = store.add(name + "/w", {in, out}, dt);
  const double std = gain * std::sqrt(2.0 / static_cast<double>(in));
  for (size_t i = 0; i < l.w.numel(); ++i) l.w.set(i, rng.normal() * std);
  l.has_bias = bias;
  if (bias) l.b = store.add(name + "/b", {out}, dt);
  return l;
}

Tensor Conv3dBlock::forward(const Tensor& x) const {
  Tensor y = conv3d(x, w, b, stride, pad);
  if (norm) {
    y = norm_per_channel(y, 1e-5);
    y = add(mul(y, gamma), beta);
  }
  if (act) y = leaky_relu(y, slope);
  return y;
}

Conv3dBlock make_conv_block(ParamStore& store, const std::string& name, size_t cin, size_t cout,
                            size_t k, int stride, int pad, Rng& rng, Dtype dt, bool norm,
                            bool act, double slope) {
  Conv3dBlock c;
  c.w = store.add(name + "/w", {k, k, k, cin, cout}, dt);
  const double std = std::sqrt(2.0 / (static_cast<double>(k * k * k) * static_cast<double>(cin)));
  for (size_t i = 0; i < c.w.numel(); ++i) c.w.set(i, rng.normal() * std);
  c.b = store.add(name + "/b", {cout}, dt);
  c.stride = stride;
  c.pad = pad;
  c.norm = norm;
  c.act = act;
  c.slope = slope;
  if (norm) {
    c.gamma = store.add(name + "/gamma", {cout}, dt);
    for (size_t i = 0; i < cout; ++i) c.gamma.set(i, 1.0);
    c.beta = store.add(name + "/beta", {cout}, dt);
  }
  return c;
}

}  // namespace ff
