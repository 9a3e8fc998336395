#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ff {

// Runtime element type. Training runs in F32 through the kernel dispatch
// table; gradient checking runs the same graph in F64 through the scalar
// reference kernels.
enum class Dtype : uint8_t { F32 = 1, F64 = 2 };

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }
inline size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

// Flat typed buffer; exactly one of the two vectors is populated.
class Buffer {
 public:
  Buffer() = default;
  Buffer(Dtype dt, size_t n) : dtype_(dt) {
    if (dt == Dtype::F32)
      f32_.assign(n, 0.0f);
    else
      f64_.assign(n, 0.0);
  }

  Dtype dtype() const { return dtype_; }
  size_t size() const { return dtype_ == Dtype::F32 ? f32_.size() : f64_.size(); }
  bool empty() const { return size() == 0; }

  float* f32() { return f32_.data(); }
  const float* f32() const { return f32_.data(); }
  double* f64() { return f64_.data(); }
  const double* f64() const { return f64_.data(); }

  double at(size_t i) const { return dtype_ == Dtype::F32 ? double(f32_[i]) : f64_[i]; }
  void set(size_t i, double v) {
    if (dtype_ == Dtype::F32)
      f32_[i] = float(v);
    else
      f64_[i] = v;
  }
  void add(size_t i, double v) {
    if (dtype_ == Dtype::F32)
      f32_[i] += float(v);
    else
      f64_[i] += v;
  }
  void zero() {
    for (auto& x : f32_) x = 0.0f;
    for (auto& x : f64_) x = 0.0;
  }

 private:
  Dtype dtype_ = Dtype::F32;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

struct Node {
  std::vector<size_t> shape;
  Dtype dtype = Dtype::F32;
  Buffer value;
  Buffer grad;  // allocated on first use; leaf grads accumulate across backward calls
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "";
  std::string name;  // parameter path for leaves
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  size_t numel() const {
    size_t n = 1;
    for (size_t s : shape) n *= s;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != numel()) grad = Buffer(dtype, numel());
  }
};

// Shared handle to a node in the autodiff graph. Copies alias the same data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<size_t> shape, Dtype dt = Dtype::F32);
  static Tensor full(std::vector<size_t> shape, double v, Dtype dt = Dtype::F32);
  static Tensor scalar(double v, Dtype dt = Dtype::F32);
  static Tensor from_f32(std::vector<size_t> shape, std::vector<float> data);
  static Tensor from_f64(std::vector<size_t> shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t dim(size_t i) const { return node_->shape[i]; }
  size_t rank() const { return node_->shape.size(); }
  size_t numel() const { return node_->numel(); }
  Dtype dtype() const { return node_->dtype; }

  float* f32() { return node_->value.f32(); }
  const float* f32() const { return node_->value.f32(); }
  double* f64() { return node_->value.f64(); }
  const double* f64() const { return node_->value.f64(); }
  Buffer& value() { return node_->value; }
  const Buffer& value() const { return node_->value; }
  double at(size_t i) const { return node_->value.at(i); }
  void set(size_t i, double v) { node_->value.set(i, v); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }
  Buffer& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.zero();
  }

  // Reverse-mode sweep from a scalar. Non-leaf grads are reset each call;
  // leaf grads accumulate until zero_grad().
  void backward() const;

  // Value copy detached from the graph (non-differentiable leaf).
  Tensor detach() const;
  // Same-shape cast; detached from the graph.
  Tensor to(Dtype dt) const;

  std::string shape_str() const;

 private:
  std::shared_ptr<Node> node_;
};

// RAII guard: while alive, ops record no graph (inference mode).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

bool grad_enabled();

std::string shape_to_string(const std::vector<size_t>& s);

}  // namespace ff
