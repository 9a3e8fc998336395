#include "featfield/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ff {

namespace {
int g_no_grad_depth = 0;
}

NoGrad::NoGrad() { ++g_no_grad_depth; }
NoGrad::~NoGrad() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

std::string shape_to_string(const std::vector<size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::string Tensor::shape_str() const { return shape_to_string(node_->shape); }

Tensor Tensor::zeros(std::vector<size_t> shape, Dtype dt) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->dtype = dt;
  n->value = Buffer(dt, n->numel());
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<size_t> shape, double v, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  for (size_t i = 0; i < t.numel(); ++i) t.set(i, v);
  return t;
}

Tensor Tensor::scalar(double v, Dtype dt) { return full({}, v, dt); }

Tensor Tensor::from_f32(std::vector<size_t> shape, std::vector<float> data) {
  Tensor t = zeros(std::move(shape), Dtype::F32);
  if (data.size() != t.numel())
    throw std::runtime_error("from_f32: data size " + std::to_string(data.size()) +
                             " does not match shape " + t.shape_str());
  std::copy(data.begin(), data.end(), t.f32());
  return t;
}

Tensor Tensor::from_f64(std::vector<size_t> shape, std::vector<double> data) {
  Tensor t = zeros(std::move(shape), Dtype::F64);
  if (data.size() != t.numel())
    throw std::runtime_error("from_f64: data size " + std::to_string(data.size()) +
                             " does not match shape " + t.shape_str());
  std::copy(data.begin(), data.end(), t.f64());
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->value.at(0);
}

Tensor Tensor::detach() const {
  Tensor t = zeros(node_->shape, node_->dtype);
  t.node()->value = node_->value;
  return t;
}

Tensor Tensor::to(Dtype dt) const {
  Tensor t = zeros(node_->shape, dt);
  for (size_t i = 0; i < numel(); ++i) t.set(i, node_->value.at(i));
  return t;
}

void Tensor::backward() const {
  if (numel() != 1) throw std::runtime_error("backward(): loss must be scalar, got " + shape_str());
  if (!node_->requires_grad)
    throw std::runtime_error("backward(): tensor does not require grad");

  // Post-order DFS gives a deterministic topological order of the graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Reset non-leaf grads; leaves keep accumulating until zero_grad().
  for (Node* n : order) {
    n->ensure_grad();
    if (!n->is_leaf) n->grad.zero();
  }
  node_->grad.set(0, node_->grad.at(0) + 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn();
  }
}

}  // namespace ff
