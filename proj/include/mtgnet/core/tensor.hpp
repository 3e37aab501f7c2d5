#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtgnet/core/error.hpp"

namespace mtg {

/// Row-major dimension list. Feature maps are (N, C, H, W); matrices are (rows, cols).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& dims() const { return dims_; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : dims_) n *= static_cast<std::size_t>(d);
    return n;
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  void validate() const {
    for (int d : dims_)
      if (d < 0) throw ShapeError("negative dimension in shape");
  }
  std::vector<int> dims_;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables tape recording within a scope (inference, MC sampling).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  /// Gradient buffer, zero-initialised on first touch.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Reference-semantics handle to a value on the autodiff tape. Copies share
/// storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape) { return filled(shape, T(0)); }

  static Tensor filled(const Shape& shape, T v) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->value.assign(shape.numel(), v);
    return Tensor(std::move(n));
  }

  static Tensor from(const Shape& shape, std::vector<T> values) {
    if (values.size() != shape.numel())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from(Shape{1}, {v}); }

  /// A leaf that accumulates gradients.
  static Tensor parameter(const Shape& shape, std::vector<T> values) {
    Tensor t = from(shape, std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  int dim(int i) const { return node_->shape[i]; }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::vector<T>& values() & { return node_->value; }
  const std::vector<T>& values() const& { return node_->value; }
  /// A temporary may hold the only reference to its node, so hand out a copy.
  std::vector<T> values() && { return node_->value; }

  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->value[0];
  }

  T at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  /// Drops the gradient buffer; has_grad() is false until a gradient arrives.
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  /// Deep copy of the value, detached from the tape.
  Tensor clone() const { return from(shape(), node_->value); }
  Tensor detach() const { return clone(); }

  bool all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(), [](T v) { return std::isfinite(v); });
  }

  const NodePtr& node() const { return node_; }
  const char* op_name() const { return node_->op; }

  /// Reverse-mode sweep from this scalar.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode_flag()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Builds an op result. `backward` receives the result node; its parents are
/// in the order given, so closures index into `self.parents`.
template <typename T>
Tensor<T> make_result(const char* op, const Shape& shape, std::vector<T> value,
                      std::vector<const Tensor<T>*> inputs, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = shape;
  n->value = std::move(value);
  n->op = op;
  bool track = false;
  if (grad_mode_flag())
    for (const auto* t : inputs)
      if (t->requires_grad()) track = true;
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto* t : inputs) n->parents.push_back(t->node());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

/// Gradient accumulator of parent `i`, or nullptr when it does not need one.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.grad_buffer().data();
}

}  // namespace detail

template <typename T>
std::vector<Tensor<T>*> as_pointers(std::vector<Tensor<T>>& v) {
  std::vector<Tensor<T>*> out;
  out.reserve(v.size());
  for (auto& t : v) out.push_back(&t);
  return out;
}

}  // namespace mtg
