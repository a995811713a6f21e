#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nnfc/error.hpp"

namespace nnfc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Over-aligned storage. Vectorised kernels peel unaligned heads at run time,
// which changes summation order; a fixed alignment keeps results bit-identical
// from run to run.
inline constexpr std::size_t kBufferAlignment = 64;

template <class T>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tape;

// Dense row-major array that participates in reverse-mode differentiation.
// Copies share the underlying node; use clone() for a detached deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad, 0) {}

  // Takes ownership of already aligned storage.
  static Tensor adopt(Shape shape, Buffer<T> data, bool requires_grad = false) {
    return Tensor(std::move(shape), std::move(data), requires_grad, 0);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return adopt(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    auto n = numel(shape);
    return adopt(std::move(shape), Buffer<T>(n, v));
  }

  static Tensor scalar(T v) { return adopt({1}, Buffer<T>{v}); }

  // Builds an op result; records parents and the backward rule only when
  // some input needs a gradient and grad mode is on.
  static Tensor from_op(Shape shape, Buffer<T> value, std::vector<std::shared_ptr<NodeT>> parents,
                        std::function<void(NodeT&)> backward_fn) {
    Tensor out;
    out.node_ = std::make_shared<NodeT>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
      for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access, meant for leaves (parameters, inputs under test).
  std::span<T> mutable_data() { return node_->value; }
  std::vector<T> values() const { return {node_->value.begin(), node_->value.end()}; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const { return adopt(node_->shape, node_->value, false); }

  void backward() const;

  std::shared_ptr<NodeT> node() const { return node_; }

 private:
  Tensor(Shape shape, Buffer<T> data, bool requires_grad, int) : node_(std::make_shared<NodeT>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimension sizes must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                           " elements");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  std::shared_ptr<NodeT> node_;
};

// Topologically ordered record of the nodes reachable from a root that
// need gradients. Each node appears after all of its inputs.
template <class T>
class Tape {
 public:
  using NodeT = detail::Node<T>;

  explicit Tape(const Tensor<T>& root) {
    if (!root.requires_grad()) return;
    std::unordered_set<const NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        NodeT* parent = node->parents[next++].get();
        if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<NodeT*>& order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and runs every backward rule once in reverse order.
  void run_backward() {
    if (order_.empty()) return;
    NodeT* root = order_.back();
    T* g = root->grad_buffer();
    for (std::size_t i = 0; i < root->value.size(); ++i) g[i] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      NodeT* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  std::vector<NodeT*> order_;
};

template <class T>
void Tensor<T>::backward() const {
  if (size() != 1) throw ContractError("backward() requires a scalar, got shape " + shape_str(shape()));
  Tape<T> tape(*this);
  tape.run_backward();
}

}  // namespace nnfc
