// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with a small reverse-mode autograd tape.
//
// A Tensor is a reference-counted handle: copying a Tensor shares storage and
// gradient. Use clone() for a deep copy. Operations that consume tensors with
// gradient participation record a node on the output; backward() walks those
// nodes in reverse topological order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mednext/errors.hpp"

namespace mednext {

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  if constexpr (std::is_same_v<T, float>) {
    return DType::Float32;
  } else {
    return DType::Float64;
  }
}

inline const char* dtype_name(DType d) {
  return d == DType::Float32 ? "float32" : "float64";
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  return os.str();
}

// Autograd is recorded only while this is true (see NoGradGuard).
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;

  bool participates() const { return requires_grad || grad_fn != nullptr; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

template <typename T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Receives the output tensor (its grad is the incoming gradient) and
  // accumulates into the gradients of `inputs`.
  std::function<void(const TensorImpl<T>& out)> backward;
};

}  // namespace detail

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : impl_(std::make_shared<Impl>()) {
    for (auto e : shape) {
      if (e == 0) {
        throw ConfigurationError("tensor extents must be >= 1, got " +
                                 shape_string(shape));
      }
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (values.size() != impl_->data.size()) {
      throw ConfigurationError("element count " + std::to_string(values.size()) +
                               " does not match shape " + shape_string(impl_->shape));
    }
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* raw() { return impl_->data.data(); }
  const T* raw() const { return impl_->data.data(); }

  T item() const {
    if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape_string(shape()));
    return impl_->data[0];
  }

  // Element access for canonical N x C x D x H x W activations.
  T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return impl_->data[offset5(n, c, d, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return impl_->data[offset5(n, c, d, h, w)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy without graph history.
  Tensor clone() const {
    Tensor out(shape());
    std::copy(impl_->data.begin(), impl_->data.end(), out.impl_->data.begin());
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  // Same storage, cut off from the graph.
  Tensor detach() const {
    Tensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = impl_->shape;
    out.impl_->data = impl_->data;
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<detail::TensorImpl<T>> impl() const { return impl_; }

  // Builds an op result; records a node when grad mode is on and any input
  // participates in differentiation.
  static Tensor make_result(Shape shape, std::vector<T> values,
                            std::vector<Tensor> inputs,
                            std::function<void(const detail::TensorImpl<T>&)> backward) {
    Tensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = std::move(shape);
    out.impl_->data = std::move(values);
    if (!grad_mode_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.impl_->participates());
    if (!any) return out;
    auto node = std::make_shared<detail::Node<T>>();
    for (auto& in : inputs) node->inputs.push_back(in.defined() ? in.impl_ : nullptr);
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
    return out;
  }

 private:
  using Impl = detail::TensorImpl<T>;

  std::size_t offset5(std::size_t n, std::size_t c, std::size_t d, std::size_t h,
                      std::size_t w) const {
    const auto& s = impl_->shape;
    return (((n * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w;
  }

  std::shared_ptr<Impl> impl_;
};

namespace detail {

// Gradient buffer of an op input, or nullptr when the input does not need one.
template <typename T>
T* grad_target(const std::shared_ptr<TensorImpl<T>>& in) {
  if (!in || !in->participates()) return nullptr;
  return in->ensure_grad().data();
}

}  // namespace detail

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// interior gradients are transient and rebuilt on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     shape_string(loss.shape()));
  }
  using Impl = detail::TensorImpl<T>;
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      Impl* child = node->grad_fn->inputs[next++].get();
      if (child && child->participates() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  for (Impl* n : order) {
    if (n->grad_fn) n->grad.assign(n->data.size(), T{0});
  }
  Impl* root = loss.impl().get();
  root->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->grad_fn) (*it)->grad_fn->backward(**it);
  }
  for (Impl* n : order) {
    if (n->grad_fn && n != root) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

namespace detail {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigurationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const T* pa = a.raw();
  const T* pb = b.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](const auto& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = detail::grad_target(o.grad_fn->inputs[k])) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * b.raw()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](const auto& o) {
    const auto& ins = o.grad_fn->inputs;
    if (T* ga = detail::grad_target(ins[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * ins[1]->data[i];
    }
    if (T* gb = detail::grad_target(ins[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * ins[0]->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](const auto& o) {
    if (T* g = detail::grad_target(o.grad_fn->inputs[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result(Shape{1}, {total}, {a}, [](const auto& o) {
    if (T* g = detail::grad_target(o.grad_fn->inputs[0])) {
      const std::size_t n = o.grad_fn->inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

// Softmax along `axis`, independently for every index of the other axes.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis = 1) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ConfigurationError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<T> out(a.numel());
  const T* x = a.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = x[base];
      for (std::size_t c = 1; c < len; ++c) mx = std::max(mx, x[base + c * inner]);
      T z = 0;
      for (std::size_t c = 0; c < len; ++c) {
        T e = std::exp(x[base + c * inner] - mx);
        out[base + c * inner] = e;
        z += e;
      }
      for (std::size_t c = 0; c < len; ++c) out[base + c * inner] /= z;
    }
  }
  return Tensor<T>::make_result(s, std::move(out), {a}, [outer, inner, len](const auto& o) {
    T* g = detail::grad_target(o.grad_fn->inputs[0]);
    if (!g) return;
    for (std::size_t b = 0; b < outer; ++b) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = b * len * inner + i;
        T dot = 0;
        for (std::size_t c = 0; c < len; ++c) {
          dot += o.grad[base + c * inner] * o.data[base + c * inner];
        }
        for (std::size_t c = 0; c < len; ++c) {
          const std::size_t k = base + c * inner;
          g[k] += o.data[k] * (o.grad[k] - dot);
        }
      }
    }
  });
}

// Element type conversion (no graph).
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  std::transform(t.data().begin(), t.data().end(), out.data().begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

}  // namespace mednext
