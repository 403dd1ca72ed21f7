// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

namespace detail {

// Two-tap interpolation stencil for each output index of a 1D resize.
struct LinearStencil {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;  // weight of `hi`
};

inline LinearStencil linear_stencil(std::size_t in, std::size_t out, bool align_corners) {
  LinearStencil s;
  s.lo.resize(out);
  s.hi.resize(out);
  s.frac.resize(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src;
    if (align_corners) {
      src = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) /
                                 static_cast<double>(out - 1);
    } else {
      src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      src = std::max(src, 0.0);
    }
    const std::size_t lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
    s.lo[i] = lo;
    s.hi[i] = std::min(lo + 1, in - 1);
    s.frac[i] = src - static_cast<double>(lo);
  }
  return s;
}

// Resizes axis `axis` (of 5) of a row-major buffer.
template <typename T>
std::vector<T> resize_axis(const std::vector<T>& src, const Shape& shape, std::size_t axis,
                           const LinearStencil& st, std::size_t out_extent) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t in_extent = shape[axis];
  std::vector<T> dst(outer * out_extent * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < out_extent; ++i) {
      const T* a = src.data() + (o * in_extent + st.lo[i]) * inner;
      const T* b = src.data() + (o * in_extent + st.hi[i]) * inner;
      T* d = dst.data() + (o * out_extent + i) * inner;
      const T f = static_cast<T>(st.frac[i]);
      for (std::size_t k = 0; k < inner; ++k) d[k] = a[k] * (T{1} - f) + b[k] * f;
    }
  }
  return dst;
}

// Transpose of resize_axis: scatters `grad` (resized extent) back onto the source extent.
template <typename T>
std::vector<T> resize_axis_adjoint(const std::vector<T>& grad, const Shape& src_shape,
                                   std::size_t axis, const LinearStencil& st,
                                   std::size_t out_extent) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= src_shape[a];
  for (std::size_t a = axis + 1; a < src_shape.size(); ++a) inner *= src_shape[a];
  const std::size_t in_extent = src_shape[axis];
  std::vector<T> dst(outer * in_extent * inner, T{0});
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < out_extent; ++i) {
      const T* gsrc = grad.data() + (o * out_extent + i) * inner;
      T* a = dst.data() + (o * in_extent + st.lo[i]) * inner;
      T* b = dst.data() + (o * in_extent + st.hi[i]) * inner;
      const T f = static_cast<T>(st.frac[i]);
      for (std::size_t k = 0; k < inner; ++k) {
        a[k] += gsrc[k] * (T{1} - f);
        b[k] += gsrc[k] * f;
      }
    }
  }
  return dst;
}

}  // namespace detail

// Separable linear interpolation over the last three axes of a 5-axis tensor.
// Returns an exact copy when the target equals the source extents.
template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& input, const Extents3& target, bool align_corners) {
  if (input.rank() != 5) {
    throw ConfigurationError("trilinear_resize: expected 5 axes, got " + shape_string(input.shape()));
  }
  for (auto e : target) {
    if (e == 0) throw ConfigurationError("trilinear_resize: target extents must be >= 1");
  }
  Shape shape = input.shape();
  std::vector<Shape> shapes{shape};
  std::vector<detail::LinearStencil> stencils;
  std::vector<T> buf(input.data().begin(), input.data().end());
  for (std::size_t a = 0; a < 3; ++a) {
    stencils.push_back(detail::linear_stencil(shape[2 + a], target[a], align_corners));
    if (shape[2 + a] != target[a]) {
      buf = detail::resize_axis(buf, shape, 2 + a, stencils.back(), target[a]);
      shape[2 + a] = target[a];
    }
    shapes.push_back(shape);
  }
  return Tensor<T>::make_result(shape, std::move(buf), {input},
                                [shapes, stencils, target](const auto& o) {
    T* g = detail::grad_target(o.grad_fn->inputs[0]);
    if (!g) return;
    std::vector<T> grad = o.grad;
    for (std::size_t a = 3; a-- > 0;) {
      if (shapes[a][2 + a] != target[a]) {
        grad = detail::resize_axis_adjoint(grad, shapes[a], 2 + a, stencils[a], target[a]);
      }
    }
    for (std::size_t i = 0; i < grad.size(); ++i) g[i] += grad[i];
  });
}

}  // namespace mednext
