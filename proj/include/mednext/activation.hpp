// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "mednext/tensor.hpp"

namespace mednext {

// Standard normal CDF.
template <typename T>
T normal_cdf(T x) {
  return T{0.5} * std::erfc(-x / std::numbers::sqrt2_v<T>);
}

// Exact GELU, x * Phi(x). The tanh approximation is not used.
template <typename T>
Tensor<T> gelu(const Tensor<T>& input) {
  std::vector<T> out(input.numel());
  const T* x = input.raw();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * normal_cdf(x[i]);
  return Tensor<T>::make_result(input.shape(), std::move(out), {input}, [](const auto& o) {
    const auto& in = o.grad_fn->inputs[0];
    T* g = detail::grad_target(in);
    if (!g) return;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T xv = in->data[i];
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * xv * xv);
      g[i] += o.grad[i] * (normal_cdf(xv) + xv * pdf);
    }
  });
}

}  // namespace mednext
