// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay:
//   theta <- theta * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct OptimizerState {
  AdamWOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const Tensor<T>> params,
                                       AdamWOptions options = {}) {
  OptimizerState<T> s;
  s.options = options;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.numel(), T{0});
    s.second_moment.emplace_back(p.numel(), T{0});
  }
  return s;
}

// One update using each parameter's accumulated gradient (absent = zero).
template <typename T>
void adamw_step(std::span<Tensor<T>> params, OptimizerState<T>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw UsageError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  const AdamWOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const T decay = static_cast<T>(1.0 - o.lr * o.weight_decay);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T one_b1 = static_cast<T>(1.0 - o.beta1), one_b2 = static_cast<T>(1.0 - o.beta2);
  const T step_size = static_cast<T>(o.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(o.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != theta.size() || v.size() != theta.size()) {
      throw UsageError("optimizer moment shape does not match parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T g = grad.empty() ? T{0} : grad[j];
      m[j] = b1 * m[j] + one_b1 * g;
      v[j] = b2 * v[j] + one_b2 * g * g;
      theta[j] = theta[j] * decay - step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWOptions options = {})
      : params_(std::move(params)),
        state_(make_optimizer_state<T>(std::span<const Tensor<T>>(params_), options)) {}

  void step() { adamw_step<T>(std::span<Tensor<T>>(params_), state_); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const OptimizerState<T>& state() const { return state_; }

 private:
  std::vector<Tensor<T>> params_;
  OptimizerState<T> state_;
};

}  // namespace mednext
