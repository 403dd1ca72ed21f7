// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr double kGroupNormEps = 1e-5;

// GroupNorm over N x C x ... activations. Statistics are taken per
// (sample, group); gamma/beta are per channel. Variance is the biased
// estimator and is accumulated in double regardless of T.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, std::size_t num_groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps = kGroupNormEps) {
  if (input.rank() < 2) throw ConfigurationError("group_norm: input needs N x C axes");
  const std::size_t batch = input.extent(0), channels = input.extent(1);
  if (num_groups == 0 || channels % num_groups != 0) {
    throw ConfigurationError("group_norm: " + std::to_string(channels) +
                             " channels not divisible into " + std::to_string(num_groups) +
                             " groups");
  }
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ConfigurationError("group_norm: gamma/beta length must equal channel count");
  }
  const std::size_t spatial = input.numel() / (batch * channels);
  const std::size_t per_group = channels / num_groups;
  const std::size_t group_size = per_group * spatial;

  std::vector<T> out(input.numel());
  // Normalized activations and 1/std per (n, group) for the backward pass.
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  auto rstd = std::make_shared<std::vector<T>>(batch * num_groups);
  const T* x = input.raw();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t grp = 0; grp < num_groups; ++grp) {
      const std::size_t base = (n * channels + grp * per_group) * spatial;
      double s = 0;
      for (std::size_t i = 0; i < group_size; ++i) s += x[base + i];
      const double mu = s / static_cast<double>(group_size);
      double ss = 0;
      for (std::size_t i = 0; i < group_size; ++i) {
        const double d = x[base + i] - mu;
        ss += d * d;
      }
      const double inv = 1.0 / std::sqrt(ss / static_cast<double>(group_size) + eps);
      (*rstd)[n * num_groups + grp] = static_cast<T>(inv);
      for (std::size_t cg = 0; cg < per_group; ++cg) {
        const std::size_t c = grp * per_group + cg;
        const T gc = gamma.raw()[c], bc = beta.raw()[c];
        for (std::size_t v = 0; v < spatial; ++v) {
          const std::size_t k = base + cg * spatial + v;
          const T xh = static_cast<T>((x[k] - mu) * inv);
          (*xhat)[k] = xh;
          out[k] = gc * xh + bc;
        }
      }
    }
  }
  return Tensor<T>::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [=](const auto& o) {
        const auto& ins = o.grad_fn->inputs;
        const T* dy = o.grad.data();
        const T* g = ins[1]->data.data();
        if (T* dgamma = detail::grad_target(ins[1])) {
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t base = (n * channels + c) * spatial;
              T acc = 0;
              for (std::size_t v = 0; v < spatial; ++v) acc += dy[base + v] * (*xhat)[base + v];
              dgamma[c] += acc;
            }
          }
        }
        if (T* dbeta = detail::grad_target(ins[2])) {
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t base = (n * channels + c) * spatial;
              T acc = 0;
              for (std::size_t v = 0; v < spatial; ++v) acc += dy[base + v];
              dbeta[c] += acc;
            }
          }
        }
        T* dx = detail::grad_target(ins[0]);
        if (!dx) return;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t grp = 0; grp < num_groups; ++grp) {
            const std::size_t base = (n * channels + grp * per_group) * spatial;
            // dxhat = dy * gamma; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            double m1 = 0, m2 = 0;
            for (std::size_t cg = 0; cg < per_group; ++cg) {
              const T gc = g[grp * per_group + cg];
              for (std::size_t v = 0; v < spatial; ++v) {
                const std::size_t k = base + cg * spatial + v;
                const double dxh = static_cast<double>(dy[k]) * gc;
                m1 += dxh;
                m2 += dxh * (*xhat)[k];
              }
            }
            m1 /= static_cast<double>(group_size);
            m2 /= static_cast<double>(group_size);
            const double r = (*rstd)[n * num_groups + grp];
            for (std::size_t cg = 0; cg < per_group; ++cg) {
              const T gc = g[grp * per_group + cg];
              for (std::size_t v = 0; v < spatial; ++v) {
                const std::size_t k = base + cg * spatial + v;
                const double dxh = static_cast<double>(dy[k]) * gc;
                dx[k] += static_cast<T>(r * (dxh - m1 - (*xhat)[k] * m2));
              }
            }
          }
        }
      });
}

}  // namespace mednext
