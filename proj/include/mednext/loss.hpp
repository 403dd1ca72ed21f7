// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Soft Dice + cross-entropy with deep supervision.
//
// For logits z (N x K x D x H x W), p = softmax(z) over K and one-hot target g:
//   CE   = -mean_{n,v} log p[n, y(n,v), v]
//   Dice = 1 - mean_{n,k} (2 sum_v p g + s) / (sum_v p + sum_v g + s)
// Every class, background included, enters the Dice mean.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mednext/errors.hpp"
#include "mednext/synthetic.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr double kDiceSmooth = 1e-5;

struct DiceCeTerms {
  double dice_loss = 0;
  double cross_entropy = 0;
  double total() const { return dice_loss + cross_entropy; }
};

// Nearest-neighbour downsampling: output voxel i takes input voxel i * factor.
inline LabelMap downsample_labels(const LabelMap& in, const Extents3& out_extents) {
  LabelMap out;
  out.extents = out_extents;
  out.labels.resize(out.numel());
  Extents3 factor{};
  for (int a = 0; a < 3; ++a) {
    if (out_extents[a] == 0 || in.extents[a] % out_extents[a] != 0) {
      throw UsageError("cannot downsample labels of extent " + std::to_string(in.extents[a]) +
                       " to " + std::to_string(out_extents[a]));
    }
    factor[a] = in.extents[a] / out_extents[a];
  }
  for (std::size_t d = 0; d < out_extents[0]; ++d)
    for (std::size_t h = 0; h < out_extents[1]; ++h)
      for (std::size_t w = 0; w < out_extents[2]; ++w)
        out.labels[out.index(d, h, w)] = in.at(d * factor[0], h * factor[1], w * factor[2]);
  return out;
}

// 8/15, 4/15, 2/15, 1/15 for four outputs; halves per level in general.
inline std::vector<double> default_ds_weights(std::size_t outputs) {
  std::vector<double> w(outputs);
  double total = 0;
  for (std::size_t r = 0; r < outputs; ++r) total += (w[r] = std::ldexp(1.0, -static_cast<int>(r)));
  for (auto& x : w) x /= total;
  return w;
}

namespace detail {

template <typename T>
void check_logits_targets(const Tensor<T>& logits, std::span<const LabelMap> targets) {
  if (logits.rank() != 5) {
    throw UsageError("loss expects N x K x D x H x W logits, got " + shape_string(logits.shape()));
  }
  if (targets.size() != logits.extent(0)) {
    throw UsageError("loss got " + std::to_string(targets.size()) + " label maps for batch of " +
                     std::to_string(logits.extent(0)));
  }
  const std::size_t k = logits.extent(1);
  for (const auto& t : targets) {
    if (t.extents != Extents3{logits.extent(2), logits.extent(3), logits.extent(4)}) {
      throw UsageError("label map extents do not match logits " + shape_string(logits.shape()));
    }
    for (auto y : t.labels) {
      if (y >= k) throw UsageError("label " + std::to_string(y) + " out of range for " +
                                   std::to_string(k) + " classes");
    }
  }
}

// Softmax probabilities in double, laid out like the logits, plus CE.
template <typename T>
std::vector<double> softmax_probs(const Tensor<T>& logits, std::span<const LabelMap> targets,
                                  double* cross_entropy) {
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  const std::size_t v = logits.extent(2) * logits.extent(3) * logits.extent(4);
  const auto z = logits.data();
  std::vector<double> p(z.size());
  double ce = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * k * v;
    for (std::size_t i = 0; i < v; ++i) {
      double m = -INFINITY;
      for (std::size_t c = 0; c < k; ++c) m = std::max(m, static_cast<double>(z[base + c * v + i]));
      double s = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double e = std::exp(static_cast<double>(z[base + c * v + i]) - m);
        p[base + c * v + i] = e;
        s += e;
      }
      for (std::size_t c = 0; c < k; ++c) p[base + c * v + i] /= s;
      const std::size_t y = targets[b].labels[i];
      ce -= static_cast<double>(z[base + y * v + i]) - m - std::log(s);
    }
  }
  *cross_entropy = ce / static_cast<double>(n * v);
  return p;
}

}  // namespace detail

template <typename T>
DiceCeTerms dice_ce_terms(const Tensor<T>& logits, std::span<const LabelMap> targets,
                          double smooth = kDiceSmooth) {
  detail::check_logits_targets(logits, targets);
  DiceCeTerms terms;
  const auto p = detail::softmax_probs(logits, targets, &terms.cross_entropy);
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  const std::size_t v = logits.extent(2) * logits.extent(3) * logits.extent(4);
  double dice_sum = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < k; ++c) {
      double inter = 0, ps = 0, gs = 0;
      for (std::size_t i = 0; i < v; ++i) {
        const double pi = p[(b * k + c) * v + i];
        const double gi = targets[b].labels[i] == c ? 1.0 : 0.0;
        inter += pi * gi;
        ps += pi;
        gs += gi;
      }
      dice_sum += (2 * inter + smooth) / (ps + gs + smooth);
    }
  }
  terms.dice_loss = 1.0 - dice_sum / static_cast<double>(n * k);
  return terms;
}

// Differentiable Dice + CE for one output resolution.
template <typename T>
Tensor<T> dice_ce_single(const Tensor<T>& logits, std::span<const LabelMap> targets,
                         double smooth = kDiceSmooth) {
  detail::check_logits_targets(logits, targets);
  double ce = 0;
  auto p = detail::softmax_probs(logits, targets, &ce);
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  const std::size_t v = logits.extent(2) * logits.extent(3) * logits.extent(4);

  // dL/dz, computed eagerly and scaled by the upstream gradient in backward.
  std::vector<double> dz(p.size());
  double dice_sum = 0;
  const double dice_scale = 1.0 / static_cast<double>(n * k);
  const double ce_scale = 1.0 / static_cast<double>(n * v);
  std::vector<double> dp(k * v);
  for (std::size_t b = 0; b < n; ++b) {
    const LabelMap& t = targets[b];
    const double* pb = p.data() + b * k * v;
    for (std::size_t c = 0; c < k; ++c) {
      double inter = 0, ps = 0, gs = 0;
      for (std::size_t i = 0; i < v; ++i) {
        const double gi = t.labels[i] == c ? 1.0 : 0.0;
        inter += pb[c * v + i] * gi;
        ps += pb[c * v + i];
        gs += gi;
      }
      const double num = 2 * inter + smooth, den = ps + gs + smooth;
      dice_sum += num / den;
      for (std::size_t i = 0; i < v; ++i) {
        const double gi = t.labels[i] == c ? 1.0 : 0.0;
        dp[c * v + i] = -dice_scale * (2 * gi * den - num) / (den * den);
      }
    }
    for (std::size_t i = 0; i < v; ++i) {
      double dot = 0;
      for (std::size_t c = 0; c < k; ++c) dot += pb[c * v + i] * dp[c * v + i];
      for (std::size_t c = 0; c < k; ++c) {
        const double pc = pb[c * v + i];
        const double onehot = t.labels[i] == c ? 1.0 : 0.0;
        dz[(b * k + c) * v + i] = pc * (dp[c * v + i] - dot) + ce_scale * (pc - onehot);
      }
    }
  }
  const double loss = ce + 1.0 - dice_sum * dice_scale;
  return Tensor<T>::make_result(Shape{1}, {static_cast<T>(loss)}, {logits},
                                [dz = std::move(dz)](const auto& o) {
                                  if (T* g = detail::grad_target(o.grad_fn->inputs[0])) {
                                    const double up = static_cast<double>(o.grad[0]);
                                    for (std::size_t i = 0; i < dz.size(); ++i) {
                                      g[i] += static_cast<T>(up * dz[i]);
                                    }
                                  }
                                });
}

// outputs[0] is full resolution; outputs[r] must be the full-resolution
// extents divided by an integer. Targets are given at full resolution.
template <typename T>
Tensor<T> dice_ce_loss(const std::vector<Tensor<T>>& outputs, std::span<const LabelMap> targets,
                       std::span<const double> ds_weights, double smooth = kDiceSmooth) {
  if (outputs.empty()) throw UsageError("dice_ce_loss: no outputs");
  if (ds_weights.size() != outputs.size()) {
    throw UsageError("dice_ce_loss: " + std::to_string(ds_weights.size()) + " weights for " +
                     std::to_string(outputs.size()) + " outputs");
  }
  double wsum = 0;
  for (double w : ds_weights) {
    if (!(w >= 0)) throw UsageError("dice_ce_loss: weights must be non-negative");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw UsageError("dice_ce_loss: weights must sum to 1");

  Tensor<T> total;
  for (std::size_t r = 0; r < outputs.size(); ++r) {
    const Tensor<T>& out = outputs[r];
    if (out.rank() != 5) throw UsageError("dice_ce_loss: output " + std::to_string(r) + " is not 5-axis");
    const Extents3 ext{out.extent(2), out.extent(3), out.extent(4)};
    Tensor<T> term;
    if (r == 0 || targets.empty() || targets.front().extents == ext) {
      term = dice_ce_single(out, targets, smooth);
    } else {
      std::vector<LabelMap> low;
      low.reserve(targets.size());
      for (const auto& t : targets) low.push_back(downsample_labels(t, ext));
      term = dice_ce_single(out, std::span<const LabelMap>(low), smooth);
    }
    term = scale(term, static_cast<T>(ds_weights[r]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> dice_ce_loss(const std::vector<Tensor<T>>& outputs, std::span<const LabelMap> targets) {
  const auto w = default_ds_weights(outputs.size());
  return dice_ce_loss(outputs, targets, std::span<const double>(w));
}

}  // namespace mednext
