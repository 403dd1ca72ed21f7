// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Overlap metrics on label maps.
//
// Surface voxels are mask voxels with at least one 6-neighbour outside the
// mask; voxels beyond the volume border count as outside. Surface distances
// come from an exact squared Euclidean distance transform (separable lower
// envelope of parabolas).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mednext/errors.hpp"
#include "mednext/synthetic.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

namespace detail {

inline void check_same_extents(const LabelMap& a, const LabelMap& b) {
  if (a.extents != b.extents || a.labels.size() != b.labels.size()) {
    throw UsageError("label maps have different extents");
  }
}

// 1D squared distance transform of f (Felzenszwalb & Huttenlocher).
inline void edt_1d(const double* f, double* out, std::size_t n, double w2,
                   std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    double s;
    for (;;) {
      const std::size_t p = v[k];
      const double qd = static_cast<double>(q), pd = static_cast<double>(p);
      s = ((f[q] + w2 * qd * qd) - (f[p] + w2 * pd * pd)) / (2 * w2 * (qd - pd));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so k never underflows
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    std::fill(out, out + n, kInf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double d = qd - static_cast<double>(v[k]);
    out[q] = w2 * d * d + f[v[k]];
  }
}

}  // namespace detail

// Squared distance (in units of `spacing`) from each voxel to the nearest
// feature voxel; +inf everywhere if there are none.
inline std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& feature,
                                                      const Extents3& ext, double spacing = 1.0) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t nd = ext[0], nh = ext[1], nw = ext[2];
  std::vector<double> g(feature.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = feature[i] ? 0.0 : kInf;
  const double w2 = spacing * spacing;
  std::vector<double> line_in, line_out;
  std::vector<std::size_t> v;
  std::vector<double> z;
  auto pass = [&](std::size_t len, std::size_t stride, auto&& starts) {
    line_in.resize(len);
    line_out.resize(len);
    for (std::size_t base : starts) {
      for (std::size_t i = 0; i < len; ++i) line_in[i] = g[base + i * stride];
      detail::edt_1d(line_in.data(), line_out.data(), len, w2, v, z);
      for (std::size_t i = 0; i < len; ++i) g[base + i * stride] = line_out[i];
    }
  };
  std::vector<std::size_t> starts;
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t h = 0; h < nh; ++h) starts.push_back((d * nh + h) * nw);
  pass(nw, 1, starts);
  starts.clear();
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t w = 0; w < nw; ++w) starts.push_back(d * nh * nw + w);
  pass(nh, nw, starts);
  starts.clear();
  for (std::size_t h = 0; h < nh; ++h)
    for (std::size_t w = 0; w < nw; ++w) starts.push_back(h * nw + w);
  pass(nd, nh * nw, starts);
  return g;
}

// 1 where mask voxel has a 6-neighbour outside the mask (or the volume).
inline std::vector<std::uint8_t> surface_voxels(const std::vector<std::uint8_t>& mask,
                                                const Extents3& ext) {
  const std::size_t nd = ext[0], nh = ext[1], nw = ext[2];
  std::vector<std::uint8_t> out(mask.size(), 0);
  auto inside = [&](std::ptrdiff_t d, std::ptrdiff_t h, std::ptrdiff_t w) {
    if (d < 0 || h < 0 || w < 0 || d >= static_cast<std::ptrdiff_t>(nd) ||
        h >= static_cast<std::ptrdiff_t>(nh) || w >= static_cast<std::ptrdiff_t>(nw)) {
      return false;
    }
    return mask[(static_cast<std::size_t>(d) * nh + static_cast<std::size_t>(h)) * nw +
                static_cast<std::size_t>(w)] != 0;
  };
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t w = 0; w < nw; ++w) {
        const auto id = static_cast<std::ptrdiff_t>(d), ih = static_cast<std::ptrdiff_t>(h),
                   iw = static_cast<std::ptrdiff_t>(w);
        if (!inside(id, ih, iw)) continue;
        const bool edge = !inside(id - 1, ih, iw) || !inside(id + 1, ih, iw) ||
                          !inside(id, ih - 1, iw) || !inside(id, ih + 1, iw) ||
                          !inside(id, ih, iw - 1) || !inside(id, ih, iw + 1);
        out[(d * nh + h) * nw + w] = edge;
      }
  return out;
}

inline std::vector<std::uint8_t> class_mask(const LabelMap& m, std::size_t c) {
  std::vector<std::uint8_t> out(m.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.labels[i] == c;
  return out;
}

// Dice per foreground class 1..num_classes-1. Two empty masks score 1.
inline std::vector<double> dsc_metric(const LabelMap& pred, const LabelMap& target,
                                      std::size_t num_classes) {
  detail::check_same_extents(pred, target);
  std::vector<double> out;
  for (std::size_t c = 1; c < num_classes; ++c) {
    std::size_t a = 0, b = 0, ab = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      const bool pa = pred.labels[i] == c, tb = target.labels[i] == c;
      a += pa;
      b += tb;
      ab += pa && tb;
    }
    out.push_back(a + b == 0 ? 1.0 : 2.0 * static_cast<double>(ab) / static_cast<double>(a + b));
  }
  return out;
}

// Surface Dice per foreground class at `tolerance` (same unit as spacing).
// Two empty masks score 1; exactly one empty scores 0.
inline std::vector<double> sdc_metric(const LabelMap& pred, const LabelMap& target,
                                      std::size_t num_classes, double tolerance = 1.0,
                                      double spacing = 1.0) {
  detail::check_same_extents(pred, target);
  const double tol2 = tolerance * tolerance * (1 + 1e-12);
  std::vector<double> out;
  for (std::size_t c = 1; c < num_classes; ++c) {
    const auto sa = surface_voxels(class_mask(pred, c), pred.extents);
    const auto sb = surface_voxels(class_mask(target, c), target.extents);
    const std::size_t na = static_cast<std::size_t>(std::count(sa.begin(), sa.end(), 1));
    const std::size_t nb = static_cast<std::size_t>(std::count(sb.begin(), sb.end(), 1));
    if (na + nb == 0) {
      out.push_back(1.0);
      continue;
    }
    if (na == 0 || nb == 0) {
      out.push_back(0.0);
      continue;
    }
    const auto da = squared_distance_transform(sa, pred.extents, spacing);
    const auto db = squared_distance_transform(sb, target.extents, spacing);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
      if (sa[i] && db[i] <= tol2) ++hits;
      if (sb[i] && da[i] <= tol2) ++hits;
    }
    out.push_back(static_cast<double>(hits) / static_cast<double>(na + nb));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Argmax over the class axis of sample `n`; ties go to the lower class.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits, std::size_t n = 0) {
  if (logits.rank() != 5 || n >= logits.extent(0)) {
    throw UsageError("argmax_labels: bad logits shape " + shape_string(logits.shape()));
  }
  const std::size_t k = logits.extent(1);
  if (k > 256) throw UsageError("argmax_labels: more than 256 classes");
  LabelMap out;
  out.extents = {logits.extent(2), logits.extent(3), logits.extent(4)};
  const std::size_t v = out.numel();
  out.labels.assign(v, 0);
  const auto z = logits.data();
  const std::size_t base = n * k * v;
  for (std::size_t i = 0; i < v; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (z[base + c * v + i] > z[base + best * v + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace mednext
