// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic segmentation cases: a cubic volume with one ellipsoid per
// foreground class, no two ellipsoids touching. Each class has its own
// intensity band; every voxel gets N(0, 0.1) noise on top.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr double kSyntheticNoiseStd = 0.1;
inline constexpr double kMinClassFraction = 0.01;
inline constexpr int kPlacementRetries = 256;

struct LabelMap {
  Extents3 extents{0, 0, 0};
  std::vector<std::uint8_t> labels;  // row-major D x H x W

  std::size_t numel() const { return extents[0] * extents[1] * extents[2]; }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const {
    return (d * extents[1] + h) * extents[2] + w;
  }
  std::uint8_t at(std::size_t d, std::size_t h, std::size_t w) const {
    return labels[index(d, h, w)];
  }
};

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  std::uint8_t label = 0;
  double intensity = 0;

  bool contains(std::size_t d, std::size_t h, std::size_t w) const {
    const double p[3] = {static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
    double s = 0;
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] - center[a]) / semi_axes[a];
      s += u * u;
    }
    return s <= 1.0;
  }
};

struct SegmentationCase {
  Extents3 extents{0, 0, 0};
  std::vector<float> volume;  // 1 x 1 x D x H x W intensities
  LabelMap labels;
  double spacing = 1.0;
  std::size_t num_classes = 2;
  std::vector<Ellipsoid> ellipsoids;

  template <typename T>
  Tensor<T> volume_tensor() const {
    return Tensor<T>({1, 1, extents[0], extents[1], extents[2]},
                     std::vector<T>(volume.begin(), volume.end()));
  }
};

// Marks every voxel whose center lies inside `e` (closed ellipsoid).
inline void rasterize(const Ellipsoid& e, LabelMap& map) {
  for (std::size_t d = 0; d < map.extents[0]; ++d)
    for (std::size_t h = 0; h < map.extents[1]; ++h)
      for (std::size_t w = 0; w < map.extents[2]; ++w)
        if (e.contains(d, h, w)) map.labels[map.index(d, h, w)] = e.label;
}

namespace detail {

class SyntheticRng {
 public:
  explicit SyntheticRng(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

// True if the two ellipsoids' voxel sets, each dilated by one voxel, meet.
inline bool ellipsoids_touch(const Ellipsoid& a, const Ellipsoid& b, const Extents3& ext) {
  Ellipsoid grown = a;
  for (auto& s : grown.semi_axes) s += 1.0;
  for (std::size_t d = 0; d < ext[0]; ++d)
    for (std::size_t h = 0; h < ext[1]; ++h)
      for (std::size_t w = 0; w < ext[2]; ++w)
        if (grown.contains(d, h, w) && b.contains(d, h, w)) return true;
  return false;
}

inline std::size_t count_inside(const Ellipsoid& e, const Extents3& ext) {
  std::size_t n = 0;
  for (std::size_t d = 0; d < ext[0]; ++d)
    for (std::size_t h = 0; h < ext[1]; ++h)
      for (std::size_t w = 0; w < ext[2]; ++w) n += e.contains(d, h, w);
  return n;
}

}  // namespace detail

// Class c (1-based) gets mean intensity c; background 0.
inline SegmentationCase generate_synthetic_case(std::uint64_t seed, std::size_t size,
                                                std::size_t num_classes) {
  if (size == 0 || size % 16 != 0) {
    throw ConfigurationError("synthetic case size must be a positive multiple of 16, got " +
                             std::to_string(size));
  }
  if (num_classes < 2 || num_classes > 255) {
    throw ConfigurationError("synthetic case needs 2..255 classes, got " +
                             std::to_string(num_classes));
  }
  detail::SyntheticRng rng(seed);
  SegmentationCase out;
  out.extents = {size, size, size};
  out.num_classes = num_classes;
  out.labels.extents = out.extents;
  out.labels.labels.assign(out.labels.numel(), 0);

  const double n = static_cast<double>(size);
  const std::size_t min_voxels =
      static_cast<std::size_t>(std::ceil(kMinClassFraction * static_cast<double>(out.labels.numel())));
  for (std::size_t c = 1; c < num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      Ellipsoid e;
      e.label = static_cast<std::uint8_t>(c);
      for (int a = 0; a < 3; ++a) {
        e.semi_axes[a] = rng.uniform(0.15 * n, 0.3 * n);
        e.center[a] = rng.uniform(e.semi_axes[a] + 1.0, n - 2.0 - e.semi_axes[a]);
      }
      e.intensity = static_cast<double>(c) + rng.uniform(-0.2, 0.2);
      bool clash = false;
      for (const auto& other : out.ellipsoids) {
        if (detail::ellipsoids_touch(e, other, out.extents)) {
          clash = true;
          break;
        }
      }
      if (clash || detail::count_inside(e, out.extents) < min_voxels) continue;
      out.ellipsoids.push_back(e);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place ellipsoid for class " + std::to_string(c) + " after " +
                            std::to_string(kPlacementRetries) + " attempts (size " +
                            std::to_string(size) + ", " + std::to_string(num_classes) + " classes)");
    }
  }
  for (const auto& e : out.ellipsoids) rasterize(e, out.labels);

  std::vector<double> band(num_classes, 0.0);
  for (const auto& e : out.ellipsoids) band[e.label] = e.intensity;
  out.volume.resize(out.labels.numel());
  for (std::size_t i = 0; i < out.volume.size(); ++i) {
    out.volume[i] =
        static_cast<float>(band[out.labels.labels[i]] + kSyntheticNoiseStd * rng.normal());
  }
  return out;
}

}  // namespace mednext
