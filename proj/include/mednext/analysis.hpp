// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter and FLOP accounting.
//
// FLOP convention: a convolution costs flop_factor multiply-accumulates per
// (output element, input channel in group, kernel tap); a transposed
// convolution is charged the MAC count of the convolution it is the adjoint
// of. Bias additions fold into the MAC. GroupNorm and GELU are charged one
// operation per element they produce. kFlopFactor is the calibrated value
// (see calibrate_flop_factor).

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mednext/config.hpp"
#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/model.hpp"

namespace mednext {

inline constexpr double kFlopFactor = 1.0;
inline constexpr double kReferenceGflopsSmallK3 = 130.0;  // preset S, k=3, one 128^3 patch

template <typename T>
std::uint64_t count_parameters(const MedNeXtModel<T>& model) {
  std::uint64_t total = 0;
  for (const auto& [name, t] : model.named_parameters()) total += t.numel();
  return total;
}

// flop_factor * output voxels * (input channels per group) * kernel taps.
inline double conv_flops(double out_voxels, std::uint64_t in_channels_per_group,
                         std::uint64_t out_channels, std::uint64_t taps,
                         double flop_factor = kFlopFactor) {
  return flop_factor * out_voxels *
         static_cast<double>(in_channels_per_group * out_channels * taps);
}

struct FlopBreakdown {
  double convolution = 0;
  double normalization = 0;
  double activation = 0;

  double total() const { return convolution + normalization + activation; }
  FlopBreakdown& operator+=(const FlopBreakdown& o) {
    convolution += o.convolution;
    normalization += o.normalization;
    activation += o.activation;
    return *this;
  }
};

struct StageCost {
  std::string name;          // "stem", "stage1".."stage9"
  std::size_t blocks = 0;    // standard blocks in the stage
  std::size_t channels = 0;  // channel width of the stage
  std::uint64_t params = 0;
  FlopBreakdown flops;
};

namespace detail {

struct BlockCost {
  std::uint64_t params = 0;
  FlopBreakdown flops;
};

inline std::uint64_t conv_params(std::uint64_t cin_per_group, std::uint64_t cout,
                                 std::uint64_t taps) {
  return cout * cin_per_group * taps + cout;
}

// voxels_in: voxels entering the block; voxels_out: voxels it produces.
inline BlockCost block_cost(BlockKind kind, std::uint64_t c, std::uint64_t r, std::uint64_t k,
                            double voxels_in, double voxels_out, double flop_factor) {
  const std::uint64_t h = c * r;
  const std::uint64_t o = kind == BlockKind::Standard ? c : kind == BlockKind::Down ? 2 * c : c / 2;
  const std::uint64_t taps = k * k * k;
  BlockCost b;
  b.params = conv_params(1, c, taps) + 2 * c + conv_params(c, h, 1) + conv_params(h, o, 1);
  if (kind != BlockKind::Standard) b.params += conv_params(c, o, 1);

  // Depthwise conv: for an up block this is the transposed conv, charged
  // per input element; otherwise per output element.
  const double dw_positions = kind == BlockKind::Up ? voxels_in : voxels_out;
  b.flops.convolution = conv_flops(dw_positions, 1, c, taps, flop_factor) +
                        conv_flops(voxels_out, c, h, 1, flop_factor) +
                        conv_flops(voxels_out, h, o, 1, flop_factor);
  if (kind == BlockKind::Down) {
    b.flops.convolution += conv_flops(voxels_out, c, o, 1, flop_factor);
  } else if (kind == BlockKind::Up) {
    b.flops.convolution += conv_flops(voxels_in, c, o, 1, flop_factor);
  }
  b.flops.normalization = voxels_out * static_cast<double>(c);
  b.flops.activation = voxels_out * static_cast<double>(h);
  return b;
}

inline void check_flop_extents(const Extents3& extents) {
  static constexpr const char* kAxes[] = {"D", "H", "W"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (extents[a] == 0 || extents[a] % kSpatialDivisor != 0) {
      throw ConfigurationError("spatial axis " + std::string(kAxes[a]) + " has extent " +
                               std::to_string(extents[a]) + ", not divisible by " +
                               std::to_string(kSpatialDivisor));
    }
  }
}

}  // namespace detail

// Per-stage cost table. The stem gets its own row; down blocks are charged to
// the stage they leave, up blocks and heads to the stage they belong to.
inline std::vector<StageCost> stage_costs(const ModelConfig& config, const Extents3& extents,
                                          double flop_factor = kFlopFactor) {
  config.validate();
  detail::check_flop_extents(extents);
  auto voxels = [&](std::size_t depth) {
    return static_cast<double>(extents[0] >> depth) * static_cast<double>(extents[1] >> depth) *
           static_cast<double>(extents[2] >> depth);
  };
  const std::uint64_t k = config.kernel;
  std::vector<StageCost> rows;

  StageCost stem{"stem", 0, config.base_channels, 0, {}};
  stem.params = detail::conv_params(config.in_channels, config.base_channels, 1);
  stem.flops.convolution =
      conv_flops(voxels(0), config.in_channels, config.base_channels, 1, flop_factor);
  rows.push_back(stem);

  for (std::size_t s = 1; s <= kNumStages; ++s) {
    const std::size_t depth = ModelConfig::stage_depth(s);
    const std::uint64_t c = config.stage_channels(s);
    StageCost row{"stage" + std::to_string(s), config.stage_blocks(s), c, 0, {}};
    auto add = [&row](const detail::BlockCost& b) {
      row.params += b.params;
      row.flops += b.flops;
    };
    if (s >= 6) {
      add(detail::block_cost(BlockKind::Up, 2 * c, config.stage_expansion(s), k, voxels(depth + 1),
                             voxels(depth), flop_factor));
    }
    for (std::size_t j = 0; j < config.stage_blocks(s); ++j) {
      add(detail::block_cost(BlockKind::Standard, c, config.stage_expansion(s), k, voxels(depth),
                             voxels(depth), flop_factor));
    }
    if (s <= 4) {
      add(detail::block_cost(BlockKind::Down, c, config.stage_expansion(s + 1), k, voxels(depth),
                             voxels(depth + 1), flop_factor));
    }
    if (s == kNumStages || (s >= 6 && config.deep_supervision)) {
      row.params += detail::conv_params(c, config.num_classes, 1);
      row.flops.convolution += conv_flops(voxels(depth), c, config.num_classes, 1, flop_factor);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::uint64_t analytic_parameter_count(const ModelConfig& config) {
  std::uint64_t total = 0;
  for (const auto& r : stage_costs(config, {16, 16, 16})) total += r.params;
  return total;
}

inline FlopBreakdown flop_breakdown(const ModelConfig& config, const Extents3& extents,
                                    double flop_factor = kFlopFactor) {
  FlopBreakdown total;
  for (const auto& r : stage_costs(config, extents, flop_factor)) total += r.flops;
  return total;
}

inline double count_flops(const ModelConfig& config, const Extents3& extents,
                          double flop_factor = kFlopFactor) {
  return flop_breakdown(config, extents, flop_factor).total();
}

// Picks the factor in {1, 2} whose preset-S k=3 count at 128^3 lands closest
// to the reference 130 GFLOPs; throws if neither is within `tolerance`.
inline double calibrate_flop_factor(double tolerance = 0.15) {
  const ModelConfig s3 = ModelConfig::from_preset("S", 3);
  double best = 0, best_err = 1e300;
  for (double factor : {1.0, 2.0}) {
    const double g = count_flops(s3, {128, 128, 128}, factor) / 1e9;
    const double err = std::abs(g - kReferenceGflopsSmallK3) / kReferenceGflopsSmallK3;
    if (err < best_err) {
      best = factor;
      best_err = err;
    }
  }
  if (best_err > tolerance) {
    throw ConfigurationError("no FLOP convention reproduces the reference count");
  }
  return best;
}

inline std::string format_cost_table(const std::vector<StageCost>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "stage" << std::right << std::setw(8) << "blocks"
     << std::setw(10) << "channels" << std::setw(14) << "params" << std::setw(14) << "GFLOPs" << '\n';
  std::uint64_t params = 0;
  double flops = 0;
  os << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::left << std::setw(8) << r.name << std::right << std::setw(8) << r.blocks
       << std::setw(10) << r.channels << std::setw(14) << r.params << std::setw(14)
       << r.flops.total() / 1e9 << '\n';
    params += r.params;
    flops += r.flops.total();
  }
  os << std::left << std::setw(8) << "total" << std::right << std::setw(8) << "" << std::setw(10)
     << "" << std::setw(14) << params << std::setw(14) << flops / 1e9 << '\n';
  return os.str();
}

inline std::string format_cost_csv(const std::vector<StageCost>& rows) {
  std::ostringstream os;
  os << "stage,blocks,channels,params,flops\n";
  std::uint64_t params = 0;
  double flops = 0;
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.name << ',' << r.blocks << ',' << r.channels << ',' << r.params << ','
       << r.flops.total() << '\n';
    params += r.params;
    flops += r.flops.total();
  }
  os << "total,,," << params << ',' << flops << '\n';
  return os.str();
}

}  // namespace mednext
