// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// MedNeXt blocks: depthwise conv -> GroupNorm -> 1x1x1 expansion -> GELU ->
// 1x1x1 compression, with an additive residual.
//
//   standard: C -> C, same resolution, identity residual
//   down:     C -> 2C, stride-2 depthwise conv, strided 1x1x1 residual projection
//   up:       C -> C/2, stride-2 transposed depthwise conv, transposed 1x1x1 residual
//
// The expansion width is always C_in * R; the channel change happens only in
// the compression layer.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "mednext/activation.hpp"
#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/norm.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

enum class BlockKind { Standard, Down, Up };

inline const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Standard:
      return "standard";
    case BlockKind::Down:
      return "down";
    case BlockKind::Up:
      return "up";
  }
  return "?";
}

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct BlockParams {
  BlockKind kind = BlockKind::Standard;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t expansion = 1;
  std::size_t kernel = 3;

  ConvParams<T> dw;    // C_in x 1 x k x k x k
  ConvParams<T> norm;  // gamma (weight) and beta (bias), length C_in
  ConvParams<T> exp;   // C_in*R x C_in x 1 x 1 x 1
  ConvParams<T> comp;  // C_out x C_in*R x 1 x 1 x 1
  // Down: C_out x C_in x 1x1x1. Up (transposed layout): C_in x C_out x 1x1x1.
  std::optional<ConvParams<T>> res;

  std::size_t hidden_channels() const { return in_channels * expansion; }

  // Visits every tensor with its block-relative name ("dw.weight", ...).
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    fn("dw.weight", dw.weight);
    fn("dw.bias", dw.bias);
    fn("norm.weight", norm.weight);
    fn("norm.bias", norm.bias);
    fn("exp.weight", exp.weight);
    fn("exp.bias", exp.bias);
    fn("comp.weight", comp.weight);
    fn("comp.bias", comp.bias);
    if (res) {
      fn("res.weight", res->weight);
      fn("res.bias", res->bias);
    }
  }
};

// Parameters with zero weights and biases, unit gamma.
template <typename T>
BlockParams<T> make_block_params(BlockKind kind, std::size_t in_channels, std::size_t expansion,
                                 std::size_t kernel) {
  if (kernel % 2 == 0) {
    throw ConfigurationError("block kernel size must be odd, got " + std::to_string(kernel));
  }
  if (in_channels == 0 || expansion == 0) {
    throw ConfigurationError("block channels and expansion ratio must be positive");
  }
  BlockParams<T> p;
  p.kind = kind;
  p.in_channels = in_channels;
  p.expansion = expansion;
  p.kernel = kernel;
  switch (kind) {
    case BlockKind::Standard:
      p.out_channels = in_channels;
      break;
    case BlockKind::Down:
      p.out_channels = 2 * in_channels;
      break;
    case BlockKind::Up:
      if (in_channels < 2 || in_channels % 2 != 0) {
        throw ConfigurationError("up block needs an even channel count >= 2, got " +
                                 std::to_string(in_channels));
      }
      p.out_channels = in_channels / 2;
      break;
  }
  const std::size_t c = in_channels, h = p.hidden_channels(), o = p.out_channels;
  p.dw = {Tensor<T>::zeros({c, 1, kernel, kernel, kernel}), Tensor<T>::zeros({c})};
  p.norm = {Tensor<T>::ones({c}), Tensor<T>::zeros({c})};
  p.exp = {Tensor<T>::zeros({h, c, 1, 1, 1}), Tensor<T>::zeros({h})};
  p.comp = {Tensor<T>::zeros({o, h, 1, 1, 1}), Tensor<T>::zeros({o})};
  if (kind == BlockKind::Down) {
    p.res = ConvParams<T>{Tensor<T>::zeros({o, c, 1, 1, 1}), Tensor<T>::zeros({o})};
  } else if (kind == BlockKind::Up) {
    p.res = ConvParams<T>{Tensor<T>::zeros({c, o, 1, 1, 1}), Tensor<T>::zeros({o})};
  }
  return p;
}

namespace detail {

template <typename T>
void check_block_input(const Tensor<T>& x, const BlockParams<T>& p, BlockKind expected) {
  if (p.kind != expected) {
    throw ConfigurationError(std::string("expected ") + block_kind_name(expected) +
                             " block parameters, got " + block_kind_name(p.kind));
  }
  if (x.rank() != 5 || x.extent(1) != p.in_channels) {
    throw ConfigurationError(std::string(block_kind_name(expected)) + " block expects " +
                             std::to_string(p.in_channels) + " input channels, got input " +
                             shape_string(x.shape()));
  }
}

// norm -> expand -> GELU -> compress
template <typename T>
Tensor<T> inverted_bottleneck_tail(const Tensor<T>& dw_out, const BlockParams<T>& p) {
  const ConvSpec pointwise{};
  Tensor<T> h = group_norm(dw_out, p.in_channels, p.norm.weight, p.norm.bias);
  h = conv3d(h, p.exp.weight, p.exp.bias, pointwise);
  h = gelu(h);
  return conv3d(h, p.comp.weight, p.comp.bias, pointwise);
}

}  // namespace detail

template <typename T>
Tensor<T> mednext_block_forward(const Tensor<T>& x, const BlockParams<T>& p) {
  detail::check_block_input(x, p, BlockKind::Standard);
  const ConvSpec dw_spec = ConvSpec::centered(p.kernel, 1, p.in_channels);
  Tensor<T> h = conv3d(x, p.dw.weight, p.dw.bias, dw_spec);
  return add(x, detail::inverted_bottleneck_tail(h, p));
}

template <typename T>
Tensor<T> down_block_forward(const Tensor<T>& x, const BlockParams<T>& p) {
  detail::check_block_input(x, p, BlockKind::Down);
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.extent(a) % 2 != 0) {
      throw ConfigurationError("down block needs even spatial extents, got " +
                               shape_string(x.shape()));
    }
  }
  const ConvSpec dw_spec = ConvSpec::centered(p.kernel, 2, p.in_channels);
  Tensor<T> h = conv3d(x, p.dw.weight, p.dw.bias, dw_spec);
  Tensor<T> main = detail::inverted_bottleneck_tail(h, p);
  Tensor<T> skip = conv3d(x, p.res->weight, p.res->bias, ConvSpec::centered(1, 2));
  return add(main, skip);
}

template <typename T>
Tensor<T> up_block_forward(const Tensor<T>& x, const BlockParams<T>& p) {
  detail::check_block_input(x, p, BlockKind::Up);
  const ConvSpec dw_spec = ConvSpec::centered(p.kernel, 2, p.in_channels);
  Tensor<T> h = conv3d_transposed(x, p.dw.weight, p.dw.bias, dw_spec, OutputAlignment::ExactMultiple);
  Tensor<T> main = detail::inverted_bottleneck_tail(h, p);
  Tensor<T> skip = conv3d_transposed(x, p.res->weight, p.res->bias, ConvSpec::centered(1, 2),
                                     OutputAlignment::ExactMultiple);
  return add(main, skip);
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& p) {
  switch (p.kind) {
    case BlockKind::Standard:
      return mednext_block_forward(x, p);
    case BlockKind::Down:
      return down_block_forward(x, p);
    case BlockKind::Up:
      return up_block_forward(x, p);
  }
  throw ConfigurationError("unknown block kind");
}

}  // namespace mednext
