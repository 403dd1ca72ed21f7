// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"

using namespace mednext;
using namespace mednext::testing;

namespace {

constexpr double kGradTol = 1e-4;

double gelu_scalar(double x) { return 0.5 * x * std::erfc(-x / std::sqrt(2.0)); }

std::uint64_t block_param_count(const BlockParams<double>& p) {
  std::uint64_t n = 0;
  p.for_each_parameter([&](const char*, const Tensor<double>& t) { n += t.numel(); });
  return n;
}

// Per-channel norm, pointwise expansion, GELU and compression from the
// definitions, on an N x C x D x H x W tensor.
Tensor<double> naive_tail(const Tensor<double>& a, const BlockParams<double>& p) {
  const std::size_t n = a.extent(0), c = a.extent(1);
  const std::size_t v = a.extent(2) * a.extent(3) * a.extent(4);
  Tensor<double> normed(a.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = a.raw() + (b * c + ch) * v;
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < v; ++i) mean += src[i];
      mean /= v;
      for (std::size_t i = 0; i < v; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= v;
      for (std::size_t i = 0; i < v; ++i) {
        normed.raw()[(b * c + ch) * v + i] =
            (src[i] - mean) / std::sqrt(var + kGroupNormEps) * p.norm.weight.data()[ch] +
            p.norm.bias.data()[ch];
      }
    }
  auto h = naive_conv3d(normed, p.exp.weight, &p.exp.bias, ConvSpec{});
  for (auto& x : h.data()) x = gelu_scalar(x);
  return naive_conv3d(h, p.comp.weight, &p.comp.bias, ConvSpec{});
}

// Zero insertion: out[2i] = x[i], zeros elsewhere.
Tensor<double> zero_insert(const Tensor<double>& x) {
  Tensor<double> out({x.extent(0), x.extent(1), 2 * x.extent(2), 2 * x.extent(3), 2 * x.extent(4)});
  for (std::size_t b = 0; b < x.extent(0); ++b)
    for (std::size_t c = 0; c < x.extent(1); ++c)
      for (std::size_t d = 0; d < x.extent(2); ++d)
        for (std::size_t h = 0; h < x.extent(3); ++h)
          for (std::size_t w = 0; w < x.extent(4); ++w)
            out.at(b, c, 2 * d, 2 * h, 2 * w) = x.at(b, c, d, h, w);
  return out;
}

// Swaps the two channel axes of a 1x1x1 kernel.
Tensor<double> transpose_pointwise(const Tensor<double>& w) {
  Tensor<double> t({w.extent(1), w.extent(0), 1, 1, 1});
  for (std::size_t i = 0; i < w.extent(0); ++i)
    for (std::size_t j = 0; j < w.extent(1); ++j) t.at(j, i, 0, 0, 0) = w.at(i, j, 0, 0, 0);
  return t;
}

TEST(Blocks, ParameterCountHandArithmetic) {
  auto p = make_block_params<double>(BlockKind::Standard, 2, 2, 3);
  EXPECT_EQ(block_param_count(p), 56u + 4u + 12u + 10u);
  EXPECT_EQ(p.hidden_channels(), 4u);
  EXPECT_FALSE(p.res.has_value());
}

TEST(Blocks, ChannelInvariants) {
  auto d = make_block_params<double>(BlockKind::Down, 3, 4, 5);
  EXPECT_EQ(d.out_channels, 6u);
  EXPECT_EQ(d.exp.weight.shape(), (Shape{12, 3, 1, 1, 1}));
  EXPECT_EQ(d.comp.weight.shape(), (Shape{6, 12, 1, 1, 1}));
  auto u = make_block_params<double>(BlockKind::Up, 4, 3, 3);
  EXPECT_EQ(u.out_channels, 2u);
  EXPECT_EQ(u.exp.weight.shape(), (Shape{12, 4, 1, 1, 1}));
  EXPECT_THROW(make_block_params<double>(BlockKind::Up, 1, 2, 3), ConfigurationError);
  EXPECT_THROW(make_block_params<double>(BlockKind::Up, 3, 2, 3), ConfigurationError);
  EXPECT_THROW(make_block_params<double>(BlockKind::Standard, 2, 2, 4), ConfigurationError);
}

TEST(Blocks, ZeroWeightsAreIdentity) {
  auto p = make_block_params<double>(BlockKind::Standard, 3, 2, 3);
  auto x = random_tensor({1, 3, 4, 4, 4}, 1);
  EXPECT_TRUE(bitwise_equal(mednext_block_forward(x, p), x));
  // Zeroing only the main branch's compression layer is enough.
  randomize_block(p, 2);
  for (auto& v : p.comp.weight.data()) v = 0;
  for (auto& v : p.comp.bias.data()) v = 0;
  EXPECT_TRUE(bitwise_equal(mednext_block_forward(x, p), x));
}

TEST(Blocks, HandComposedScalarOracle) {
  // C=1, R=2, k=1 on a two-valued volume.
  auto p = make_block_params<double>(BlockKind::Standard, 1, 2, 1);
  const double wd = 1.5, bd = -0.25, gamma = 0.8, beta = 0.1;
  const double we[2] = {0.7, -1.2}, be[2] = {0.05, 0.3}, wc[2] = {0.9, 0.4}, bc = -0.2;
  p.dw.weight.data()[0] = wd;
  p.dw.bias.data()[0] = bd;
  p.norm.weight.data()[0] = gamma;
  p.norm.bias.data()[0] = beta;
  for (int j = 0; j < 2; ++j) {
    p.exp.weight.data()[j] = we[j];
    p.exp.bias.data()[j] = be[j];
    p.comp.weight.data()[j] = wc[j];
  }
  p.comp.bias.data()[0] = bc;
  const double lo = -0.5, hi = 2.0;  // three voxels lo, five hi
  std::vector<double> xs{lo, hi, hi, lo, hi, hi, lo, hi};
  auto y = mednext_block_forward(Tensor<double>({1, 1, 2, 2, 2}, xs), p);

  const double mean_x = (3 * lo + 5 * hi) / 8;
  const double var_x = (3 * (lo - mean_x) * (lo - mean_x) + 5 * (hi - mean_x) * (hi - mean_x)) / 8;
  for (std::size_t i = 0; i < 8; ++i) {
    // dw is affine, so the normalized value depends only on x.
    const double nrm = wd * (xs[i] - mean_x) / std::sqrt(wd * wd * var_x + kGroupNormEps);
    const double u = gamma * nrm + beta;
    double expected = xs[i] + bc;
    for (int j = 0; j < 2; ++j) expected += wc[j] * gelu_scalar(we[j] * u + be[j]);
    EXPECT_NEAR(y.data()[i], expected, 1e-12) << i;
  }
}

TEST(Blocks, StandardMatchesLoopOracle) {
  auto p = make_block_params<double>(BlockKind::Standard, 2, 3, 3);
  randomize_block(p, 3);
  auto x = random_tensor({2, 2, 4, 4, 4}, 4);
  auto dw = naive_conv3d(x, p.dw.weight, &p.dw.bias, ConvSpec::centered(3, 1, 2));
  auto expected = add(x, naive_tail(dw, p));
  EXPECT_LT(max_abs_diff(mednext_block_forward(x, p), expected), 1e-12);
}

TEST(Blocks, DownShapeAndBranchIsolation) {
  auto p = make_block_params<double>(BlockKind::Down, 2, 2, 3);
  auto x = random_tensor({1, 2, 8, 8, 8}, 5);
  // Main branch zero; residual maps output channel o to input channel o % 2.
  for (std::size_t o = 0; o < 4; ++o) p.res->weight.at(o, o % 2, 0, 0, 0) = 1.0;
  auto y = down_block_forward(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 4, 4}));
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w)
          EXPECT_EQ(y.at(0, o, d, h, w), x.at(0, o % 2, 2 * d, 2 * h, 2 * w));
}

TEST(Blocks, DownMatchesLoopOracle) {
  for (std::size_t k : {3, 5}) {
    auto p = make_block_params<double>(BlockKind::Down, 2, 2, k);
    randomize_block(p, 6);
    auto x = random_tensor({1, 2, 4, 4, 4}, 7);
    auto dw = naive_conv3d(x, p.dw.weight, &p.dw.bias, ConvSpec::centered(k, 2, 2));
    auto res = naive_conv3d(x, p.res->weight, &p.res->bias, ConvSpec::centered(1, 2));
    EXPECT_LT(max_abs_diff(down_block_forward(x, p), add(naive_tail(dw, p), res)), 1e-12);
  }
}

TEST(Blocks, DownRejectsOddExtent) {
  auto p = make_block_params<double>(BlockKind::Down, 2, 2, 3);
  EXPECT_THROW(down_block_forward(random_tensor({1, 2, 4, 5, 4}, 8), p), ConfigurationError);
  EXPECT_THROW(down_block_forward(random_tensor({1, 3, 4, 4, 4}, 8), p), ConfigurationError);
}

TEST(Blocks, UpShapeAndZeroOutput) {
  auto p = make_block_params<double>(BlockKind::Up, 4, 2, 3);
  for (auto& v : p.norm.weight.data()) v = 0;
  auto y = up_block_forward(random_tensor({1, 4, 4, 4, 4}, 9), p);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 8, 8, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Blocks, UpKernelOneEqualsZeroInsertionThenPointwise) {
  auto p = make_block_params<double>(BlockKind::Up, 4, 2, 1);
  randomize_block(p, 10);
  auto x = random_tensor({1, 4, 2, 2, 2}, 11);
  auto up = zero_insert(x);
  // k=1 depthwise transposed conv: per-channel scale of the inserted grid plus bias.
  auto dw = up.clone();
  const std::size_t v = 64;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < v; ++i) {
      double& e = dw.raw()[c * v + i];
      e = e * p.dw.weight.data()[c] + p.dw.bias.data()[c];
    }
  auto res = naive_conv3d(up, transpose_pointwise(p.res->weight), &p.res->bias, ConvSpec{});
  EXPECT_LT(max_abs_diff(up_block_forward(x, p), add(naive_tail(dw, p), res)), 1e-12);
}

TEST(Blocks, ShapeContractAcrossKernels) {
  for (std::size_t k : {3, 5, 7}) {
    for (std::size_t c : {2, 4}) {
      for (std::size_t r : {1, 3}) {
        auto x = random_tensor<float>({1, c, 4, 6, 4}, 12);
        auto s = make_block_params<float>(BlockKind::Standard, c, r, k);
        auto d = make_block_params<float>(BlockKind::Down, c, r, k);
        auto u = make_block_params<float>(BlockKind::Up, 2 * c, r, k);
        EXPECT_EQ(mednext_block_forward(x, s).shape(), x.shape());
        auto down = down_block_forward(x, d);
        EXPECT_EQ(down.shape(), (Shape{1, 2 * c, 2, 3, 2}));
        EXPECT_EQ(up_block_forward(down, u).shape(), x.shape());
      }
    }
  }
}

TEST(Blocks, GradientsMatchFiniteDifferences) {
  for (BlockKind kind : {BlockKind::Standard, BlockKind::Down, BlockKind::Up}) {
    const std::size_t c = kind == BlockKind::Up ? 4 : 2;
    auto p = make_block_params<double>(kind, c, 2, 3);
    randomize_block(p, 13);
    const std::size_t ext = kind == BlockKind::Up ? 2 : 4;
    std::vector<Tensor<double>> inputs{random_tensor({1, c, ext, ext, ext}, 14)};
    p.for_each_parameter([&](const char*, const Tensor<double>& t) { inputs.push_back(t); });
    auto r = grad_check(inputs, [&](auto& in) { return probe(block_forward(in[0], p)); });
    EXPECT_LT(r.max_rel_error, kGradTol) << block_kind_name(kind) << ": " << r.worst;
  }
}

}  // namespace
