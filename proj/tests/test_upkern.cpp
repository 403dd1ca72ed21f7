// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/oracles.hpp"

using namespace mednext;
using namespace mednext::testing;

namespace {

ModelConfig narrow(const char* preset, std::size_t k, std::size_t c = 4) {
  auto cfg = ModelConfig::from_preset(preset, k);
  cfg.base_channels = c;
  return cfg;
}

// Aligned-corner linear interpolation of samples `v` at n evenly spaced points.
std::vector<double> interp_1d(const std::vector<double>& v, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = n == 1 ? 0.0 : static_cast<double>(i) * (v.size() - 1) / (n - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), v.size() - 2);
    const double t = pos - lo;
    out[i] = (1 - t) * v[lo] + t * v[lo + 1];
  }
  return out;
}

TEST(ResampleKernel, SameSizeIsBitwiseCopy) {
  auto w = random_tensor<float>({4, 1, 3, 3, 3}, 1);
  EXPECT_TRUE(bitwise_equal(resample_kernel(w, {3, 3, 3}), w));
}

TEST(ResampleKernel, ConstantStaysConstant) {
  auto w = Tensor<double>({2, 3, 3, 3, 3}, -0.37);
  auto r = resample_kernel(w, {5, 5, 5});
  EXPECT_EQ(r.shape(), (Shape{2, 3, 5, 5, 5}));
  for (double v : r.data()) EXPECT_DOUBLE_EQ(v, -0.37);
}

TEST(ResampleKernel, SeparableKernelMatchesOneDimensionalOracle) {
  const std::vector<double> fd{0.3, -1.0, 2.0}, fh{1.0, 0.5, -0.25}, fw{-2.0, 0.0, 1.5};
  Tensor<double> w({2, 1, 3, 3, 3});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t x = 0; x < 3; ++x) w.at(c, 0, d, h, x) = (c + 1.0) * fd[d] * fh[h] * fw[x];
  for (std::size_t n : {5, 7}) {
    auto r = resample_kernel(w, {n, n, n});
    const auto gd = interp_1d(fd, n), gh = interp_1d(fh, n), gw = interp_1d(fw, n);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t d = 0; d < n; ++d)
        for (std::size_t h = 0; h < n; ++h)
          for (std::size_t x = 0; x < n; ++x)
            EXPECT_NEAR(r.at(c, 0, d, h, x), (c + 1.0) * gd[d] * gh[h] * gw[x], 1e-14);
  }
}

TEST(ResampleKernel, RampFiveFromThree) {
  Tensor<double> w({1, 1, 3, 3, 3});
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t x = 0; x < 3; ++x) w.at(0, 0, d, h, x) = static_cast<double>(x);
  auto r = resample_kernel(w, {5, 5, 5});
  const double expected[] = {0, 0.5, 1, 1.5, 2};
  for (std::size_t x = 0; x < 5; ++x) EXPECT_DOUBLE_EQ(r.at(0, 0, 2, 4, x), expected[x]);
}

TEST(ResampleKernel, RejectsNonKernel) {
  EXPECT_THROW(resample_kernel(Tensor<float>({4}), {5, 5, 5}), UsageError);
  EXPECT_THROW(resample_kernel(Tensor<float>({1, 1, 3, 3, 3}), {4, 4, 4}), ConfigurationError);
}

TEST(UpKern, DegenerateTransferIsIdentity) {
  auto src = build_model<float>(narrow("S", 3), 1);
  auto target = build_model<float>(narrow("S", 3), 2);
  TransferReport report;
  auto out = upkern_transfer(make_checkpoint(src), target, &report);
  EXPECT_TRUE(report.resampled.empty());
  EXPECT_EQ(report.copied.size(), src.named_parameters().size());
  EXPECT_EQ(make_checkpoint(out), make_checkpoint(src));
}

TEST(UpKern, ReportPartitionsRegistryByShape) {
  auto src = build_model<float>(narrow("B", 3), 3);
  auto target = build_model<float>(narrow("B", 5), 4);
  TransferReport report;
  auto out = upkern_transfer(make_checkpoint(src), target, &report);
  std::set<std::string> want_resampled, want_copied;
  for (const auto& [name, t] : target.named_parameters()) {
    (src.parameter(name).shape() == t.shape() ? want_copied : want_resampled).insert(name);
  }
  EXPECT_EQ(std::set<std::string>(report.resampled.begin(), report.resampled.end()), want_resampled);
  EXPECT_EQ(std::set<std::string>(report.copied.begin(), report.copied.end()), want_copied);
  EXPECT_TRUE(report.failed.empty());
  for (const auto& name : want_resampled) EXPECT_TRUE(name.ends_with(".dw.weight")) << name;
  // Stage blocks plus one depthwise layer per resampling block.
  std::size_t dw = 8;
  for (std::size_t s = 1; s <= 9; ++s) dw += src.config().stage_blocks(s);
  EXPECT_EQ(want_resampled.size(), dw);

  for (const auto& [name, t] : out.named_parameters()) {
    const auto& before = src.parameter(name);
    if (want_copied.contains(name)) {
      EXPECT_TRUE(bitwise_equal(t, before)) << name;
    } else {
      EXPECT_EQ(t.extent(2), 5u);
      EXPECT_TRUE(bitwise_equal(t, resample_kernel(before, {5, 5, 5}))) << name;
    }
  }
}

TEST(UpKern, NormAndPointwiseCopiedVerbatim) {
  auto src = build_model<float>(narrow("S", 3), 5);
  // Non-default norm parameters so a copy is distinguishable from init.
  for (auto& [name, t] : src.named_parameters()) {
    if (name.find(".norm.") != std::string::npos) fill_random(t, std::hash<std::string>{}(name));
  }
  auto out = upkern_transfer(make_checkpoint(src), build_model<float>(narrow("S", 5), 6));
  for (const auto& [name, t] : out.named_parameters()) {
    if (name.find(".norm.") != std::string::npos || t.rank() != 5 || t.extent(2) == 1) {
      EXPECT_TRUE(bitwise_equal(t, src.parameter(name))) << name;
    }
  }
}

TEST(UpKern, Idempotent) {
  auto src = make_checkpoint(build_model<float>(narrow("S", 3), 7));
  auto target = build_model<float>(narrow("S", 5), 8);
  auto once = upkern_transfer(src, target);
  auto twice = upkern_transfer(src, once);
  EXPECT_EQ(make_checkpoint(once), make_checkpoint(twice));
  // Same-size transfer of the result changes nothing either.
  EXPECT_EQ(make_checkpoint(upkern_transfer(make_checkpoint(once), twice)), make_checkpoint(once));
}

TEST(UpKern, ConstantKernelsStayConstant) {
  auto src = build_model<double>(narrow("S", 3), 9);
  for (auto& [name, t] : src.named_parameters()) {
    if (name.ends_with(".dw.weight")) {
      for (auto& v : t.data()) v = 0.125;
    }
  }
  auto out = upkern_transfer(make_checkpoint(src), MedNeXtModel<double>(narrow("S", 5)));
  for (const auto& [name, t] : out.named_parameters()) {
    if (name.ends_with(".dw.weight")) {
      for (double v : t.data()) ASSERT_DOUBLE_EQ(v, 0.125) << name;
    }
  }
}

TEST(UpKern, TransferredModelsRunForAllPresets) {
  for (const char* preset : {"S", "B", "M", "L"}) {
    auto src = build_model<float>(narrow(preset, 3, 2), 10);
    auto out = upkern_transfer(make_checkpoint(src), MedNeXtModel<float>(narrow(preset, 5, 2)));
    NoGradGuard no_grad;
    auto y = out.forward(random_tensor<float>({1, 1, 16, 16, 16}, 11));
    for (float v : y.main.data()) ASSERT_TRUE(std::isfinite(v)) << preset;
  }
}

TEST(UpKern, IncompatibleSourcesAreRejected) {
  auto src = make_checkpoint(build_model<float>(narrow("S", 3), 12));
  EXPECT_THROW(upkern_transfer(src, MedNeXtModel<float>(narrow("B", 5))), CompatibilityError);
  EXPECT_THROW(upkern_transfer(src, MedNeXtModel<float>(narrow("S", 5, 8))), CompatibilityError);

  // Without metadata the name and shape checks still apply.
  auto bare = src;
  bare.metadata.clear();
  bare.entries.erase(bare.entries.begin() + 3);
  const std::string missing = src.entries[3].name;
  try {
    upkern_transfer(bare, MedNeXtModel<float>(narrow("S", 5)));
    FAIL() << "expected CompatibilityError";
  } catch (const CompatibilityError& e) {
    EXPECT_NE(std::string(e.what()).find(missing), std::string::npos) << e.what();
  }
  auto reshaped = src;
  reshaped.metadata.clear();
  for (auto& e : reshaped.entries) {
    if (e.name == "stem.bias") {
      e.shape = {2, 2};
      break;
    }
  }
  EXPECT_THROW(upkern_transfer(reshaped, MedNeXtModel<float>(narrow("S", 5))), CompatibilityError);
}

}  // namespace
