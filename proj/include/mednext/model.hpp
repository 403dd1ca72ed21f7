// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// The 9-stage encoder/decoder:
//
//   stem (1x1x1, in -> C)
//   stage 1..4: blocks, then a down block (skip saved before downsampling)
//   stage 5:    bottleneck blocks at 1/16 resolution
//   stage 6..9: up block + additive skip from stage 10 - i, blocks, 1x1x1 head
//
// Parameter names:
//   stem.{weight|bias}
//   stage{i}.block{j}.{dw|norm|exp|comp}.{weight|bias}      i in 1..9, j from 1
//   stage{i}.down.{dw|norm|exp|comp|res}.{weight|bias}      i in 1..4 (leaves stage i)
//   stage{i}.up.{dw|norm|exp|comp|res}.{weight|bias}        i in 6..9 (enters stage i)
//   stage{i}.head.{weight|bias}                              i in 6..9 (6..8 only with deep supervision)

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mednext/blocks.hpp"
#include "mednext/config.hpp"
#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr double kInitStd = 0.02;
inline constexpr std::size_t kSpatialDivisor = 16;

template <typename T>
struct ModelOutput {
  Tensor<T> main;
  // Auxiliary logits at 1/2, 1/4 and 1/8 resolution (empty without deep supervision).
  std::vector<Tensor<T>> deep_supervision;
};

// Deterministic truncated normal in [-2 std, 2 std]. Uses its own Box-Muller
// transform so values do not depend on the standard library's distributions.
class TruncatedNormal {
 public:
  explicit TruncatedNormal(std::uint64_t seed) : rng_(seed) {}

  double operator()(double stddev) {
    for (;;) {
      const double u1 = uniform(), u2 = uniform();
      const double z = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
      if (std::abs(z) <= 2.0) return z * stddev;
    }
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
};

template <typename T>
class MedNeXtModel {
 public:
  // Builds the parameter structure with zero weights, zero biases and unit
  // norm gamma. Use build_model() for a randomly initialized network.
  explicit MedNeXtModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t c = config_.base_channels, k = config_.kernel;
    stem_ = {Tensor<T>::zeros({c, config_.in_channels, 1, 1, 1}), Tensor<T>::zeros({c})};
    register_conv("stem", stem_);
    for (std::size_t s = 1; s <= kNumStages; ++s) {
      const std::size_t ch = config_.stage_channels(s);
      if (s >= 6) {
        up_[s - 6] = make_block_params<T>(BlockKind::Up, 2 * ch, config_.stage_expansion(s), k);
        register_block(stage_prefix(s) + ".up", up_[s - 6]);
      }
      for (std::size_t j = 0; j < config_.stage_blocks(s); ++j) {
        stages_[s - 1].push_back(
            make_block_params<T>(BlockKind::Standard, ch, config_.stage_expansion(s), k));
        register_block(stage_prefix(s) + ".block" + std::to_string(j + 1), stages_[s - 1].back());
      }
      if (s <= 4) {
        down_[s - 1] =
            make_block_params<T>(BlockKind::Down, ch, config_.stage_expansion(s + 1), k);
        register_block(stage_prefix(s) + ".down", down_[s - 1]);
      }
      if (s == 9 || (s >= 6 && config_.deep_supervision)) {
        heads_[s - 6] = ConvParams<T>{Tensor<T>::zeros({config_.num_classes, ch, 1, 1, 1}),
                                      Tensor<T>::zeros({config_.num_classes})};
        register_conv(stage_prefix(s) + ".head", *heads_[s - 6]);
      }
    }
  }

  MedNeXtModel(MedNeXtModel&&) noexcept = default;
  MedNeXtModel& operator=(MedNeXtModel&&) noexcept = default;
  // Copies would alias parameter storage; use clone().
  MedNeXtModel(const MedNeXtModel&) = delete;
  MedNeXtModel& operator=(const MedNeXtModel&) = delete;

  const ModelConfig& config() const { return config_; }

  // Truncated-normal weights, zero biases, unit gamma, zero beta. Parameters
  // are visited in name order, so the result depends only on the seed and the
  // set of names/shapes.
  void initialize(std::uint64_t seed) {
    TruncatedNormal sample(seed);
    for (auto& [name, t] : registry_) {
      auto data = t.data();
      if (name.ends_with(".bias")) {
        std::fill(data.begin(), data.end(), T{0});
      } else if (name.ends_with("norm.weight")) {
        std::fill(data.begin(), data.end(), T{1});
      } else {
        for (auto& v : data) v = static_cast<T>(sample(kInitStd));
      }
    }
  }

  // Lexicographically ordered by name.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    return {registry_.begin(), registry_.end()};
  }

  bool has_parameter(const std::string& name) const { return registry_.contains(name); }

  Tensor<T> parameter(const std::string& name) const {
    auto it = registry_.find(name);
    if (it == registry_.end()) throw UsageError("no parameter named '" + name + "'");
    return it->second;
  }

  MedNeXtModel clone() const {
    MedNeXtModel copy(config_);
    for (const auto& [name, t] : registry_) {
      auto dst = copy.registry_.at(name).data();
      std::copy(t.data().begin(), t.data().end(), dst.begin());
    }
    return copy;
  }

  void set_requires_grad(bool on) {
    for (auto& [name, t] : registry_) t.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [name, t] : registry_) t.zero_grad();
  }

  const ConvParams<T>& stem() const { return stem_; }
  const std::vector<BlockParams<T>>& stage_blocks(std::size_t stage) const {
    return stages_.at(stage - 1);
  }
  const BlockParams<T>& down_block(std::size_t stage) const { return down_.at(stage - 1); }
  const BlockParams<T>& up_block(std::size_t stage) const { return up_.at(stage - 6); }
  const std::optional<ConvParams<T>>& head(std::size_t stage) const { return heads_.at(stage - 6); }

  ModelOutput<T> forward(const Tensor<T>& x) const {
    check_input(x);
    const ConvSpec pointwise{};
    Tensor<T> h = conv3d(x, stem_.weight, stem_.bias, pointwise);
    std::array<Tensor<T>, kNumLevels> skips;
    for (std::size_t s = 1; s <= 4; ++s) {
      for (const auto& b : stages_[s - 1]) h = mednext_block_forward(h, b);
      skips[s - 1] = h;
      h = down_block_forward(h, down_[s - 1]);
    }
    for (const auto& b : stages_[4]) h = mednext_block_forward(h, b);

    ModelOutput<T> out;
    for (std::size_t s = 6; s <= kNumStages; ++s) {
      h = add(up_block_forward(h, up_[s - 6]), skips[kNumStages - s]);
      for (const auto& b : stages_[s - 1]) h = mednext_block_forward(h, b);
      if (const auto& head = heads_[s - 6]) {
        Tensor<T> logits = conv3d(h, head->weight, head->bias, pointwise);
        if (s == kNumStages) {
          out.main = std::move(logits);
        } else {
          out.deep_supervision.insert(out.deep_supervision.begin(), std::move(logits));
        }
      }
    }
    return out;
  }

 private:
  static std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s); }

  void register_conv(const std::string& prefix, const ConvParams<T>& p) {
    add_entry(prefix + ".weight", p.weight);
    add_entry(prefix + ".bias", p.bias);
  }

  void register_block(const std::string& prefix, const BlockParams<T>& p) {
    p.for_each_parameter([&](const char* suffix, const Tensor<T>& t) {
      add_entry(prefix + "." + suffix, t);
    });
  }

  void add_entry(const std::string& name, const Tensor<T>& t) {
    if (!registry_.emplace(name, t).second) {
      throw ConfigurationError("duplicate parameter name '" + name + "'");
    }
  }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 5) {
      throw ConfigurationError("model input must be N x C x D x H x W, got " +
                               shape_string(x.shape()));
    }
    if (x.extent(1) != config_.in_channels) {
      throw ConfigurationError("model expects " + std::to_string(config_.in_channels) +
                               " input channels, got " + std::to_string(x.extent(1)));
    }
    static constexpr const char* kAxes[] = {"D", "H", "W"};
    for (std::size_t a = 0; a < 3; ++a) {
      if (x.extent(2 + a) % kSpatialDivisor != 0) {
        throw ConfigurationError("spatial axis " + std::string(kAxes[a]) + " has extent " +
                                 std::to_string(x.extent(2 + a)) + ", not divisible by " +
                                 std::to_string(kSpatialDivisor));
      }
    }
  }

  ModelConfig config_;
  ConvParams<T> stem_;
  std::array<std::vector<BlockParams<T>>, kNumStages> stages_;
  std::array<BlockParams<T>, kNumLevels> down_;
  std::array<BlockParams<T>, kNumLevels> up_;
  std::array<std::optional<ConvParams<T>>, kNumLevels> heads_;
  std::map<std::string, Tensor<T>> registry_;
};

template <typename T>
MedNeXtModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  MedNeXtModel<T> model(config);
  model.initialize(seed);
  return model;
}

}  // namespace mednext
