// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Architecture hyperparameters: per-stage block counts and expansion ratios,
// kernel size, base width and I/O channel counts.
//
// Stages are numbered 1..9: encoder 1-4, bottleneck 5, decoder 6-9. Stage i
// runs at downsampling depth min(i, 10 - i) - 1 with C * 2^depth channels.

#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mednext/errors.hpp"

namespace mednext {

inline constexpr std::size_t kNumStages = 9;
inline constexpr std::size_t kNumLevels = 4;  // resampling steps between full and bottleneck resolution

using StageArray = std::array<std::size_t, kNumStages>;

struct ModelConfig {
  StageArray blocks{2, 2, 2, 2, 2, 2, 2, 2, 2};
  StageArray expansion{2, 2, 2, 2, 2, 2, 2, 2, 2};
  std::size_t kernel = 3;
  std::size_t base_channels = 32;
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  bool deep_supervision = true;
  std::string preset;  // informational: "S", "B", "M", "L" or empty for custom

  // 1-based stage index -> downsampling depth 0..4.
  static std::size_t stage_depth(std::size_t stage) {
    return stage <= 5 ? stage - 1 : kNumStages - stage;
  }
  std::size_t stage_channels(std::size_t stage) const {
    return base_channels << stage_depth(stage);
  }
  std::size_t stage_blocks(std::size_t stage) const { return blocks.at(stage - 1); }
  std::size_t stage_expansion(std::size_t stage) const { return expansion.at(stage - 1); }

  void validate() const {
    if (kernel % 2 == 0 || kernel < 1) {
      throw ConfigurationError("kernel size must be odd, got " + std::to_string(kernel));
    }
    if (base_channels == 0) throw ConfigurationError("base channel count must be positive");
    if (in_channels == 0) throw ConfigurationError("input channel count must be positive");
    if (num_classes < 2) throw ConfigurationError("need at least 2 classes");
    for (std::size_t i = 0; i < kNumStages; ++i) {
      if (blocks[i] == 0 || expansion[i] == 0) {
        throw ConfigurationError("stage " + std::to_string(i + 1) +
                                 ": block count and expansion ratio must be positive");
      }
    }
  }

  // Same architecture apart from the kernel size.
  bool same_except_kernel(const ModelConfig& o) const {
    return blocks == o.blocks && expansion == o.expansion && base_channels == o.base_channels &&
           in_channels == o.in_channels && num_classes == o.num_classes &&
           deep_supervision == o.deep_supervision;
  }

  bool operator==(const ModelConfig& o) const {
    return same_except_kernel(o) && kernel == o.kernel;
  }

  static ModelConfig from_preset(std::string_view name, std::size_t kernel = 3) {
    ModelConfig c;
    c.kernel = kernel;
    if (name == "S") {
      c.blocks = {2, 2, 2, 2, 2, 2, 2, 2, 2};
      c.expansion = {2, 2, 2, 2, 2, 2, 2, 2, 2};
    } else if (name == "B") {
      c.blocks = {2, 2, 2, 2, 2, 2, 2, 2, 2};
      c.expansion = {2, 3, 4, 4, 4, 4, 4, 3, 2};
    } else if (name == "M") {
      c.blocks = {3, 4, 4, 4, 4, 4, 4, 4, 3};
      c.expansion = {2, 3, 4, 4, 4, 4, 4, 3, 2};
    } else if (name == "L") {
      c.blocks = {3, 4, 8, 8, 8, 8, 8, 4, 3};
      c.expansion = {3, 4, 8, 8, 8, 8, 8, 4, 3};
    } else {
      throw ConfigurationError("unknown preset '" + std::string(name) + "' (expected S, B, M or L)");
    }
    c.preset = std::string(name);
    return c;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw ConfigurationError("config key '" + key + "': expected a non-negative integer, got '" +
                             value + "'");
  }
  return static_cast<std::size_t>(v);
}

inline StageArray parse_stage_list(const std::string& key, const std::string& value) {
  StageArray out{};
  std::stringstream ss(value);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == kNumStages) break;
    out[i++] = parse_count(key, trim(item));
  }
  if (i != kNumStages || std::getline(ss, item, ',')) {
    throw ConfigurationError("config key '" + key + "': expected 9 comma-separated values");
  }
  return out;
}

inline std::string format_stage_list(const StageArray& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

}  // namespace detail

// Parses a UTF-8 key=value block. Blank lines and lines starting with '#'
// are ignored. `preset` is applied first regardless of its position, then
// every other key overrides it.
inline ModelConfig parse_config(std::string_view text) {
  std::optional<std::string> preset;
  std::vector<std::pair<std::string, std::string>> entries;
  std::stringstream ss{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigurationError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  ModelConfig c = preset ? ModelConfig::from_preset(*preset) : ModelConfig{};
  for (const auto& [key, value] : entries) {
    if (key == "kernel") {
      c.kernel = detail::parse_count(key, value);
    } else if (key == "channels") {
      c.base_channels = detail::parse_count(key, value);
    } else if (key == "in_channels") {
      c.in_channels = detail::parse_count(key, value);
    } else if (key == "num_classes") {
      c.num_classes = detail::parse_count(key, value);
    } else if (key == "deep_supervision") {
      if (value == "true" || value == "1") {
        c.deep_supervision = true;
      } else if (value == "false" || value == "0") {
        c.deep_supervision = false;
      } else {
        throw ConfigurationError("config key 'deep_supervision': expected true or false");
      }
    } else if (key == "blocks") {
      c.blocks = detail::parse_stage_list(key, value);
    } else if (key == "expansion") {
      c.expansion = detail::parse_stage_list(key, value);
    } else {
      throw ConfigurationError("unknown config key '" + key + "'");
    }
  }
  if (!c.preset.empty()) {
    const ModelConfig p = ModelConfig::from_preset(c.preset);
    if (p.blocks != c.blocks || p.expansion != c.expansion) c.preset.clear();
  }
  c.validate();
  return c;
}

// Round-trips through parse_config. Stage lists are always written out.
inline std::string format_config(const ModelConfig& c) {
  std::ostringstream os;
  if (!c.preset.empty()) os << "preset=" << c.preset << '\n';
  os << "kernel=" << c.kernel << '\n'
     << "channels=" << c.base_channels << '\n'
     << "in_channels=" << c.in_channels << '\n'
     << "num_classes=" << c.num_classes << '\n'
     << "deep_supervision=" << (c.deep_supervision ? "true" : "false") << '\n'
     << "blocks=" << detail::format_stage_list(c.blocks) << '\n'
     << "expansion=" << detail::format_stage_list(c.expansion) << '\n';
  return os.str();
}

}  // namespace mednext
