// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor checkpoint archive.
//
// Layout (little-endian):
//   "MDNX"  u16 version
//   u32 metadata byte length, UTF-8 key=value config block
//   u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 dtype (0 = float32, 1 = float64),
//              u8 rank, rank x u64 extents, row-major payload
// Entry names are unique and sorted ascending by byte value.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mednext/binary_io.hpp"
#include "mednext/config.hpp"
#include "mednext/model.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr char kCheckpointMagic[4] = {'M', 'D', 'N', 'X'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> values;

  DType dtype() const { return values.index() == 0 ? DType::Float32 : DType::Float64; }
  std::size_t numel() const {
    return std::visit([](const auto& v) { return v.size(); }, values);
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    return std::visit(
        [&](const auto& v) {
          std::vector<T> out(v.begin(), v.end());
          return Tensor<T>(shape, std::move(out));
        },
        values);
  }

  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string metadata;  // format_config() text
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::string_view name) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), name,
                               [](const CheckpointEntry& e, std::string_view n) { return e.name < n; });
    return it != entries.end() && it->name == name ? &*it : nullptr;
  }

  std::uint64_t total_elements() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += e.numel();
    return n;
  }

  ModelConfig config() const {
    try {
      return parse_config(metadata);
    } catch (const ConfigurationError& e) {
      throw FormatError(FormatErrorKind::BadMetadata, e.what());
    }
  }

  bool operator==(const Checkpoint&) const = default;
};

template <typename T>
Checkpoint make_checkpoint(const MedNeXtModel<T>& model) {
  Checkpoint ck;
  ck.metadata = format_config(model.config());
  for (const auto& [name, t] : model.named_parameters()) {
    ck.entries.push_back({name, t.shape(), std::vector<T>(t.data().begin(), t.data().end())});
  }
  return ck;
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(ck.version);
  w.u32(static_cast<std::uint32_t>(ck.metadata.size()));
  w.bytes(ck.metadata);
  w.u32(static_cast<std::uint32_t>(ck.entries.size()));
  for (std::size_t i = 0; i < ck.entries.size(); ++i) {
    const auto& e = ck.entries[i];
    if (i > 0 && !(ck.entries[i - 1].name < e.name)) {
      throw FormatError(e.name == ck.entries[i - 1].name ? FormatErrorKind::DuplicateName
                                                         : FormatErrorKind::UnsortedNames,
                        "entry '" + e.name + "'");
    }
    if (shape_numel(e.shape) != e.numel()) {
      throw FormatError(FormatErrorKind::ShapeMismatch, "entry '" + e.name + "' payload size");
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype()));
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (auto x : e.shape) w.u64(x);
    if (const auto* f = std::get_if<std::vector<float>>(&e.values)) {
      for (float v : *f) w.f32(v);
    } else {
      for (double v : std::get<std::vector<double>>(e.values)) w.f64(v);
    }
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw FormatError(FormatErrorKind::BadMagic, "not a checkpoint (expected \"MDNX\")");
  }
  r.bytes(4);
  Checkpoint ck;
  ck.version = r.u16();
  if (ck.version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::UnsupportedVersion,
                      "checkpoint version " + std::to_string(ck.version));
  }
  const auto meta = r.bytes(r.u32());
  ck.metadata.assign(meta.begin(), meta.end());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name = r.bytes(r.u16());
    e.name.assign(name.begin(), name.end());
    if (!ck.entries.empty()) {
      const auto& prev = ck.entries.back().name;
      if (prev == e.name) throw FormatError(FormatErrorKind::DuplicateName, "entry '" + e.name + "'");
      if (!(prev < e.name)) throw FormatError(FormatErrorKind::UnsortedNames, "entry '" + e.name + "'");
    }
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) {
      throw FormatError(FormatErrorKind::BadDType,
                        "entry '" + e.name + "' has dtype code " + std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8();
    std::uint64_t n = 1;
    for (std::uint8_t a = 0; a < rank; ++a) {
      const std::uint64_t x = r.u64();
      if (x == 0) throw FormatError(FormatErrorKind::ShapeMismatch, "entry '" + e.name + "' has a zero extent");
      e.shape.push_back(static_cast<std::size_t>(x));
      if (n > r.remaining() / x) {
        throw FormatError(FormatErrorKind::Truncated, "entry '" + e.name + "' payload exceeds the file");
      }
      n *= x;
    }
    const std::size_t width = dtype == 0 ? 4 : 8;
    if (n > r.remaining() / width) {
      throw FormatError(FormatErrorKind::Truncated, "entry '" + e.name + "' payload exceeds the file");
    }
    if (dtype == 0) {
      std::vector<float> v(n);
      for (auto& x : v) x = r.f32();
      e.values = std::move(v);
    } else {
      std::vector<double> v(n);
      for (auto& x : v) x = r.f64();
      e.values = std::move(v);
    }
    ck.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorKind::TrailingData,
                      std::to_string(r.remaining()) + " bytes after the last entry");
  }
  return ck;
}

// Checks names and shapes against the parameter set `config` produces.
inline void validate_checkpoint(const Checkpoint& ck, const ModelConfig& config) {
  const MedNeXtModel<float> layout(config);
  const auto expected = layout.named_parameters();
  for (const auto& [name, t] : expected) {
    const CheckpointEntry* e = ck.find(name);
    if (!e) throw FormatError(FormatErrorKind::MissingTensor, "checkpoint lacks '" + name + "'");
    if (e->shape != t.shape()) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        "'" + name + "' is " + shape_string(e->shape) + ", expected " +
                            shape_string(t.shape()));
    }
  }
  if (ck.entries.size() != expected.size()) {
    for (const auto& e : ck.entries) {
      if (!layout.has_parameter(e.name)) {
        throw FormatError(FormatErrorKind::UnexpectedTensor, "unexpected entry '" + e.name + "'");
      }
    }
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  detail::write_file_atomic(path, bytes);
}

template <typename T>
void save_checkpoint(const MedNeXtModel<T>& model, const std::filesystem::path& path) {
  save_checkpoint(make_checkpoint(model), path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt) {
  const auto bytes = detail::read_file(path);
  Checkpoint ck = decode_checkpoint(bytes);
  if (expected) validate_checkpoint(ck, *expected);
  return ck;
}

// Copies every checkpoint tensor into `model`; names and shapes must match exactly.
template <typename T>
void load_parameters(const Checkpoint& ck, MedNeXtModel<T>& model) {
  validate_checkpoint(ck, model.config());
  for (auto& [name, t] : model.named_parameters()) {
    const CheckpointEntry* e = ck.find(name);
    std::visit(
        [&](const auto& v) {
          auto dst = t.data();
          std::transform(v.begin(), v.end(), dst.begin(), [](auto x) { return static_cast<T>(x); });
        },
        e->values);
  }
}

// Rebuilds the model described by the checkpoint metadata.
template <typename T>
MedNeXtModel<T> model_from_checkpoint(const Checkpoint& ck) {
  MedNeXtModel<T> model(ck.config());
  load_parameters(ck, model);
  return model;
}

}  // namespace mednext
