// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Raw volume files for predict/eval:
//   "VOL1", u8 rank, rank x u32 extents, u8 dtype (0 float32, 1 float64, 2 uint8),
//   row-major little-endian payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "mednext/binary_io.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

inline constexpr char kVolumeMagic[4] = {'V', 'O', 'L', '1'};

struct Volume {
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>> values;

  std::uint8_t dtype_code() const { return static_cast<std::uint8_t>(values.index()); }
  bool is_label_map() const { return values.index() == 2; }
  std::size_t numel() const {
    return std::visit([](const auto& v) { return v.size(); }, values);
  }

  bool operator==(const Volume&) const = default;
};

inline std::vector<char> encode_volume(const Volume& vol) {
  if (shape_numel(vol.shape) != vol.numel()) {
    throw FormatError(FormatErrorKind::ShapeMismatch, "volume payload does not match its shape");
  }
  detail::ByteWriter w;
  w.bytes(kVolumeMagic);
  w.u8(static_cast<std::uint8_t>(vol.shape.size()));
  for (auto e : vol.shape) w.u32(static_cast<std::uint32_t>(e));
  w.u8(vol.dtype_code());
  std::visit(
      [&](const auto& v) {
        using V = typename std::decay_t<decltype(v)>::value_type;
        for (V x : v) {
          if constexpr (std::is_same_v<V, float>) {
            w.f32(x);
          } else if constexpr (std::is_same_v<V, double>) {
            w.f64(x);
          } else {
            w.u8(x);
          }
        }
      },
      vol.values);
  return w.buffer();
}

inline Volume decode_volume(std::span<const char> bytes) {
  if (bytes.size() < 4 || !std::equal(kVolumeMagic, kVolumeMagic + 4, bytes.begin())) {
    throw FormatError(FormatErrorKind::BadMagic, "not a volume file (expected \"VOL1\")");
  }
  detail::ByteReader r(bytes, "volume");
  r.bytes(4);
  Volume vol;
  const std::uint8_t rank = r.u8();
  std::uint64_t n = 1;
  for (std::uint8_t a = 0; a < rank; ++a) {
    const std::uint32_t e = r.u32();
    if (e == 0) throw FormatError(FormatErrorKind::ShapeMismatch, "volume has a zero extent");
    vol.shape.push_back(e);
    if (n > r.remaining() / e) throw FormatError(FormatErrorKind::Truncated, "volume payload exceeds the file");
    n *= e;
  }
  const std::uint8_t code = r.u8();
  const std::size_t width = code == 0 ? 4 : code == 1 ? 8 : 1;
  if (code > 2) throw FormatError(FormatErrorKind::BadDType, "volume dtype code " + std::to_string(code));
  if (n > r.remaining() / width) {
    throw FormatError(FormatErrorKind::Truncated, "volume payload exceeds the file");
  }
  if (code == 0) {
    std::vector<float> v(n);
    for (auto& x : v) x = r.f32();
    vol.values = std::move(v);
  } else if (code == 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    vol.values = std::move(v);
  } else {
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = r.u8();
    vol.values = std::move(v);
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorKind::TrailingData, std::to_string(r.remaining()) + " extra bytes");
  }
  return vol;
}

inline void write_volume(const Volume& vol, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_volume(vol));
}

inline Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_file(path));
}

}  // namespace mednext
