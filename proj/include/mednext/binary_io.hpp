// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitives shared by the checkpoint and volume formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "mednext/errors.hpp"

namespace mednext {

enum class FormatErrorKind {
  BadMagic,
  UnsupportedVersion,
  Truncated,
  DuplicateName,
  UnsortedNames,
  BadDType,
  ShapeMismatch,
  MissingTensor,
  UnexpectedTensor,
  BadMetadata,
  TrailingData,
};

inline const char* format_error_kind_name(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::BadMagic: return "bad-magic";
    case FormatErrorKind::UnsupportedVersion: return "unsupported-version";
    case FormatErrorKind::Truncated: return "truncated";
    case FormatErrorKind::DuplicateName: return "duplicate-name";
    case FormatErrorKind::UnsortedNames: return "unsorted-names";
    case FormatErrorKind::BadDType: return "bad-dtype";
    case FormatErrorKind::ShapeMismatch: return "shape-mismatch";
    case FormatErrorKind::MissingTensor: return "missing-tensor";
    case FormatErrorKind::UnexpectedTensor: return "unexpected-tensor";
    case FormatErrorKind::BadMetadata: return "bad-metadata";
    case FormatErrorKind::TrailingData: return "trailing-data";
  }
  return "unknown";
}

// Malformed or mismatching file contents.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(std::string(format_error_kind_name(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }
  const char* category() const noexcept override { return "format"; }

 private:
  FormatErrorKind kind_;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(std::span<const char> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { little(v, 2); }
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void little(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const char> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::span<const char> bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(little(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(little(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(FormatErrorKind::Truncated,
                        what_ + " ends after " + std::to_string(data_.size()) + " bytes");
    }
  }

 private:
  std::uint64_t little(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temporary file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at '" + path.string() + "'");
  }
}

}  // namespace detail
}  // namespace mednext
