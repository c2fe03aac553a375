// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte encoding shared by the SMST, SMTS and SMWT formats.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace shiftmatch::binio {

class Writer {
 public:
  void magic(std::string_view tag);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> data);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; every underflow throws FormatError naming `context`.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string_view context);

  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::span<const std::uint8_t> bytes(std::size_t n);

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> data);
std::uint64_t fnv1a(std::string_view text);

}  // namespace shiftmatch::binio
