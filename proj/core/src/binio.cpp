// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "shiftmatch/binio.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <string>

#include "shiftmatch/error.hpp"

namespace shiftmatch::binio {

void Writer::magic(std::string_view tag) {
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::bytes(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

Reader::Reader(std::span<const std::uint8_t> data, std::string_view context)
    : data_(data), context_(context) {}

void Reader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw FormatError(context_ + ": truncated input at byte " + std::to_string(pos_));
  }
}

void Reader::expect_magic(std::string_view tag) {
  need(tag.size());
  for (std::size_t i = 0; i < tag.size(); ++i) {
    if (data_[pos_ + i] != static_cast<std::uint8_t>(tag[i])) {
      throw FormatError(context_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }
  }
  pos_ += tag.size();
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
  pos_ += 8;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> Reader::bytes(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::uint64_t fnv1a(std::span<const std::uint8_t> data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text) {
  return fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace shiftmatch::binio
