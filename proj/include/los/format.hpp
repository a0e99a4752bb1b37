#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file format.hpp
 * @brief The LOS record container (little-endian, version 1).
 *
 * Layout:
 *
 *   header   "LOS1" | u16 version | u32 record_count            (10 bytes)
 *   record   u32 N | u32 K | u8 flags | u8 label
 *            f32 topk[N*K] (row-major) | f32 atp[N]
 *            u32 ranks[N]               if flags & 0x04
 *            f32 mu[N] | f32 sigma[N]   if flags & 0x02
 *            u32 meta_len | meta_len bytes of UTF-8 "key=value\n" lines
 *
 * flags: bit0 label present, bit1 mu/sigma present, bit2 ranks present.
 * The label byte is 0 when absent. Meta lines are written in key order; the
 * record's group_id travels as the reserved key "group_id".
 *
 * Readers reject: short input (truncated), wrong magic (bad_magic), any
 * version other than 1 (version_mismatch), and payloads inconsistent with the
 * declared lengths, such as trailing bytes or malformed meta (length_mismatch).
 */

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "los/core.hpp"
#include "los/error.hpp"

namespace los {

inline constexpr char kLosMagic[4] = {'L', 'O', 'S', '1'};
inline constexpr std::uint16_t kLosVersion = 1;
inline constexpr std::size_t kLosHeaderSize = 10;

namespace flags {
inline constexpr std::uint8_t label = 0x01;
inline constexpr std::uint8_t stats = 0x02;
inline constexpr std::uint8_t ranks = 0x04;
}  // namespace flags

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw FormatError(FormatErrc::truncated, std::string("unexpected end of data reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int s = 0; s < 16; s += 8) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(in_[pos_++]) << s);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_++])) << s;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto v = in_.substr(pos_, n);
    pos_ += n;
    return v;
  }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw DomainError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

inline std::string encode_meta(const LOSRecord& r) {
  std::map<std::string, std::string> meta = r.meta;
  if (meta.count(kMetaGroupId)) throw DomainError("meta key 'group_id' is reserved for the group_id field");
  if (r.group_id) meta[kMetaGroupId] = *r.group_id;
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos)
      throw DomainError("meta key '" + k + "' is empty or contains '=' or newline");
    if (v.find('\n') != std::string::npos) throw DomainError("meta value for '" + k + "' contains a newline");
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

inline void decode_meta(std::string_view text, LOSRecord& r) {
  while (!text.empty()) {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) throw FormatError(FormatErrc::length_mismatch, "meta block not newline-terminated");
    const auto line = text.substr(0, nl);
    text.remove_prefix(nl + 1);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw FormatError(FormatErrc::length_mismatch, "malformed meta line");
    std::string key(line.substr(0, eq)), value(line.substr(eq + 1));
    if (key == kMetaGroupId)
      r.group_id = std::move(value);
    else
      r.meta[std::move(key)] = std::move(value);
  }
}

}  // namespace detail

inline std::string encode_records(std::span<const LOSRecord> records) {
  detail::ByteWriter w;
  w.bytes(kLosMagic, 4);
  w.u16(kLosVersion);
  w.u32(detail::checked_u32(records.size(), "record count"));
  for (const auto& r : records) {
    const std::size_t n = r.seq_len(), k = r.k();
    if (static_cast<std::size_t>(r.topk.rows()) != n) throw DomainError("topk rows do not match atp length");
    if (r.ranks && r.ranks->size() != n) throw DomainError("ranks length mismatch");
    if (r.mu.has_value() != r.sigma.has_value()) throw DomainError("mu and sigma must be present together");
    if (r.mu && (r.mu->size() != n || r.sigma->size() != n)) throw DomainError("mu/sigma length mismatch");

    std::uint8_t fl = 0;
    if (r.label) fl |= flags::label;
    if (r.has_stats()) fl |= flags::stats;
    if (r.ranks) fl |= flags::ranks;
    w.u32(detail::checked_u32(n, "N"));
    w.u32(detail::checked_u32(k, "K"));
    w.u8(fl);
    w.u8(r.label.value_or(0));
    for (std::size_t i = 0; i < n * k; ++i) w.f32(r.topk.data()[i]);
    for (float x : r.atp) w.f32(x);
    if (r.ranks)
      for (auto x : *r.ranks) w.u32(x);
    if (r.has_stats()) {
      for (float x : *r.mu) w.f32(x);
      for (float x : *r.sigma) w.f32(x);
    }
    const std::string meta = detail::encode_meta(r);
    w.u32(detail::checked_u32(meta.size(), "meta length"));
    w.bytes(meta.data(), meta.size());
  }
  return w.take();
}

inline std::vector<LOSRecord> decode_records(std::string_view data) {
  detail::ByteReader rd(data);
  if (rd.remaining() < kLosHeaderSize) throw FormatError(FormatErrc::truncated, "file shorter than header");
  if (std::memcmp(rd.bytes(4, "magic").data(), kLosMagic, 4) != 0)
    throw FormatError(FormatErrc::bad_magic, "not a LOS file");
  const auto version = rd.u16("version");
  if (version != kLosVersion)
    throw FormatError(FormatErrc::version_mismatch,
                      "version " + std::to_string(version) + ", expected " + std::to_string(kLosVersion));
  const auto count = rd.u32("record count");

  std::vector<LOSRecord> out;
  out.reserve(std::min<std::size_t>(count, rd.remaining() / 10 + 1));
  for (std::uint32_t c = 0; c < count; ++c) {
    LOSRecord r;
    const std::size_t n = rd.u32("N"), k = rd.u32("K");
    const std::uint8_t fl = rd.u8("flags");
    const std::uint8_t label = rd.u8("label");
    if (fl & ~(flags::label | flags::stats | flags::ranks))
      throw FormatError(FormatErrc::length_mismatch, "unknown flag bits in record " + std::to_string(c));
    const std::size_t per_token = 4 * (k + 1 + ((fl & flags::ranks) ? 1 : 0) + ((fl & flags::stats) ? 2 : 0));
    if (n != 0 && per_token > rd.remaining() / n)
      throw FormatError(FormatErrc::truncated, "record " + std::to_string(c) + " payload exceeds file");

    r.topk.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n * k; ++i) r.topk.data()[i] = rd.f32("topk");
    r.atp.resize(n);
    for (auto& x : r.atp) x = rd.f32("atp");
    if (fl & flags::ranks) {
      r.ranks.emplace(n);
      for (auto& x : *r.ranks) x = rd.u32("ranks");
    }
    if (fl & flags::stats) {
      r.mu.emplace(n);
      r.sigma.emplace(n);
      for (auto& x : *r.mu) x = rd.f32("mu");
      for (auto& x : *r.sigma) x = rd.f32("sigma");
    }
    if (fl & flags::label) {
      r.label = label;
    } else if (label != 0) {
      throw FormatError(FormatErrc::length_mismatch, "label byte set without label flag");
    }
    const auto meta_len = rd.u32("meta length");
    detail::decode_meta(rd.bytes(meta_len, "meta"), r);
    out.push_back(std::move(r));
  }
  if (rd.remaining() != 0)
    throw FormatError(FormatErrc::length_mismatch,
                      std::to_string(rd.remaining()) + " trailing bytes after declared records");
  return out;
}

inline void write_records(std::span<const LOSRecord> records, const std::filesystem::path& path) {
  const std::string bytes = encode_records(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatErrc::io, "write failed for " + path.string());
}

inline std::vector<LOSRecord> read_records(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_records(bytes);
}

}  // namespace los
