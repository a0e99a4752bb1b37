#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file checkpoint.hpp
 * @brief Self-describing model checkpoints.
 *
 *   "LOSC" | u16 version | u32 len | config text (key=value lines)
 *          | u32 len | architecture text (key=value lines)
 *          | u32 tensor_count
 *          | per tensor: u32 name_len | name | u32 rows | u32 cols | f32[rows*cols] (row-major)
 *
 * All integers little-endian. Reading checks every tensor against the shape
 * the architecture implies, so a checkpoint that loads is usable as is.
 */

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "los/format.hpp"
#include "los/losnet/config.hpp"
#include "los/losnet/params.hpp"

namespace los::net {

inline constexpr char kCkptMagic[4] = {'L', 'O', 'S', 'C'};
inline constexpr std::uint16_t kCkptVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelParams<float> params;
};

inline std::string to_arch_text(const Architecture& a) {
  std::ostringstream os;
  os << "kind=" << to_string(a.kind) << '\n'
     << "rank_mode=" << to_string(a.rank_mode) << '\n'
     << "k=" << a.k << '\n'
     << "emb_size=" << a.emb_size << '\n'
     << "rank_dim=" << a.rank_dim << '\n'
     << "heads=" << a.heads << '\n'
     << "layers=" << a.layers << '\n'
     << "ff_dim=" << a.ff_dim << '\n'
     << "n_max=" << a.n_max << '\n'
     << "rank_max=" << a.rank_max << '\n';
  return os.str();
}

inline Architecture parse_arch_text(const std::string& text) {
  Architecture a;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(FormatErrc::length_mismatch, "malformed architecture line");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "kind") a.kind = parse_model_kind(val);
      else if (key == "rank_mode") a.rank_mode = parse_rank_mode(val);
      else if (key == "k") a.k = std::stoul(val);
      else if (key == "emb_size") a.emb_size = std::stoul(val);
      else if (key == "rank_dim") a.rank_dim = std::stoul(val);
      else if (key == "heads") a.heads = std::stoul(val);
      else if (key == "layers") a.layers = std::stoul(val);
      else if (key == "ff_dim") a.ff_dim = std::stoul(val);
      else if (key == "n_max") a.n_max = std::stoul(val);
      else if (key == "rank_max") a.rank_max = std::stoul(val);
      else throw FormatError(FormatErrc::length_mismatch, "unknown architecture key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError(FormatErrc::length_mismatch, "bad architecture value for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw FormatError(FormatErrc::length_mismatch, "bad architecture value for '" + key + "'");
    }
  }
  return a;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  los::detail::ByteWriter w;
  w.bytes(kCkptMagic, 4);
  w.u16(kCkptVersion);
  const std::string cfg = to_config_text(ck.config), arch = to_arch_text(ck.params.arch);
  w.u32(los::detail::checked_u32(cfg.size(), "config"));
  w.bytes(cfg.data(), cfg.size());
  w.u32(los::detail::checked_u32(arch.size(), "architecture"));
  w.bytes(arch.data(), arch.size());
  const auto ts = ck.params.tensors();
  w.u32(los::detail::checked_u32(ts.size(), "tensor count"));
  for (const auto& t : ts) {
    w.u32(los::detail::checked_u32(t.name.size(), "name"));
    w.bytes(t.name.data(), t.name.size());
    const auto& m = *t.tensor;
    w.u32(los::detail::checked_u32(static_cast<std::size_t>(m.rows()), "rows"));
    w.u32(los::detail::checked_u32(static_cast<std::size_t>(m.cols()), "cols"));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  los::detail::ByteReader rd(data);
  if (rd.remaining() < 6) throw FormatError(FormatErrc::truncated, "checkpoint shorter than header");
  if (std::memcmp(rd.bytes(4, "magic").data(), kCkptMagic, 4) != 0)
    throw FormatError(FormatErrc::bad_magic, "not a LOS checkpoint");
  const auto version = rd.u16("version");
  if (version != kCkptVersion)
    throw FormatError(FormatErrc::version_mismatch,
                      "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCkptVersion));
  Checkpoint ck;
  const std::string cfg(rd.bytes(rd.u32("config length"), "config"));
  try {
    ck.config = parse_train_config(cfg);
  } catch (const DomainError& e) {
    throw FormatError(FormatErrc::length_mismatch, std::string("checkpoint config: ") + e.what());
  }
  const std::string arch(rd.bytes(rd.u32("architecture length"), "architecture"));
  Architecture a = parse_arch_text(arch);
  try {
    ck.params = ModelParams<float>::zeros(a);
  } catch (const DomainError& e) {
    throw FormatError(FormatErrc::length_mismatch, std::string("checkpoint architecture: ") + e.what());
  }
  auto ts = ck.params.tensors();
  const auto count = rd.u32("tensor count");
  if (count != ts.size())
    throw FormatError(FormatErrc::length_mismatch, "checkpoint has " + std::to_string(count) + " tensors, expected " +
                                                       std::to_string(ts.size()));
  for (auto& t : ts) {
    const std::string name(rd.bytes(rd.u32("name length"), "name"));
    if (name != t.name) throw FormatError(FormatErrc::length_mismatch, "expected tensor '" + t.name + "', found '" + name + "'");
    const auto rows = rd.u32("rows"), cols = rd.u32("cols");
    auto& m = *t.tensor;
    if (rows != m.rows() || cols != m.cols())
      throw FormatError(FormatErrc::length_mismatch, "tensor '" + name + "' has the wrong shape");
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rd.f32("tensor data");
  }
  if (rd.remaining() != 0) throw FormatError(FormatErrc::length_mismatch, "trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatErrc::io, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrc::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace los::net
