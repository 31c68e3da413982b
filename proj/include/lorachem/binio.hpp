// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Framing shared by the adapter (LORB) and model checkpoint (BMDL) files:
//
//   4-byte magic | u32 LE version | u32 LE header length | UTF-8 JSON header
//   | payload of little-endian IEEE-754 float32 values
//
// All integers and floats are little-endian regardless of host order.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lorachem/error.hpp"

namespace lorachem::binio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF),
                                 static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_floats(std::ostream& os, std::span<const float> values) {
  for (float f : values) write_u32(os, std::bit_cast<std::uint32_t>(f));
}

inline void read_floats(std::istream& is, std::span<float> out) {
  for (auto& f : out) f = std::bit_cast<float>(read_u32(is));
}

inline void write_header(std::ostream& os, std::string_view magic, std::uint32_t version,
                         const nlohmann::json& header) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(os, version);
  const std::string text = header.dump();
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline nlohmann::json read_header(std::istream& is, std::string_view magic,
                                  std::uint32_t max_version) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"");
  }
  const auto version = read_u32(is);
  if (version == 0 || version > max_version) {
    throw FormatError("unsupported " + std::string(magic) + " version " + std::to_string(version));
  }
  const auto len = read_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw FormatError("truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what());
  }
}

inline void expect_eof(std::istream& is) {
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
}

}  // namespace lorachem::binio
