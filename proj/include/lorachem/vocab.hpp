// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lorachem {

/// Byte vocabulary: PAD=0, EOS=1, UNK=2, byte b -> b + 3.
struct ByteVocab {
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kOffset = 3;
  static constexpr int kSize = 256 + kOffset;

  static constexpr int byte_id(unsigned char b) noexcept { return static_cast<int>(b) + kOffset; }
};

/// UTF-8 replacement character, emitted for reserved ids inside a sequence.
inline constexpr std::string_view kReplacementMarker = "\xEF\xBF\xBD";

/// Bytes of `text` shifted into id space, followed by EOS.
inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size() + 1);
  for (unsigned char c : text) ids.push_back(ByteVocab::byte_id(c));
  ids.push_back(ByteVocab::kEos);
  return ids;
}

struct Detokenized {
  std::string text;
  bool had_reserved = false;  // a PAD/UNK/out-of-range id was replaced
};

/// Decodes up to (not including) the first EOS.
inline Detokenized detokenize(const std::vector<int>& ids) {
  Detokenized out;
  for (int id : ids) {
    if (id == ByteVocab::kEos) break;
    if (id >= ByteVocab::kOffset && id < ByteVocab::kSize) {
      out.text.push_back(static_cast<char>(id - ByteVocab::kOffset));
    } else {
      out.text.append(kReplacementMarker);
      out.had_reserved = true;
    }
  }
  return out;
}

}  // namespace lorachem
