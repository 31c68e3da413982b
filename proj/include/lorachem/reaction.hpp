// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lorachem/error.hpp"
#include "lorachem/smiles.hpp"

namespace lorachem {

/// Which components sit on each side of the single '>'.
enum class ReactionLayout {
  forward,   // reactants.reagents>product
  reagents,  // reactants.product>reagents
  retro,     // product>reactants
};

struct ParsedReaction {
  ReactionLayout layout = ReactionLayout::forward;
  std::vector<std::string> left;
  std::vector<std::string> right;
};

class ReactionError : public DataError {
 public:
  ReactionError(const std::string& what, std::optional<std::size_t> fragment = std::nullopt)
      : DataError(what), fragment_(fragment) {}
  /// Index of the offending fragment, counting left side then right side.
  std::optional<std::size_t> fragment() const noexcept { return fragment_; }

 private:
  std::optional<std::size_t> fragment_;
};

inline std::vector<std::string> split_fragments(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto dot = s.find('.', start);
    out.emplace_back(s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

inline ParsedReaction validate_reaction_string(std::string_view s, ReactionLayout layout) {
  const auto gt = s.find('>');
  if (gt == std::string_view::npos) throw ReactionError("reaction has no '>'");
  if (s.find('>', gt + 1) != std::string_view::npos) throw ReactionError("reaction has multiple '>'");
  ParsedReaction r;
  r.layout = layout;
  r.left = split_fragments(s.substr(0, gt));
  r.right = split_fragments(s.substr(gt + 1));
  std::size_t index = 0;
  for (const auto* side : {&r.left, &r.right}) {
    for (const auto& frag : *side) {
      try {
        (void)parse_smiles(frag);
      } catch (const SmilesError& e) {
        throw ReactionError("fragment " + std::to_string(index) + " unparseable: " + e.what(), index);
      }
      ++index;
    }
  }
  return r;
}

}  // namespace lorachem
