// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// ECFP-style circular fingerprints and Tanimoto similarity.
//
// Atom identifiers start from FNV-1a 64 over the invariant tuple
// (element, aromatic, charge, total H, heavy degree, isotope), encoded as
// little-endian 64-bit integers. Each round rehashes (round, own id,
// sorted (bond order, neighbour id) pairs). Every identifier from every
// round sets bit (id mod n_bits). The encoding is fixed so bitsets are
// identical on every platform.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lorachem/error.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/smiles.hpp"

namespace lorachem {

class Fingerprint {
 public:
  explicit Fingerprint(std::size_t n_bits = 2048) : n_bits_(n_bits), words_((n_bits + 63) / 64, 0) {
    if (n_bits == 0) throw ContractError("fingerprint width must be positive");
  }

  std::size_t size() const noexcept { return n_bits_; }
  void set(std::size_t i) { words_.at(i / 64) |= std::uint64_t{1} << (i % 64); }
  bool test(std::size_t i) const { return (words_.at(i / 64) >> (i % 64)) & 1U; }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  const std::vector<std::uint64_t>& words() const noexcept { return words_; }

  /// n_bits/4 hex digits; digit j holds bits 4j..4j+3 (bit 4j least significant).
  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve((n_bits_ + 3) / 4);
    for (std::size_t j = 0; j * 4 < n_bits_; ++j) {
      unsigned v = 0;
      for (std::size_t b = 0; b < 4 && j * 4 + b < n_bits_; ++b) v |= (test(j * 4 + b) ? 1U : 0U) << b;
      out.push_back(kDigits[v]);
    }
    return out;
  }

  bool operator==(const Fingerprint&) const = default;

 private:
  std::size_t n_bits_;
  std::vector<std::uint64_t> words_;
};

namespace detail {

class TupleHasher {
 public:
  TupleHasher& add(std::int64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    h_ = fnv1a64(std::string_view(b, 8), h_);
    return *this;
  }
  TupleHasher& add(std::string_view s) {
    add(static_cast<std::int64_t>(s.size()));
    h_ = fnv1a64(s, h_);
    return *this;
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

}  // namespace detail

inline Fingerprint fingerprint(const MolGraph& g, int radius = 2, std::size_t n_bits = 2048) {
  if (g.atoms.empty()) throw ContractError("fingerprint of an empty graph");
  if (radius < 0) throw ContractError("fingerprint radius must be >= 0");
  Fingerprint fp(n_bits);
  const auto adj = g.adjacency();
  std::vector<std::uint64_t> ids(g.atoms.size());
  for (std::size_t i = 0; i < g.atoms.size(); ++i) {
    const auto& a = g.atoms[i];
    ids[i] = detail::TupleHasher{}
                 .add(a.element)
                 .add(a.aromatic ? 1 : 0)
                 .add(a.charge)
                 .add(a.hydrogens)
                 .add(static_cast<std::int64_t>(adj[i].size()))
                 .add(a.isotope)
                 .value();
    fp.set(ids[i] % n_bits);
  }
  for (int round = 1; round <= radius; ++round) {
    std::vector<std::uint64_t> next(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<std::pair<int, std::uint64_t>> env;
      for (const auto& [nb, order] : adj[i]) {
        env.emplace_back(static_cast<int>(order), ids[static_cast<std::size_t>(nb)]);
      }
      std::sort(env.begin(), env.end());
      detail::TupleHasher h;
      h.add(round).add(static_cast<std::int64_t>(ids[i]));
      for (const auto& [o, id] : env) h.add(o).add(static_cast<std::int64_t>(id));
      next[i] = h.value();
      fp.set(next[i] % n_bits);
    }
    ids = std::move(next);
  }
  return fp;
}

/// |a & b| / |a | b|; 1.0 when both are empty.
inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.size() != b.size()) {
    throw ContractError("tanimoto: widths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  std::size_t both = 0, either = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    both += static_cast<std::size_t>(std::popcount(a.words()[w] & b.words()[w]));
    either += static_cast<std::size_t>(std::popcount(a.words()[w] | b.words()[w]));
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

/// Structural identity key: fingerprint hex plus atom and bond counts. Not a
/// canonical form; distinct molecules with colliding fingerprints and equal
/// counts share a key.
inline std::string molecule_key(const MolGraph& g) {
  return fingerprint(g).hex() + ":" + std::to_string(g.atoms.size()) + ":" +
         std::to_string(g.bonds.size());
}

inline std::string molecule_key(std::string_view smiles) { return molecule_key(parse_smiles(smiles)); }

}  // namespace lorachem
