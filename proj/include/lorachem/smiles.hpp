// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// SMILES subset reader/writer.
//
// Supported: organic-subset atoms (B C N O P S F Cl Br I), aromatic
// lowercase (b c n o p s), bracket atoms [isotope symbol chirality Hn charge
// :class], bonds - = # : (and / \ read as single), branches, ring closures
// 1-9 and %nn, dot-separated fragments. Chirality and bond direction are
// accepted but not stored. Aromatic flags are taken as written.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lorachem/error.hpp"

namespace lorachem {

enum class BondOrder : std::uint8_t { single = 1, double_ = 2, triple = 3, aromatic = 4 };

struct Atom {
  std::string element;  // capitalised symbol, e.g. "C", "Cl", "Se"
  bool aromatic = false;
  int charge = 0;
  int hydrogens = 0;  // total attached H (explicit in brackets, else implicit)
  int isotope = 0;    // 0 = unspecified
  bool bracket = false;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::single;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  /// (neighbor, order) per atom, in bond insertion order.
  std::vector<std::vector<std::pair<int, BondOrder>>> adjacency() const {
    std::vector<std::vector<std::pair<int, BondOrder>>> adj(atoms.size());
    for (const auto& b : bonds) {
      adj[static_cast<std::size_t>(b.a)].emplace_back(b.b, b.order);
      adj[static_cast<std::size_t>(b.b)].emplace_back(b.a, b.order);
    }
    return adj;
  }
};

/// Parse failure with the 0-based character offset that triggered it.
class SmilesError : public DataError {
 public:
  SmilesError(const std::string& what, std::size_t position)
      : DataError(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

namespace detail {

inline constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

inline bool is_element(std::string_view s) {
  return std::find(kElements.begin(), kElements.end(), s) != kElements.end();
}

/// Default valences for the organic subset; empty for anything else.
inline std::vector<int> default_valences(std::string_view el) {
  if (el == "B") return {3};
  if (el == "C") return {4};
  if (el == "N" || el == "P") return {3, 5};
  if (el == "O") return {2};
  if (el == "S") return {2, 4, 6};
  if (el == "F" || el == "Cl" || el == "Br" || el == "I") return {1};
  return {};
}

inline bool organic_subset(std::string_view el) { return !default_valences(el).empty(); }

inline int bond_valence(BondOrder o) { return o == BondOrder::aromatic ? 1 : static_cast<int>(o); }

/// Implicit hydrogens for a non-bracket atom given the valence used by its bonds.
inline int implicit_hydrogens(const Atom& a, int used) {
  const auto vals = default_valences(a.element);
  if (vals.empty()) return 0;
  if (a.aromatic) return std::max(0, vals.front() - (used + 1));
  for (int v : vals) {
    if (v >= used) return v - used;
  }
  return 0;
}

class SmilesParser {
 public:
  explicit SmilesParser(std::string_view s) : s_(s) {}

  MolGraph parse() {
    if (s_.empty()) throw SmilesError("empty SMILES", 0);
    while (pos_ < s_.size()) step();
    if (pending_) throw SmilesError("dangling bond", pending_pos_);
    if (!branches_.empty()) throw SmilesError("unbalanced parenthesis", branches_.back().second);
    if (!rings_.empty()) {
      const auto& [num, open] = *rings_.begin();
      throw SmilesError("unclosed ring closure " + std::to_string(num), open.position);
    }
    if (prev_ < 0) throw SmilesError("empty fragment", s_.size());
    complete_hydrogens();
    return std::move(g_);
  }

 private:
  struct RingOpen {
    int atom;
    std::optional<BondOrder> order;
    std::size_t position;
  };

  void step() {
    const char c = s_[pos_];
    switch (c) {
      case '(':
        if (prev_ < 0) throw SmilesError("branch without a preceding atom", pos_);
        if (pending_) throw SmilesError("bond before branch", pos_);
        branches_.emplace_back(prev_, pos_);
        ++pos_;
        if (pos_ < s_.size() && s_[pos_] == ')') throw SmilesError("empty branch", pos_);
        return;
      case ')':
        if (branches_.empty()) throw SmilesError("unbalanced parenthesis", pos_);
        if (pending_) throw SmilesError("dangling bond", pending_pos_);
        prev_ = branches_.back().first;
        branches_.pop_back();
        ++pos_;
        return;
      case '.':
        if (pending_) throw SmilesError("dangling bond", pending_pos_);
        if (prev_ < 0) throw SmilesError("empty fragment", pos_);
        if (!branches_.empty()) throw SmilesError("'.' inside a branch", pos_);
        prev_ = -1;
        ++pos_;
        return;
      case '-': case '=': case '#': case ':': case '/': case '\\':
        if (prev_ < 0) throw SmilesError("bond without a preceding atom", pos_);
        if (pending_) throw SmilesError("two consecutive bonds", pos_);
        pending_ = c == '=' ? BondOrder::double_
                 : c == '#' ? BondOrder::triple
                 : c == ':' ? BondOrder::aromatic
                            : BondOrder::single;
        pending_pos_ = pos_;
        ++pos_;
        return;
      case '%': {
        if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2]))) {
          throw SmilesError("'%' must be followed by two digits", pos_);
        }
        const int num = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
        ring_bond(num, pos_);
        pos_ += 3;
        return;
      }
      case '[':
        add_atom(bracket_atom());
        return;
      default:
        break;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      ring_bond(c - '0', pos_);
      ++pos_;
      return;
    }
    add_atom(bare_atom());
  }

  Atom bare_atom() {
    const char c = s_[pos_];
    Atom a;
    if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
      a.element = "Cl";
      pos_ += 2;
    } else if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
      a.element = "Br";
      pos_ += 2;
    } else if (std::string_view("BCNOPSFI").find(c) != std::string_view::npos) {
      a.element = std::string(1, c);
      ++pos_;
    } else if (std::string_view("bcnops").find(c) != std::string_view::npos) {
      a.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      a.aromatic = true;
      ++pos_;
    } else {
      throw SmilesError(std::string("unknown symbol '") +
                            (std::isprint(static_cast<unsigned char>(c)) ? std::string(1, c)
                                                                         : std::string("\\x??")) +
                            "'",
                        pos_);
    }
    return a;
  }

  Atom bracket_atom() {
    const std::size_t open = pos_;
    auto fail = [&](const std::string& why) -> SmilesError {
      return SmilesError("invalid bracket atom: " + why, pos_ < s_.size() ? pos_ : open);
    };
    ++pos_;
    Atom a;
    a.bracket = true;
    auto peek = [&]() -> char { return pos_ < s_.size() ? s_[pos_] : '\0'; };
    auto read_int = [&]() {
      int v = 0, n = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        if (++n > 4) throw fail("number too long");
        v = v * 10 + (s_[pos_++] - '0');
      }
      return std::pair{v, n};
    };
    if (auto [iso, n] = read_int(); n > 0) a.isotope = iso;
    const char c = peek();
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      const std::size_t start = pos_++;
      if (std::islower(static_cast<unsigned char>(peek())) && is_element(sym + peek())) {
        sym += s_[pos_++];
      }
      if (!is_element(sym)) throw SmilesError("invalid bracket atom: unknown element '" + sym + "'", start);
      a.element = sym;
    } else if (std::islower(static_cast<unsigned char>(c))) {
      // aromatic: two-letter forms first
      std::string two = s_.substr(pos_, 2).size() == 2 ? std::string(s_.substr(pos_, 2)) : "";
      if (two == "se" || two == "as") {
        a.element = two == "se" ? "Se" : "As";
        pos_ += 2;
      } else if (std::string_view("bcnops").find(c) != std::string_view::npos) {
        a.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        ++pos_;
      } else {
        throw fail(std::string("unknown aromatic symbol '") + c + "'");
      }
      a.aromatic = true;
    } else {
      throw fail("missing element symbol");
    }
    while (peek() == '@') ++pos_;
    if (peek() == 'H') {
      ++pos_;
      auto [h, n] = read_int();
      a.hydrogens = n > 0 ? h : 1;
    }
    if (peek() == '+' || peek() == '-') {
      const char sign = s_[pos_++];
      int mag = 1;
      if (auto [v, n] = read_int(); n > 0) {
        mag = v;
      } else {
        while (peek() == sign) {
          ++mag;
          ++pos_;
        }
      }
      a.charge = sign == '+' ? mag : -mag;
    }
    if (peek() == ':') {
      ++pos_;
      if (auto [_, n] = read_int(); n == 0) throw fail("atom class needs digits");
    }
    if (peek() != ']') throw fail("expected ']'");
    ++pos_;
    return a;
  }

  void add_atom(Atom a) {
    const int idx = static_cast<int>(g_.atoms.size());
    g_.atoms.push_back(std::move(a));
    if (prev_ >= 0) {
      const auto order = pending_ ? *pending_ : default_order(prev_, idx);
      add_bond(prev_, idx, order, pos_);
    }
    pending_.reset();
    prev_ = idx;
  }

  BondOrder default_order(int a, int b) const {
    return g_.atoms[static_cast<std::size_t>(a)].aromatic &&
                   g_.atoms[static_cast<std::size_t>(b)].aromatic
               ? BondOrder::aromatic
               : BondOrder::single;
  }

  void add_bond(int a, int b, BondOrder order, std::size_t at) {
    if (a == b) throw SmilesError("atom bonded to itself", at);
    for (const auto& e : g_.bonds) {
      if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) {
        throw SmilesError("duplicate bond", at);
      }
    }
    g_.bonds.push_back({a, b, order});
  }

  void ring_bond(int num, std::size_t at) {
    if (prev_ < 0) throw SmilesError("ring closure without a preceding atom", at);
    auto it = rings_.find(num);
    if (it == rings_.end()) {
      rings_.emplace(num, RingOpen{prev_, pending_, at});
    } else {
      const RingOpen open = it->second;
      rings_.erase(it);
      if (open.order && pending_ && *open.order != *pending_) {
        throw SmilesError("conflicting bond orders on ring closure " + std::to_string(num), at);
      }
      const auto order = pending_ ? *pending_ : open.order ? *open.order : default_order(open.atom, prev_);
      add_bond(open.atom, prev_, order, at);
    }
    pending_.reset();
  }

  void complete_hydrogens() {
    std::vector<int> used(g_.atoms.size(), 0);
    for (const auto& b : g_.bonds) {
      used[static_cast<std::size_t>(b.a)] += bond_valence(b.order);
      used[static_cast<std::size_t>(b.b)] += bond_valence(b.order);
    }
    for (std::size_t i = 0; i < g_.atoms.size(); ++i) {
      auto& a = g_.atoms[i];
      if (!a.bracket) a.hydrogens = implicit_hydrogens(a, used[i]);
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  MolGraph g_;
  int prev_ = -1;
  std::optional<BondOrder> pending_;
  std::size_t pending_pos_ = 0;
  std::vector<std::pair<int, std::size_t>> branches_;
  std::map<int, RingOpen> rings_;
};

}  // namespace detail

inline MolGraph parse_smiles(std::string_view s) { return detail::SmilesParser(s).parse(); }

// ---------------------------------------------------------------------------
// Writer

namespace detail {

inline std::string atom_token(const Atom& a, int used) {
  std::string sym = a.element;
  if (a.aromatic) sym[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(sym[0])));
  if (organic_subset(a.element) && a.charge == 0 && a.isotope == 0 &&
      implicit_hydrogens(a, used) == a.hydrogens) {
    return sym;
  }
  std::string out = "[";
  if (a.isotope) out += std::to_string(a.isotope);
  out += sym;
  if (a.hydrogens == 1) out += "H";
  if (a.hydrogens > 1) out += "H" + std::to_string(a.hydrogens);
  if (a.charge > 0) out += "+";
  if (a.charge < 0) out += "-";
  if (std::abs(a.charge) > 1) out += std::to_string(std::abs(a.charge));
  return out + "]";
}

inline std::string bond_token(BondOrder o, bool both_aromatic) {
  switch (o) {
    case BondOrder::single: return both_aromatic ? "-" : "";
    case BondOrder::double_: return "=";
    case BondOrder::triple: return "#";
    case BondOrder::aromatic: return both_aromatic ? "" : ":";
  }
  return "";
}

}  // namespace detail

/// Non-canonical SMILES: depth-first from the lowest-index atom of each
/// fragment, neighbours in bond order, fragments joined by '.'.
inline std::string write_smiles(const MolGraph& g) {
  const auto adj = g.adjacency();
  const std::size_t n = g.atoms.size();
  std::vector<int> used(n, 0);
  for (const auto& b : g.bonds) {
    used[static_cast<std::size_t>(b.a)] += detail::bond_valence(b.order);
    used[static_cast<std::size_t>(b.b)] += detail::bond_valence(b.order);
  }
  // Pass 1: DFS order, tree children and ring-closure edges.
  std::vector<int> order(n, -1), parent(n, -1);
  std::vector<std::vector<int>> children(n);
  std::vector<std::vector<std::pair<int, BondOrder>>> ring_opens(n), ring_closes(n);
  int counter = 0;
  std::vector<int> roots;
  auto aromatic_pair = [&](int a, int b) {
    return g.atoms[static_cast<std::size_t>(a)].aromatic && g.atoms[static_cast<std::size_t>(b)].aromatic;
  };
  for (std::size_t r = 0; r < n; ++r) {
    if (order[r] >= 0) continue;
    roots.push_back(static_cast<int>(r));
    std::vector<std::pair<int, std::size_t>> stack{{static_cast<int>(r), 0}};
    order[r] = counter++;
    while (!stack.empty()) {
      auto& [u, next] = stack.back();
      const auto uu = static_cast<std::size_t>(u);
      if (next == adj[uu].size()) {
        stack.pop_back();
        continue;
      }
      const auto [w, bo] = adj[uu][next++];
      const auto ww = static_cast<std::size_t>(w);
      if (order[ww] < 0) {
        order[ww] = counter++;
        parent[ww] = u;
        children[uu].push_back(w);
        stack.emplace_back(w, 0);
      } else if (w != parent[uu] && order[ww] < order[uu]) {
        // Back edge to an ancestor: the ring opens there and closes here.
        ring_opens[ww].emplace_back(u, bo);
        ring_closes[uu].emplace_back(w, bo);
      }
    }
  }
  // Pass 2: emit. Ring openings at an atom are assigned digits in the order
  // their partners will be reached.
  std::string out;
  std::vector<int> free_digits;
  int next_digit = 1;
  std::map<std::pair<int, int>, int> open_digit;
  auto digit_str = [](int d) { return d < 10 ? std::to_string(d) : "%" + std::to_string(d); };
  auto emit = [&](auto&& self, int u) -> void {
    const auto uu = static_cast<std::size_t>(u);
    out += detail::atom_token(g.atoms[uu], used[uu]);
    for (const auto& [w, bo] : ring_closes[uu]) {
      const int d = open_digit.at({w, u});
      open_digit.erase({w, u});
      out += digit_str(d);
      free_digits.push_back(d);
      std::sort(free_digits.begin(), free_digits.end(), std::greater<>());
    }
    auto ring_sorted = ring_opens[uu];
    std::sort(ring_sorted.begin(), ring_sorted.end(), [&](const auto& x, const auto& y) {
      return order[static_cast<std::size_t>(x.first)] < order[static_cast<std::size_t>(y.first)];
    });
    for (const auto& [w, bo] : ring_sorted) {
      int d;
      if (!free_digits.empty()) {
        d = free_digits.back();
        free_digits.pop_back();
      } else {
        d = next_digit++;
      }
      open_digit[{u, w}] = d;
      out += detail::bond_token(bo, aromatic_pair(u, w)) + digit_str(d);
    }
    const auto& kids = children[uu];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const int w = kids[i];
      BondOrder bo = BondOrder::single;
      for (const auto& [x, o] : adj[uu]) {
        if (x == w) bo = o;
      }
      const bool last = i + 1 == kids.size();
      if (!last) out += "(";
      out += detail::bond_token(bo, aromatic_pair(u, w));
      self(self, w);
      if (!last) out += ")";
    }
  };
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (i) out += ".";
    emit(emit, roots[i]);
  }
  return out;
}

}  // namespace lorachem
