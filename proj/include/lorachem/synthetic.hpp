// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Template-generated reaction families. Each family enumerates every
// (acyl group, partner group) combination and emits a seeded shuffle, so two
// families can stand in for a broad "general" corpus and a narrow task.
// The three families share one acyl/partner frame and differ in the partner
// heteroatom and the reagent.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lorachem/dataset.hpp"
#include "lorachem/error.hpp"
#include "lorachem/rng.hpp"

namespace lorachem {

enum class Grammar {
  esterification,  // R1C(=O)O + OR2 --[H2SO4]--> R1C(=O)OR2
  amide_coupling,  // R1C(=O)O + NR2 --[EDC]--> R1C(=O)NR2
  thioesterification,  // R1C(=O)O + SR2 --[DCC]--> R1C(=O)SR2
};

inline std::string_view grammar_name(Grammar g) {
  switch (g) {
    case Grammar::esterification: return "esterification";
    case Grammar::amide_coupling: return "amide_coupling";
    case Grammar::thioesterification: return "thioesterification";
  }
  return "";
}

inline Grammar parse_grammar(std::string_view s) {
  if (s == "esterification" || s == "A") return Grammar::esterification;
  if (s == "amide_coupling" || s == "B") return Grammar::amide_coupling;
  if (s == "thioesterification") return Grammar::thioesterification;
  throw ContractError("unknown grammar '" + std::string(s) +
                      "' (expected esterification, amide_coupling or thioesterification)");
}

namespace detail {

// Acyl side, written so that appending "C(=O)X" attaches at the last atom.
inline constexpr std::array<std::string_view, 14> kAcylGroups = {
    "C",    "CC",      "CCC",       "CC(C)",   "CCCC",     "CC(C)C", "C1CC1",
    "C1CCC1", "C1CCCC1", "c1ccccc1", "Cc1ccccc1", "ClCC",   "COCC",   "CC(C)(C)",
};

// Partner side, written so that prefixing the heteroatom attaches at the first atom.
inline constexpr std::array<std::string_view, 14> kPartnerGroups = {
    "C",     "CC",     "CCC",      "C(C)C",  "CCCC",   "CC(C)C", "C1CC1",
    "C1CCC1", "C1CCCC1", "c1ccccc1", "Cc1ccccc1", "CCCl", "CCOC", "C(C)(C)C",
};

}  // namespace detail

/// Number of distinct reactions a family can produce.
inline std::size_t grammar_size() { return detail::kAcylGroups.size() * detail::kPartnerGroups.size(); }

/// `count` reactions (0 = all) of one family in seeded order. Ids are
/// "<family>-<index>" where index is the enumeration position, so the same
/// reaction keeps its id under every seed.
inline std::vector<ReactionRecord> synthetic_reactions(Grammar g, std::size_t count, std::uint64_t seed) {
  const std::size_t total = grammar_size();
  if (count > total) {
    throw ContractError("grammar " + std::string(grammar_name(g)) + " has only " + std::to_string(total) +
                        " reactions, asked for " + std::to_string(count));
  }
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(count == 0 ? total : count);

  std::vector<ReactionRecord> out;
  out.reserve(order.size());
  for (std::size_t index : order) {
    const std::string r1(detail::kAcylGroups[index / detail::kPartnerGroups.size()]);
    const std::string r2(detail::kPartnerGroups[index % detail::kPartnerGroups.size()]);
    ReactionRecord r;
    r.id = std::string(grammar_name(g)) + "-" + std::to_string(index);
    r.class_label = std::string(grammar_name(g));
    r.yield_fraction = 0.35 + 0.6 * to_unit(counter_hash(static_cast<std::uint64_t>(g), index));
    switch (g) {
      case Grammar::esterification:
        r.reactants = {r1 + "C(=O)O", "O" + r2};
        r.reagents = {"OS(=O)(=O)O"};
        r.products = {r1 + "C(=O)O" + r2};
        break;
      case Grammar::amide_coupling:
        r.reactants = {r1 + "C(=O)O", "N" + r2};
        r.reagents = {"CCN=C=NCCCN(C)C"};
        r.products = {r1 + "C(=O)N" + r2};
        break;
      case Grammar::thioesterification:
        r.reactants = {r1 + "C(=O)O", "S" + r2};
        r.reagents = {"C1CCC(CC1)N=C=NC1CCCCC1"};
        r.products = {r1 + "C(=O)S" + r2};
        break;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Two-stage corpus for the forgetting experiment. The general corpus holds
/// esterifications and thioesterifications plus a small slice of amide
/// couplings; the task corpus is further amide couplings, disjoint from
/// that slice. General-eval reactions are disjoint from general-train ones.
struct ForgettingCorpus {
  std::vector<ReactionRecord> general_train;
  std::vector<ReactionRecord> general_eval;
  std::vector<ReactionRecord> task_train;
  std::vector<ReactionRecord> task_eval;
};

struct ForgettingCorpusSizes {
  std::size_t general_train_per_family = 160;
  std::size_t general_eval_per_family = 36;
  std::size_t task_in_general = 24;
  std::size_t task_train = 32;
  std::size_t task_eval = 36;
};

inline ForgettingCorpus forgetting_corpus(std::uint64_t seed, const ForgettingCorpusSizes& n = {}) {
  const std::size_t total = grammar_size();
  if (n.general_train_per_family + n.general_eval_per_family > total ||
      n.task_in_general + n.task_train + n.task_eval > total) {
    throw ContractError("forgetting corpus sizes exceed the grammar size " + std::to_string(total));
  }
  ForgettingCorpus c;
  for (Grammar g : {Grammar::esterification, Grammar::thioesterification}) {
    const auto all = synthetic_reactions(g, 0, counter_hash(seed, static_cast<std::uint64_t>(g)));
    const auto split = all.begin() + static_cast<std::ptrdiff_t>(n.general_train_per_family);
    c.general_train.insert(c.general_train.end(), all.begin(), split);
    c.general_eval.insert(c.general_eval.end(), split, split + static_cast<std::ptrdiff_t>(n.general_eval_per_family));
  }
  const auto task = synthetic_reactions(Grammar::amide_coupling, 0,
                                        counter_hash(seed, static_cast<std::uint64_t>(Grammar::amide_coupling)));
  auto it = task.begin();
  c.task_train.assign(it, it + static_cast<std::ptrdiff_t>(n.task_train));
  it += static_cast<std::ptrdiff_t>(n.task_train);
  c.task_eval.assign(it, it + static_cast<std::ptrdiff_t>(n.task_eval));
  it += static_cast<std::ptrdiff_t>(n.task_eval);
  c.general_train.insert(c.general_train.end(), it, it + static_cast<std::ptrdiff_t>(n.task_in_general));
  return c;
}

}  // namespace lorachem
