// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model-agnostic beam search. A step function maps a prefix (generated ids
// so far) to log-probabilities over the vocabulary; -inf marks impossible
// tokens.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <optional>
#include <span>
#include <vector>

#include "lorachem/error.hpp"

namespace lorachem {

struct Hypothesis {
  std::vector<int> ids;  // includes the terminating EOS when finished
  double log_prob = 0.0;
  bool finished = true;  // false: hit the length cap without EOS
};

/// Higher score first; equal scores ordered by id sequence, ascending.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.ids < b.ids;
}

template <class F>
concept StepFunction = requires(F f, const std::vector<int>& prefix) {
  { f(prefix) } -> std::convertible_to<std::vector<double>>;
};

struct DecodeOptions {
  int beam_width = 1;
  int max_len = 256;
  int eos = 1;
  std::vector<int> banned;  // never emitted (e.g. PAD)
};

namespace detail {

inline std::optional<int> best_token(const std::vector<double>& lp, const DecodeOptions& opt) {
  std::optional<int> best;
  for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
    if (std::isinf(lp[t]) && lp[t] < 0) continue;
    if (std::find(opt.banned.begin(), opt.banned.end(), t) != opt.banned.end()) continue;
    if (!best || lp[t] > lp[*best]) best = t;
  }
  return best;
}

}  // namespace detail

/// Step-wise argmax (lowest id wins ties).
template <StepFunction F>
Hypothesis greedy_decode(F&& step, const DecodeOptions& opt) {
  Hypothesis h;
  h.finished = false;
  while (static_cast<int>(h.ids.size()) < opt.max_len) {
    const std::vector<double> lp = step(h.ids);
    const auto tok = detail::best_token(lp, opt);
    if (!tok) break;
    h.ids.push_back(*tok);
    h.log_prob += lp[static_cast<std::size_t>(*tok)];
    if (*tok == opt.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

/// Beam search returning up to beam_width terminal hypotheses, sorted by
/// hypothesis_before. The beam shrinks as hypotheses finish, so beam_width 1
/// is greedy decoding. The greedy continuation is never pruned: if it falls
/// outside the top candidates it replaces the last one, which guarantees the
/// result holds the greedy sequence or beam_width hypotheses scoring at
/// least as well. No length normalisation.
template <StepFunction F>
std::vector<Hypothesis> beam_search(F&& step, const DecodeOptions& opt) {
  if (opt.beam_width < 1) throw ContractError("beam_width must be >= 1");
  if (opt.max_len < 1) throw ContractError("max_len must be >= 1");
  const auto width = static_cast<std::size_t>(opt.beam_width);

  struct Candidate {
    std::size_t beam;
    int token;
    double score;
  };

  std::vector<Hypothesis> alive(1);
  alive[0].finished = false;
  std::optional<std::size_t> greedy_beam = 0;
  std::vector<Hypothesis> done;

  while (!alive.empty()) {
    const std::size_t budget = width - done.size();
    std::vector<Candidate> cands;
    std::optional<Candidate> greedy;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const std::vector<double> lp = step(alive[b].ids);
      for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
        const double v = lp[static_cast<std::size_t>(t)];
        if (std::isinf(v) && v < 0) continue;
        if (std::find(opt.banned.begin(), opt.banned.end(), t) != opt.banned.end()) continue;
        cands.push_back({b, t, alive[b].log_prob + v});
      }
      if (greedy_beam && *greedy_beam == b) {
        if (auto tok = detail::best_token(lp, opt)) {
          greedy = Candidate{b, *tok, alive[b].log_prob + lp[static_cast<std::size_t>(*tok)]};
        }
      }
    }
    // All alive prefixes share one length, so lexicographic order on
    // prefix + token is prefix order, then token.
    auto before = [&](const Candidate& x, const Candidate& y) {
      if (x.score != y.score) return x.score > y.score;
      if (x.beam != y.beam) return alive[x.beam].ids < alive[y.beam].ids;
      return x.token < y.token;
    };
    const std::size_t keep = std::min(budget, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      before);
    cands.resize(keep);
    if (greedy && keep > 0) {
      const bool kept = std::any_of(cands.begin(), cands.end(), [&](const Candidate& c) {
        return c.beam == greedy->beam && c.token == greedy->token;
      });
      if (!kept) {
        cands.back() = *greedy;
        std::sort(cands.begin(), cands.end(), before);
      }
    }

    std::vector<Hypothesis> next;
    std::optional<std::size_t> next_greedy;
    for (const auto& c : cands) {
      Hypothesis h;
      h.ids = alive[c.beam].ids;
      h.ids.push_back(c.token);
      h.log_prob = c.score;
      const bool is_greedy = greedy && c.beam == greedy->beam && c.token == greedy->token;
      if (c.token == opt.eos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else if (static_cast<int>(h.ids.size()) >= opt.max_len) {
        h.finished = false;
        done.push_back(std::move(h));
      } else {
        h.finished = false;
        if (is_greedy) next_greedy = next.size();
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    greedy_beam = next_greedy;
  }

  std::sort(done.begin(), done.end(), hypothesis_before);
  if (done.size() > width) done.resize(width);
  return done;
}

}  // namespace lorachem
