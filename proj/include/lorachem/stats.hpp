// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cliff's delta and the Wilcoxon signed-rank test for small paired samples.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorachem/error.hpp"

namespace lorachem {

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ContractError(std::string(what) + ": non-finite value");
  }
}

}  // namespace detail

/// (#{x_i > y_j} - #{x_i < y_j}) / (|x| |y|).
inline double cliffs_delta(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw ContractError("cliffs_delta: empty sample");
  detail::require_finite(x, "cliffs_delta");
  detail::require_finite(y, "cliffs_delta");
  std::vector<double> ys(y.begin(), y.end());
  std::sort(ys.begin(), ys.end());
  std::int64_t greater = 0, less = 0;
  for (double v : x) {
    greater += std::lower_bound(ys.begin(), ys.end(), v) - ys.begin();
    less += ys.end() - std::upper_bound(ys.begin(), ys.end(), v);
  }
  return static_cast<double>(greater - less) /
         (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

inline std::string cliffs_band(double delta) {
  const double m = std::abs(delta);
  if (m < 0.147) return "negligible";
  if (m < 0.33) return "small";
  if (m < 0.474) return "medium";
  return "large";
}

enum class WilcoxonMode { automatic, exact, normal };

struct WilcoxonResult {
  double w = std::numeric_limits<double>::quiet_NaN();  // NaN when degenerate
  double p = 1.0;
  std::string method;
  std::size_t n_effective = 0;
  bool degenerate = false;  // every difference was zero
};

/// Largest n for which exact enumeration is the automatic choice.
inline constexpr std::size_t kExactWilcoxonMaxN = 12;

/// Two-sided signed-rank test on x - y. Zero differences are dropped and
/// tied |d| share mid-ranks. Exact mode counts, over all 2^n sign
/// assignments of the observed ranks, those with min(W+, W-) <= W. Normal
/// mode uses the tie-corrected variance with a 0.5 continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           WilcoxonMode mode = WilcoxonMode::automatic) {
  if (x.size() != y.size()) throw ContractError("wilcoxon: samples are not paired (lengths differ)");
  if (x.empty()) throw ContractError("wilcoxon: empty sample");
  detail::require_finite(x, "wilcoxon");
  detail::require_finite(y, "wilcoxon");

  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  }
  WilcoxonResult r;
  r.n_effective = d.size();
  const std::size_t n = d.size();
  const bool exact = mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && n <= kExactWilcoxonMaxN);
  r.method = exact ? "exact" : "normal";
  if (n == 0) {
    r.degenerate = true;
    return r;
  }
  if (exact && n > 50) throw ContractError("wilcoxon: exact mode supports at most 50 non-zero differences");

  // Doubled mid-ranks stay integral: positions i..j (1-based) share i + j.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<std::int64_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = static_cast<std::int64_t>(i + 1 + j + 1);
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  std::int64_t pos2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) pos2 += rank2[i];
  }
  const std::int64_t w2 = std::min(pos2, total2 - pos2);
  r.w = static_cast<double>(w2) / 2.0;

  if (exact) {
    // counts[s] = number of sign assignments whose positive doubled-rank sum is s.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    std::int64_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::int64_t s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) {
          counts[static_cast<std::size_t>(s + rank2[i])] += counts[static_cast<std::size_t>(s)];
        }
      }
      reach += rank2[i];
    }
    double hits = 0.0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      if (std::min(s, total2 - s) <= w2) hits += counts[static_cast<std::size_t>(s)];
    }
    r.p = std::min(1.0, hits / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
      r.p = 1.0;
    } else {
      const double z = std::max(0.0, std::abs(r.w - mean) - 0.5) / std::sqrt(var);
      r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    }
  }
  return r;
}

inline nlohmann::json stats_report(std::span<const double> x, std::span<const double> y,
                                   WilcoxonMode mode = WilcoxonMode::automatic) {
  const double delta = cliffs_delta(x, y);
  const auto w = wilcoxon_signed_rank(x, y, mode);
  nlohmann::json j = {{"delta", delta},
                      {"delta_band", cliffs_band(delta)},
                      {"p_value", w.p},
                      {"method", w.method},
                      {"n_effective", w.n_effective},
                      {"degenerate", w.degenerate}};
  j["w_statistic"] = w.degenerate ? nlohmann::json(nullptr) : nlohmann::json(w.w);
  return j;
}

}  // namespace lorachem
