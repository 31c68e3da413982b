// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "lorachem/tensor.hpp"

namespace lorachem {

/// Plain Adam with fixed beta1 = 0.9, beta2 = 0.999, eps = 1e-8. Only the
/// learning rate is configurable.
template <class T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Adam(std::vector<BasicTensor<T>> params, double lr) : params_(std::move(params)), lr_(lr) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Parameters without a grad are skipped (they were not reached).
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - lr_ * mhat / (std::sqrt(vhat) + kEps));
      }
    }
  }

  double lr() const noexcept { return lr_; }
  long steps() const noexcept { return t_; }
  const std::vector<BasicTensor<T>>& params() const noexcept { return params_; }

 private:
  std::vector<BasicTensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_;
  long t_ = 0;
};

}  // namespace lorachem
