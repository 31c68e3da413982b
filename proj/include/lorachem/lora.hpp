// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters. A frozen weight W[k x d] is adapted as
//
//   W' = W + (alpha / r) * B * A,   A[r x d], B[k x r]
//
// with B initialised to zero so that a fresh adapter leaves the layer
// unchanged. Dropout, when enabled, acts on the adapter's input only.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorachem/binio.hpp"
#include "lorachem/error.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/tensor.hpp"

namespace lorachem {

template <class T>
struct BasicLoraModule {
  std::string target_name;
  BasicTensor<T> A;  // r x d
  BasicTensor<T> B;  // k x r
  int rank = 0;
  double alpha = 0.0;
  double dropout_p = 0.0;
  bool trainable = true;

  std::size_t in_dim() const { return A.cols(); }
  std::size_t out_dim() const { return B.rows(); }
  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t parameter_count() const { return A.numel() + B.numel(); }
};

using LoraModule = BasicLoraModule<float>;

template <class T = float>
BasicLoraModule<T> create_adapter(std::string target_name, long d, long k, long r, double alpha,
                                  double dropout_p, std::uint64_t seed) {
  if (d <= 0 || k <= 0) {
    throw ContractError("create_adapter(" + target_name + "): dimensions must be positive, got d=" +
                        std::to_string(d) + " k=" + std::to_string(k));
  }
  if (r <= 0 || r > std::min(d, k)) {
    throw ContractError("create_adapter(" + target_name + "): rank " + std::to_string(r) +
                        " outside [1, " + std::to_string(std::min(d, k)) + "]");
  }
  if (!(alpha > 0.0)) throw ContractError("create_adapter: alpha must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw ContractError("create_adapter: dropout must lie in [0, 1)");
  }
  const auto ud = static_cast<std::size_t>(d), uk = static_cast<std::size_t>(k),
             ur = static_cast<std::size_t>(r);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  BasicLoraModule<T> m;
  m.target_name = std::move(target_name);
  m.A = BasicTensor<T>::uniform({ur, ud}, -bound, bound, rng, true);
  m.B = BasicTensor<T>::zeros({uk, ur}, true);
  m.rank = static_cast<int>(r);
  m.alpha = alpha;
  m.dropout_p = dropout_p;
  return m;
}

namespace detail {

template <class T>
void check_adapter_shapes(const BasicTensor<T>& w, const BasicLoraModule<T>& m) {
  require_matrix(w, "lora");
  const auto r = static_cast<std::size_t>(m.rank);
  if (m.A.rank() != 2 || m.B.rank() != 2 || m.A.rows() != r || m.B.cols() != r ||
      m.A.cols() != w.cols() || m.B.rows() != w.rows()) {
    throw ShapeError("adapter '" + m.target_name + "' A" + shape_str(m.A.shape()) + " B" +
                     shape_str(m.B.shape()) + " rank " + std::to_string(m.rank) +
                     " does not fit weight " + shape_str(w.shape()));
  }
}

}  // namespace detail

/// W x + (alpha/r) B (A x~), with x~ = dropout(x) only while training.
/// `x` is a d-vector or an [n x d] batch of row vectors. W is read through a
/// detached view so no gradient ever reaches it.
template <class T>
BasicTensor<T> adapted_forward(const BasicTensor<T>& w, const BasicLoraModule<T>& m,
                               const BasicTensor<T>& x, bool training, std::uint64_t seed) {
  detail::check_adapter_shapes(w, m);
  if (x.cols() != w.cols() || x.rank() > 2) {
    throw ShapeError("adapted_forward: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  auto base = linear(x, w.detach());
  auto input = x;
  if (training && m.dropout_p > 0.0) {
    const double keep = 1.0 / (1.0 - m.dropout_p);
    std::vector<T> mask(x.numel());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = to_unit(counter_hash(seed, i)) < m.dropout_p ? T{0} : static_cast<T>(keep);
    }
    input = mul(x, BasicTensor<T>::from(x.shape(), std::move(mask)));
  }
  auto low = linear(linear(input, m.A), m.B);
  return add(base, scale(low, m.scale()));
}

/// W + (alpha/r) B A as a plain weight. Entries whose update is exactly zero
/// keep W's bits.
template <class T>
BasicTensor<T> merge(const BasicTensor<T>& w, const BasicLoraModule<T>& m) {
  detail::check_adapter_shapes(w, m);
  const std::size_t k = w.rows(), d = w.cols(), r = static_cast<std::size_t>(m.rank);
  std::vector<double> delta(k * d, 0.0);
  detail::gemm_nn(k, d, r, m.B.data().data(), m.A.data().data(), delta.data());
  std::vector<T> out(w.data().begin(), w.data().end());
  const double s = m.scale();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (delta[i] != 0.0) out[i] = static_cast<T>(static_cast<double>(out[i]) + s * delta[i]);
  }
  return BasicTensor<T>::from(w.shape(), std::move(out));
}

struct AdapterMetadata {
  std::uint64_t seed = 0;
  std::vector<std::string> tasks;
};

/// The swappable unit: one named set of adapters, keyed by target weight.
template <class T>
class BasicAdapterBundle {
 public:
  BasicAdapterBundle() = default;
  explicit BasicAdapterBundle(std::string name, AdapterMetadata meta = {})
      : name_(std::move(name)), meta_(std::move(meta)) {}

  const std::string& name() const noexcept { return name_; }
  const AdapterMetadata& metadata() const noexcept { return meta_; }
  AdapterMetadata& metadata() noexcept { return meta_; }
  const std::map<std::string, BasicLoraModule<T>>& modules() const noexcept { return modules_; }
  std::map<std::string, BasicLoraModule<T>>& modules() noexcept { return modules_; }
  bool empty() const noexcept { return modules_.empty(); }

  void add(BasicLoraModule<T> m) {
    const auto key = m.target_name;
    if (!modules_.emplace(key, std::move(m)).second) {
      throw ContractError("bundle '" + name_ + "' already adapts '" + key + "'");
    }
  }

  const BasicLoraModule<T>* find(const std::string& target) const {
    auto it = modules_.find(target);
    return it == modules_.end() ? nullptr : &it->second;
  }

  std::vector<BasicTensor<T>> parameters() const {
    std::vector<BasicTensor<T>> out;
    for (const auto& [_, m] : modules_) {
      if (!m.trainable) continue;
      out.push_back(m.A);
      out.push_back(m.B);
    }
    return out;
  }

  /// Deep copy (fresh storage for every A and B).
  BasicAdapterBundle clone() const {
    BasicAdapterBundle b(name_, meta_);
    for (const auto& [_, m] : modules_) {
      auto c = m;
      c.A = m.A.clone(m.A.requires_grad());
      c.B = m.B.clone(m.B.requires_grad());
      b.add(std::move(c));
    }
    return b;
  }

 private:
  std::string name_;
  AdapterMetadata meta_;
  std::map<std::string, BasicLoraModule<T>> modules_;
};

using AdapterBundle = BasicAdapterBundle<float>;

struct ParamCounts {
  std::uint64_t trainable = 0;
  std::uint64_t frozen = 0;
  double fraction = 0.0;
};

/// trainable = sum of r (d + k); fraction = trainable / base_param_total.
template <class T>
ParamCounts param_counts(std::uint64_t base_param_total, const BasicAdapterBundle<T>& bundle) {
  ParamCounts c;
  for (const auto& [_, m] : bundle.modules()) {
    c.trainable += static_cast<std::uint64_t>(m.rank) * (m.in_dim() + m.out_dim());
  }
  c.frozen = base_param_total;
  c.fraction = base_param_total ? static_cast<double>(c.trainable) /
                                      static_cast<double>(base_param_total)
                                : 0.0;
  return c;
}

// ---------------------------------------------------------------------------
// LORB file format

inline constexpr std::string_view kAdapterMagic = "LORB";
inline constexpr std::uint32_t kAdapterVersion = 1;

inline nlohmann::json adapter_header(const AdapterBundle& b) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& [_, m] : b.modules()) {
    mods.push_back({{"target_name", m.target_name},
                    {"d", m.in_dim()},
                    {"k", m.out_dim()},
                    {"r", m.rank},
                    {"alpha", m.alpha},
                    {"dropout_p", m.dropout_p}});
  }
  return {{"name", b.name()},
          {"seed", b.metadata().seed},
          {"tasks", b.metadata().tasks},
          {"modules", std::move(mods)}};
}

inline void save_adapter(const AdapterBundle& b, std::ostream& os) {
  binio::write_header(os, kAdapterMagic, kAdapterVersion, adapter_header(b));
  for (const auto& [_, m] : b.modules()) {
    binio::write_floats(os, m.A.data());
    binio::write_floats(os, m.B.data());
  }
  if (!os) throw FormatError("failed writing adapter");
}

inline AdapterBundle load_adapter(std::istream& is) {
  const auto h = binio::read_header(is, kAdapterMagic, kAdapterVersion);
  try {
    AdapterMetadata meta;
    meta.seed = h.at("seed").get<std::uint64_t>();
    if (h.contains("tasks")) meta.tasks = h.at("tasks").get<std::vector<std::string>>();
    AdapterBundle b(h.at("name").get<std::string>(), std::move(meta));
    std::string previous;
    for (const auto& mj : h.at("modules")) {
      LoraModule m;
      m.target_name = mj.at("target_name").get<std::string>();
      if (!previous.empty() && m.target_name <= previous) {
        throw FormatError("adapter modules must be unique and sorted by target name");
      }
      previous = m.target_name;
      const auto d = mj.at("d").get<std::size_t>();
      const auto k = mj.at("k").get<std::size_t>();
      const auto r = mj.at("r").get<int>();
      if (d == 0 || k == 0 || r <= 0) throw FormatError("bad dimensions for " + m.target_name);
      const auto ur = static_cast<std::size_t>(r);
      m.rank = r;
      m.alpha = mj.at("alpha").get<double>();
      m.dropout_p = mj.at("dropout_p").get<double>();
      std::vector<float> a(ur * d), bb(k * ur);
      binio::read_floats(is, a);
      binio::read_floats(is, bb);
      m.A = Tensor::from({ur, d}, std::move(a), true);
      m.B = Tensor::from({k, ur}, std::move(bb), true);
      b.add(std::move(m));
    }
    binio::expect_eof(is);
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter header: ") + e.what());
  }
}

inline void save_adapter(const AdapterBundle& b, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  save_adapter(b, os);
}

inline AdapterBundle load_adapter(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return load_adapter(is);
}

}  // namespace lorachem
