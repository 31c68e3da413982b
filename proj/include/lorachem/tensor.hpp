// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode autodiff.
//
// Storage is T (float for training, double for reference checks); every
// reduction accumulates in double. Only 1-D and 2-D shapes are used by the
// model, and there is no broadcasting apart from scalar scaling.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lorachem/error.hpp"
#include "lorachem/rng.hpp"

namespace lorachem {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() noexcept { return detail::grad_mode; }

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() noexcept : saved_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

template <class T>
struct TensorNode {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(TensorNode&)> backward;

  std::size_t numel() const noexcept { return data->size(); }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::make_shared<std::vector<T>>(std::move(values));
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  static BasicTensor eye(std::size_t n) {
    std::vector<T> v(n * n, T{0});
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T{1};
    return from({n, n}, std::move(v));
  }

  static BasicTensor uniform(Shape shape, double lo, double hi, Rng& rng,
                             bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->numel(); }
  /// Row count when viewed as a matrix (a 1-D tensor is one row).
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> data() const { return {node_->data->data(), node_->data->size()}; }
  T operator[](std::size_t i) const { return (*node_->data)[i]; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->data)[0];
  }

  /// In-place access for leaves only (initialisation, optimiser steps, probes).
  std::span<T> mutable_data() {
    if (!node_->leaf) throw ContractError("cannot mutate the data of a recorded tensor");
    return {node_->data->data(), node_->data->size()};
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->leaf; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  /// New leaf sharing this tensor's storage, outside the tape.
  BasicTensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    return BasicTensor(std::move(n));
  }

  /// Deep copy into a fresh leaf.
  BasicTensor clone(bool requires_grad = false) const {
    return from(node_->shape, *node_->data, requires_grad);
  }

  BasicTensor reshape(Shape shape) const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

namespace detail {

template <class T>
std::vector<T>* grad_sink(TensorNode<T>& n) {
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.numel(), T{0});
  return &n.grad;
}

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values,
                           std::vector<std::shared_ptr<TensorNode<T>>> inputs, const char* op,
                           std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<T>>(std::move(values));
  n->op = op;
  const bool track =
      grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                    [](const auto& in) { return in->requires_grad; });
  if (track) {
    n->requires_grad = true;
    n->leaf = false;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
void add_into(std::vector<T>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<T>(src[i]);
}

// C(m x n) += A(m x k) * B(k x n), double accumulation.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
    }
  }
}

// C(m x n) += A(m x k) * B^T where B is (n x k).
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, double* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

// C(m x n) += A^T * B where A is (k x m), B is (k x n).
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
    }
  }
}

template <class T>
std::vector<T> to_storage(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <class T>
void require_matrix(const BasicTensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

template <class T>
BasicTensor<T> BasicTensor<T>::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("reshape " + shape_str(this->shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result<T>(
      std::move(shape), *node_->data, {node_}, "reshape", [](TensorNode<T>& self) {
        if (auto* g = detail::grad_sink(*self.inputs[0])) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> acc(m * n, 0.0);
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), acc.data());
  return detail::make_result<T>(
      {m, n}, detail::to_storage<T>(acc), {a.node(), b.node()}, "matmul",
      [m, n, k](TensorNode<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (auto* ga = detail::grad_sink(an)) {
          std::vector<double> d(m * k, 0.0);
          detail::gemm_nt(m, k, n, self.grad.data(), bn.data->data(), d.data());
          detail::add_into(*ga, d);
        }
        if (auto* gb = detail::grad_sink(bn)) {
          std::vector<double> d(k * n, 0.0);
          detail::gemm_tn(k, n, m, an.data->data(), self.grad.data(), d.data());
          detail::add_into(*gb, d);
        }
      });
}

/// a[m x k] * b^T for b[n x k]. Also accepts a 1-D `a` of length k and then
/// returns a 1-D result of length n.
template <class T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_matrix(b, "matmul_nt");
  if (a.rank() > 2) throw ShapeError("matmul_nt: expected 1-D or 2-D, got " + shape_str(a.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<double> acc(m * n, 0.0);
  detail::gemm_nt(m, n, k, a.data().data(), b.data().data(), acc.data());
  Shape out = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return detail::make_result<T>(
      std::move(out), detail::to_storage<T>(acc), {a.node(), b.node()}, "matmul_nt",
      [m, n, k](TensorNode<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (auto* ga = detail::grad_sink(an)) {
          std::vector<double> d(m * k, 0.0);
          detail::gemm_nn(m, k, n, self.grad.data(), bn.data->data(), d.data());
          detail::add_into(*ga, d);
        }
        if (auto* gb = detail::grad_sink(bn)) {
          std::vector<double> d(n * k, 0.0);
          detail::gemm_tn(n, k, m, self.grad.data(), an.data->data(), d.data());
          detail::add_into(*gb, d);
        }
      });
}

/// y = x W^T for a weight W[k x d] mapping d-vectors to k-vectors.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  return matmul_nt(x, w);
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "add",
                                [](TensorNode<T>& self) {
                                  for (auto& in : self.inputs) {
                                    if (auto* g = detail::grad_sink(*in)) {
                                      for (std::size_t i = 0; i < g->size(); ++i)
                                        (*g)[i] += self.grad[i];
                                    }
                                  }
                                });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, "mul",
                                [](TensorNode<T>& self) {
                                  auto& an = *self.inputs[0];
                                  auto& bn = *self.inputs[1];
                                  if (auto* g = detail::grad_sink(an)) {
                                    for (std::size_t i = 0; i < g->size(); ++i)
                                      (*g)[i] += self.grad[i] * (*bn.data)[i];
                                  }
                                  if (auto* g = detail::grad_sink(bn)) {
                                    for (std::size_t i = 0; i < g->size(); ++i)
                                      (*g)[i] += self.grad[i] * (*an.data)[i];
                                  }
                                });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, double c) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(c * x[i]);
  return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, "scale",
                                [c](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_sink(*self.inputs[0])) {
                                    for (std::size_t i = 0; i < g->size(); ++i)
                                      (*g)[i] += static_cast<T>(c * self.grad[i]);
                                  }
                                });
}

enum class Elementwise { add, mul, scale };

/// Dispatching form; `constant` is only read for Elementwise::scale.
template <class T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, Elementwise kind,
                           double constant = 1.0) {
  switch (kind) {
    case Elementwise::add: return add(a, b);
    case Elementwise::mul: return mul(a, b);
    case Elementwise::scale: return scale(a, constant);
  }
  throw ContractError("unknown elementwise kind");
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, "relu",
                                [](TensorNode<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (auto* g = detail::grad_sink(in)) {
                                    for (std::size_t i = 0; i < g->size(); ++i)
                                      if ((*in.data)[i] > T{0}) (*g)[i] += self.grad[i];
                                  }
                                });
}

/// Sum of all elements as a scalar.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += v;
  return detail::make_result<T>({1}, {static_cast<T>(s)}, {a.node()}, "sum",
                                [](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_sink(*self.inputs[0])) {
                                    for (auto& v : *g) v += self.grad[0];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Layers

/// Row-wise RMS normalisation with a learned gain: y = g * x / sqrt(mean(x^2) + eps).
template <class T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, double eps = 1e-6) {
  detail::require_matrix(x, "rms_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.numel() != d) {
    throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  std::vector<T> out(m * d);
  std::vector<double> inv(m);
  auto xv = x.data(), gv = gain.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(xv[i * d + j]) * xv[i * d + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = static_cast<T>(static_cast<double>(xv[i * d + j]) * inv[i] * gv[j]);
  }
  return detail::make_result<T>(
      {m, d}, std::move(out), {x.node(), gain.node()}, "rms_norm",
      [m, d, inv = std::move(inv)](TensorNode<T>& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        const auto& xd = *xn.data;
        const auto& gd = *gn.data;
        if (auto* gx = detail::grad_sink(xn)) {
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j)
              dot += static_cast<double>(self.grad[i * d + j]) * gd[j] * xd[i * d + j];
            const double r = inv[i];
            const double c = r * r * r * dot / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              (*gx)[i * d + j] += static_cast<T>(r * gd[j] * self.grad[i * d + j] -
                                                 c * xd[i * d + j]);
            }
          }
        }
        if (auto* gg = detail::grad_sink(gn)) {
          std::vector<double> acc(d, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j)
              acc[j] += static_cast<double>(self.grad[i * d + j]) * xd[i * d + j] * inv[i];
          detail::add_into(*gg, acc);
        }
      });
}

/// Row-wise softmax. With `causal`, row i may only attend to columns
/// j <= i + (cols - rows); masked entries get probability exactly zero.
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x, bool causal = false) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (causal && n < m) throw ShapeError("softmax_rows: causal mask needs cols >= rows");
  const std::size_t offset = causal ? n - m : 0;
  std::vector<T> out(m * n, T{0});
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t limit = causal ? i + offset + 1 : n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, static_cast<double>(xv[i * n + j]));
    double s = 0.0;
    std::vector<double> e(limit);
    for (std::size_t j = 0; j < limit; ++j) {
      e[j] = std::exp(static_cast<double>(xv[i * n + j]) - mx);
      s += e[j];
    }
    for (std::size_t j = 0; j < limit; ++j) out[i * n + j] = static_cast<T>(e[j] / s);
  }
  return detail::make_result<T>(
      {m, n}, std::move(out), {x.node()}, "softmax_rows", [m, n](TensorNode<T>& self) {
        if (auto* g = detail::grad_sink(*self.inputs[0])) {
          const auto& p = *self.data;
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              dot += static_cast<double>(self.grad[i * n + j]) * p[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
              (*g)[i * n + j] += static_cast<T>(p[i * n + j] * (self.grad[i * n + j] - dot));
          }
        }
      });
}

/// Gathers rows of `table` for each id.
template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
  detail::require_matrix(table, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<T> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(v) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
  }
  return detail::make_result<T>(
      {ids.size(), d}, std::move(out), {table.node()}, "embedding",
      [idv = std::vector<int>(ids.begin(), ids.end()), d](TensorNode<T>& self) {
        if (auto* g = detail::grad_sink(*self.inputs[0])) {
          for (std::size_t i = 0; i < idv.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
              (*g)[static_cast<std::size_t>(idv[i]) * d + j] += self.grad[i * d + j];
        }
      });
}

/// Columns [start, start + width) of a matrix.
template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t start, std::size_t width) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (width == 0 || start + width > n) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") outside " + shape_str(x.shape()));
  }
  std::vector<T> out(m * width);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(i * n + start), width,
                out.begin() + i * width);
  return detail::make_result<T>({m, width}, std::move(out), {x.node()}, "slice_cols",
                                [m, n, start, width](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_sink(*self.inputs[0])) {
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < width; ++j)
                                        (*g)[i * n + start + j] += self.grad[i * width + j];
                                  }
                                });
}

template <class T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> inputs;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    n += p.cols();
    inputs.push_back(p.node());
  }
  std::vector<T> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.data();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * w), w, out.begin() + i * n + off);
    off += w;
  }
  return detail::make_result<T>({m, n}, std::move(out), std::move(inputs), "concat_cols",
                                [m, n, widths](TensorNode<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    const std::size_t w = widths[k];
                                    if (auto* g = detail::grad_sink(*self.inputs[k])) {
                                      for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < w; ++j)
                                          (*g)[i * w + j] += self.grad[i * n + off + j];
                                    }
                                    off += w;
                                  }
                                });
}

template <class T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> inputs;
  std::vector<T> out;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += p.rows();
    inputs.push_back(p.node());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::make_result<T>({m, n}, std::move(out), std::move(inputs), "concat_rows",
                                [](TensorNode<T>& self) {
                                  std::size_t off = 0;
                                  for (auto& in : self.inputs) {
                                    if (auto* g = detail::grad_sink(*in)) {
                                      for (std::size_t i = 0; i < g->size(); ++i)
                                        (*g)[i] += self.grad[off + i];
                                    }
                                    off += in->numel();
                                  }
                                });
}

inline constexpr int kIgnoreIndex = -100;

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
/// Rows whose target is kIgnoreIndex contribute nothing; if every row is
/// ignored the loss is 0.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets,
                                     int ignore_index = kIgnoreIndex) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  const std::size_t b = logits.rows(), v = logits.cols();
  if (targets.size() != b) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(b) + " rows");
  }
  auto lv = logits.data();
  std::vector<double> probs(b * v, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw ContractError("softmax_cross_entropy: target " + std::to_string(t) +
                          " out of range for vocabulary " + std::to_string(v));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(lv[i * v + j]));
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(static_cast<double>(lv[i * v + j]) - mx);
      s += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= s;
    total += -(static_cast<double>(lv[i * v + static_cast<std::size_t>(t)]) - mx - std::log(s));
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return detail::make_result<T>(
      {1}, {static_cast<T>(total / denom)}, {logits.node()}, "softmax_cross_entropy",
      [b, v, denom, probs = std::move(probs),
       tv = std::vector<int>(targets.begin(), targets.end()), ignore_index](TensorNode<T>& self) {
        if (auto* g = detail::grad_sink(*self.inputs[0])) {
          const double up = static_cast<double>(self.grad[0]) / denom;
          for (std::size_t i = 0; i < b; ++i) {
            if (tv[i] == ignore_index) continue;
            for (std::size_t j = 0; j < v; ++j) {
              double d = probs[i * v + j];
              if (static_cast<int>(j) == tv[i]) d -= 1.0;
              (*g)[i * v + j] += static_cast<T>(up * d);
            }
          }
        }
      });
}

/// log-softmax of one row, in double.
template <class T>
std::vector<double> log_softmax(std::span<const T> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T x : row) mx = std::max(mx, static_cast<double>(x));
  double s = 0.0;
  for (T x : row) s += std::exp(static_cast<double>(x) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<double>(row[j]) - lse;
  return out;
}

// ---------------------------------------------------------------------------
// Backward

/// Recorded operations reachable from a loss, inputs before outputs.
template <class T>
struct ComputationTape {
  std::vector<TensorNode<T>*> ops;
};

template <class T>
ComputationTape<T> build_tape(const BasicTensor<T>& root) {
  ComputationTape<T> tape;
  if (root.node()->leaf) return tape;
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode<T>* in = node->inputs[next++].get();
      if (!in->leaf && in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      tape.ops.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

/// Populates grads of every requires_grad leaf reachable from `loss`.
/// Leaf grads accumulate across calls; intermediate grads are scratch.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");
  auto& root = *loss.node();
  if (root.leaf) {
    if (root.grad.empty()) root.grad.assign(1, T{0});
    root.grad[0] += T{1};
    return;
  }
  auto tape = build_tape(loss);
  for (auto* op : tape.ops) op->grad.assign(op->numel(), T{0});
  root.grad[0] = T{1};
  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) (*it)->backward(**it);
  for (auto* op : tape.ops) {
    op->grad.clear();
    op->grad.shrink_to_fit();
  }
}

/// Max over coordinates of |analytic - central difference| /
/// max(|analytic|, |numeric|, 1e-8) for a scalar-valued f at x.
/// `x` must be a leaf with requires_grad; f is re-evaluated with x perturbed
/// in place and is expected to be deterministic.
template <class T, class F>
double grad_check(F&& f, BasicTensor<T>& x, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  if (!x.is_leaf() || !x.requires_grad()) {
    throw ContractError("grad_check: x must be a leaf that requires grad");
  }
  x.zero_grad();
  {
    BasicTensor<T> loss = f(x);
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("grad_check: non-finite loss at the unperturbed point");
    }
    if (loss.requires_grad()) backward(loss);  // else f ignores x: analytic gradient is zero
  }
  std::vector<T> analytic(x.numel(), T{0});
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  auto xs = x.mutable_data();
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T orig = xs[i];
    const T hi = static_cast<T>(orig + step);
    const T lo = static_cast<T>(orig - step);
    xs[i] = hi;
    const double fp = static_cast<double>(f(x).item());
    xs[i] = lo;
    const double fm = static_cast<double>(f(x).item());
    xs[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite value while perturbing coordinate " +
                         std::to_string(i));
    }
    const double numeric = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

/// Same measure, with the numeric side taken from a twin evaluator `ref_f`
/// over `ref_x` (typically a 64-bit copy holding identical values). In
/// 32-bit arithmetic a central difference of a cross-entropy loss drowns in
/// rounding, so 32-bit analytic gradients are checked against 64-bit
/// differences. The step is applied to ref_x.
template <class T, class U, class F, class G>
double grad_check(F&& f, BasicTensor<T>& x, G&& ref_f, BasicTensor<U>& ref_x, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  if (!x.is_leaf() || !x.requires_grad()) {
    throw ContractError("grad_check: x must be a leaf that requires grad");
  }
  if (x.shape() != ref_x.shape()) {
    throw ShapeError("grad_check: reference shape " + shape_str(ref_x.shape()) + " differs from " +
                     shape_str(x.shape()));
  }
  x.zero_grad();
  {
    BasicTensor<T> loss = f(x);
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw NumericError("grad_check: non-finite loss at the unperturbed point");
    }
    if (loss.requires_grad()) backward(loss);  // else f ignores x: analytic gradient is zero
  }
  std::vector<T> analytic(x.numel(), T{0});
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  auto xs = ref_x.mutable_data();
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const U orig = xs[i];
    const U hi = static_cast<U>(orig + step);
    const U lo = static_cast<U>(orig - step);
    xs[i] = hi;
    const double fp = static_cast<double>(ref_f(ref_x).item());
    xs[i] = lo;
    const double fm = static_cast<double>(ref_f(ref_x).item());
    xs[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite value while perturbing coordinate " +
                         std::to_string(i));
    }
    const double numeric = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace lorachem
