// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "lorachem/lora.hpp"
#include "lorachem/model.hpp"
#include "lorachem/optim.hpp"

namespace lorachem {
namespace {

// W x + (alpha/r) (B A) x with B A materialised densely, all in double.
std::vector<double> dense_oracle(const Tensor& w, const LoraModule& m, const Tensor& x) {
  const std::size_t k = w.rows(), d = w.cols(), r = static_cast<std::size_t>(m.rank);
  std::vector<double> delta(k * d, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t p = 0; p < r; ++p) delta[i * d + j] += double(m.B[i * r + p]) * m.A[p * d + j];
  std::vector<double> y(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i] += (double(w[i * d + j]) + m.scale() * delta[i * d + j]) * x[j];
  return y;
}

LoraModule random_module(std::size_t d, std::size_t k, int r, double alpha, Rng& rng) {
  auto m = create_adapter("w", static_cast<long>(d), static_cast<long>(k), r, alpha, 0.0, rng.next());
  m.B = Tensor::uniform({k, static_cast<std::size_t>(r)}, -1, 1, rng, true);
  return m;
}

TEST(CreateAdapter, PaperParameterCount) {
  AdapterBundle b("x");
  b.add(create_adapter("w", 4096, 4096, 4, 8.0, 0.0, 1));
  const auto c = param_counts(16777216, b);
  EXPECT_EQ(c.trainable, 32768u);
  EXPECT_EQ(c.frozen, 16777216u);
  EXPECT_NEAR(c.fraction, 0.00195, 1e-5);
}

TEST(CreateAdapter, FreshContributionIsZeroAndInitRange) {
  auto m = create_adapter("w", 6, 5, 3, 4.0, 0.0, 9);
  for (float v : m.B.data()) EXPECT_EQ(v, 0.0f);
  const double bound = 1.0 / std::sqrt(6.0);
  for (float v : m.A.data()) EXPECT_LE(std::abs(v), bound);
  auto x = Tensor::from({1, 6}, {1, -2, 3, 0.5f, 7, -1});
  auto low = linear(linear(x, m.A), m.B);
  for (float v : low.data()) EXPECT_EQ(v, 0.0f);
}

TEST(CreateAdapter, ScaleAndErrors) {
  EXPECT_DOUBLE_EQ(create_adapter("w", 32, 32, 16, 32.0, 0.0, 1).scale(), 2.0);
  EXPECT_THROW(create_adapter("w", 4, 4, 5, 1.0, 0.0, 1), ContractError);
  EXPECT_THROW(create_adapter("w", 4, 4, 0, 1.0, 0.0, 1), ContractError);
  EXPECT_THROW(create_adapter("w", 0, 4, 1, 1.0, 0.0, 1), ContractError);
  EXPECT_THROW(create_adapter("w", 4, 4, 1, 0.0, 0.0, 1), ContractError);
  EXPECT_THROW(create_adapter("w", 4, 4, 1, 1.0, 1.0, 1), ContractError);
}

TEST(CreateAdapter, SameSeedSameBits) {
  auto a = create_adapter("w", 8, 8, 2, 1.0, 0.0, 77);
  auto b = create_adapter("w", 8, 8, 2, 1.0, 0.0, 77);
  EXPECT_TRUE(std::equal(a.A.data().begin(), a.A.data().end(), b.A.data().begin()));
}

TEST(AdaptedForward, FreshAdapterIsBaseExactly) {
  Rng rng(1);
  auto w = Tensor::uniform({5, 4}, -1, 1, rng);
  auto m = create_adapter("w", 4, 5, 2, 16.0, 0.0, 3);
  auto x = Tensor::uniform({3, 4}, -1, 1, rng);
  auto y = adapted_forward(w, m, x, false, 0);
  auto base = linear(x, w);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], base[i]);
}

TEST(AdaptedForward, PureLowRankPath) {
  LoraModule m;
  m.target_name = "w";
  m.rank = 3;
  m.alpha = 3.0;
  m.A = Tensor::eye(3);
  m.B = Tensor::eye(3);
  auto x = Tensor::from({1, 3}, {0.25f, -4, 9});
  auto y = adapted_forward(Tensor::zeros({3, 3}), m, x, false, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(AdaptedForward, MatchesDenseOracle) {
  Rng rng(2);
  auto w = Tensor::uniform({3, 3}, -1, 1, rng);
  auto m = random_module(3, 3, 2, 4.0, rng);
  auto x = Tensor::uniform({1, 3}, -1, 1, rng);
  const auto ref = dense_oracle(w, m, x);
  auto y = adapted_forward(w, m, x, false, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
}

TEST(AdaptedForward, ShapeMismatch) {
  auto m = create_adapter("w", 4, 5, 2, 1.0, 0.0, 3);
  EXPECT_THROW(adapted_forward(Tensor::zeros({4, 4}), m, Tensor::zeros({1, 4}), false, 0), ShapeError);
  EXPECT_THROW(adapted_forward(Tensor::zeros({5, 4}), m, Tensor::zeros({1, 3}), false, 0), ShapeError);
}

TEST(AdaptedForward, DropoutOnlyTouchesAdapterInput) {
  Rng rng(4);
  auto w = Tensor::uniform({4, 6}, -1, 1, rng);
  auto m = create_adapter("w", 6, 4, 2, 2.0, 0.5, 5);
  auto x = Tensor::uniform({2, 6}, -1, 1, rng);
  // Zero adapter: dropout cannot change the output.
  auto y = adapted_forward(w, m, x, true, 123);
  auto base = linear(x, w);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], base[i]);
  m.B = Tensor::uniform({4, 2}, -1, 1, rng, true);
  auto t1 = adapted_forward(w, m, x, true, 123);
  auto t2 = adapted_forward(w, m, x, true, 123);
  auto t3 = adapted_forward(w, m, x, true, 124);
  auto ev = adapted_forward(w, m, x, false, 123);
  bool differs = false;
  for (std::size_t i = 0; i < t1.numel(); ++i) {
    EXPECT_EQ(t1[i], t2[i]);
    differs |= t1[i] != t3[i] || t1[i] != ev[i];
  }
  EXPECT_TRUE(differs);
}

TEST(AdaptedForward, FreezeCorrectness) {
  Rng rng(5);
  auto w = Tensor::uniform({4, 3}, -1, 1, rng, true);
  auto m = random_module(3, 4, 2, 2.0, rng);
  auto x = Tensor::uniform({2, 3}, -1, 1, rng);
  backward(sum(adapted_forward(w, m, x, false, 0)));
  EXPECT_FALSE(w.has_grad());
  ASSERT_TRUE(m.A.has_grad());
  ASSERT_TRUE(m.B.has_grad());
  double na = 0, nb = 0;
  for (float g : m.A.grad()) na += std::abs(g);
  for (float g : m.B.grad()) nb += std::abs(g);
  EXPECT_GT(na, 0.0);
  EXPECT_GT(nb, 0.0);
}

TEST(AdaptedForward, ScaleLinearity) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_module(5, 4, 2, 1.0 + rng.below(8), rng);
    auto x = Tensor::uniform({3, 5}, -1, 1, rng);
    auto m2 = m;
    m2.alpha = 2 * m.alpha;
    const auto zero = Tensor::zeros({4, 5});
    auto one = adapted_forward(zero, m, x, false, 0);
    auto two = adapted_forward(zero, m2, x, false, 0);
    for (std::size_t i = 0; i < one.numel(); ++i) EXPECT_EQ(two[i], 2.0f * one[i]);
    // With a non-zero W the base term is subtracted back out.
    auto w = Tensor::uniform({4, 5}, -1, 1, rng);
    auto base = linear(x, w);
    auto c1 = adapted_forward(w, m, x, false, 0);
    auto c2 = adapted_forward(w, m2, x, false, 0);
    for (std::size_t i = 0; i < one.numel(); ++i) {
      EXPECT_NEAR(c2[i] - base[i], 2.0 * (c1[i] - base[i]), 1e-5);
    }
  }
}

TEST(Merge, ZeroBIsBitExact) {
  Rng rng(7);
  auto w = Tensor::uniform({4, 4}, -1, 1, rng);
  auto merged = merge(w, create_adapter("w", 4, 4, 2, 8.0, 0.0, 1));
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_EQ(merged[i], w[i]);
}

TEST(Merge, RankOneOuterProduct) {
  LoraModule m;
  m.target_name = "w";
  m.rank = 1;
  m.alpha = 1.0;
  m.A = Tensor::from({1, 2}, {1, 1});
  m.B = Tensor::from({2, 1}, {1, 1});
  auto merged = merge(Tensor::zeros({2, 2}), m);
  for (float v : merged.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Merge, EquivalentToAdaptedForward) {
  Rng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng.below(16), k = 1 + rng.below(16);
    const int r = 1 + static_cast<int>(rng.below(std::min(d, k)));
    auto w = Tensor::uniform({k, d}, -1, 1, rng);
    auto m = random_module(d, k, r, 1.0 + rng.below(32), rng);
    auto merged = merge(w, m);
    auto x = Tensor::uniform({100, d}, -1, 1, rng);
    auto a = linear(x, merged);
    auto b = adapted_forward(w, m, x, false, 0);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      EXPECT_LE(std::abs(a[i] - b[i]), 1e-5 * std::max(1.0f, std::abs(b[i])));
    }
  }
}

TEST(ParamCounts, EmptyAndTwoModules) {
  AdapterBundle empty("e");
  const auto c = param_counts(1000, empty);
  EXPECT_EQ(c.trainable, 0u);
  EXPECT_EQ(c.frozen, 1000u);
  EXPECT_EQ(c.fraction, 0.0);
  AdapterBundle two("t");
  two.add(create_adapter("a", 8, 8, 2, 1.0, 0.0, 1));
  two.add(create_adapter("b", 8, 8, 2, 1.0, 0.0, 2));
  EXPECT_EQ(param_counts(1000, two).trainable, 64u);
  EXPECT_THROW(two.add(create_adapter("a", 8, 8, 2, 1.0, 0.0, 3)), ContractError);
}

TEST(ParamCounts, FormulaMatchesDirectCount) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    AdapterBundle b("p");
    std::uint64_t direct = 0;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) {
      const long d = 1 + static_cast<long>(rng.below(40)), k = 1 + static_cast<long>(rng.below(40));
      const long r = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::min(d, k))));
      b.add(create_adapter("m" + std::to_string(i), d, k, r, 1.0, 0.0, rng.next()));
    }
    for (const auto& p : b.parameters()) direct += p.numel();
    EXPECT_EQ(param_counts(1, b).trainable, direct);
  }
}

// ---------------------------------------------------------------------------
// Attach / detach on the model

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.d_ff = 32;
  c.max_sequence_length = 32;
  c.seed = 5;
  return c;
}

std::vector<std::vector<int>> greedy_outputs(const Seq2SeqModel& m) {
  std::vector<std::vector<int>> out;
  for (const char* s : {"CCO>", "c1ccccc1>", "O=C=O>", "N#N>"}) {
    out.push_back(m.greedy_decode(tokenize(s), 12).ids);
  }
  return out;
}

TEST(Attach, AttachDetachRoundTrip) {
  Seq2SeqModel m(small_config());
  const auto before = greedy_outputs(m);
  const auto checksum = m.weight_checksum();
  auto bundle = m.make_bundle("b", m.default_lora_targets(), 2, 4.0, 0.0, 1);
  m.attach(bundle);
  EXPECT_EQ(greedy_outputs(m), before);  // fresh adapter is the identity
  m.detach("b");
  EXPECT_EQ(greedy_outputs(m), before);
  EXPECT_EQ(m.weight_checksum(), checksum);
}

TEST(Attach, TrainedThenDetachedRestoresBaseExactly) {
  Seq2SeqModel m(small_config());
  const auto before = greedy_outputs(m);
  std::vector<std::vector<float>> logits_before;
  const auto src = tokenize("CCO>"), tgt = tokenize("OCC");
  {
    NoGradGuard ng;
    auto l = m.forward_teacher_forced(src, tgt);
    logits_before.emplace_back(l.data().begin(), l.data().end());
  }
  const auto checksum = m.weight_checksum();
  auto bundle = m.make_bundle("b", m.default_lora_targets(), 2, 4.0, 0.1, 1);
  m.attach(bundle);
  m.set_training(true);
  Adam<float> opt(bundle.parameters(), 0.01);
  for (int step = 0; step < 20; ++step) {
    m.set_dropout_seed(static_cast<std::uint64_t>(step));
    opt.zero_grad();
    backward(softmax_cross_entropy(m.forward_teacher_forced(src, tgt), std::span<const int>(tgt)));
    opt.step();
  }
  m.set_training(false);
  for (const auto& w : m.parameters()) EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(m.weight_checksum(), checksum);
  m.detach("b");
  EXPECT_EQ(greedy_outputs(m), before);
  NoGradGuard ng;
  auto l = m.forward_teacher_forced(src, tgt);
  EXPECT_EQ(std::vector<float>(l.data().begin(), l.data().end()), logits_before[0]);
  // The trained bundle moved the output.
  m.attach("b");
  auto la = m.forward_teacher_forced(src, tgt);
  EXPECT_NE(std::vector<float>(la.data().begin(), la.data().end()), logits_before[0]);
}

TEST(Attach, Errors) {
  Seq2SeqModel m(small_config());
  AdapterBundle unknown("u");
  unknown.add(create_adapter("enc.9.attn.q", 16, 16, 2, 1.0, 0.0, 1));
  EXPECT_THROW(m.attach(unknown), ContractError);
  AdapterBundle wrong("w");
  wrong.add(create_adapter("enc.0.attn.q", 8, 16, 2, 1.0, 0.0, 1));
  EXPECT_THROW(m.attach(wrong), ShapeError);
  EXPECT_THROW(m.detach("nothing"), ContractError);
  auto a = m.make_bundle("a", m.default_lora_targets(), 2, 1.0, 0.0, 1);
  auto b = m.make_bundle("b", m.default_lora_targets(), 2, 1.0, 0.0, 2);
  m.attach(a);
  EXPECT_THROW(m.attach(b), ContractError);  // one active bundle at a time
  m.swap_adapter(b);
  EXPECT_EQ(m.active_adapter()->name(), "b");
  EXPECT_EQ(m.stored_adapters().size(), 2u);
  EXPECT_THROW(m.detach("a"), ContractError);
}

TEST(Attach, MergedModelMatchesAdapted) {
  Seq2SeqModel m(small_config());
  Rng rng(3);
  auto bundle = m.make_bundle("b", m.default_lora_targets(), 2, 4.0, 0.0, 1);
  for (auto& [_, mod] : bundle.modules()) {
    auto bs = mod.B.mutable_data();
    for (auto& v : bs) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  }
  const auto merged = m.merged(bundle);
  m.attach(bundle);
  NoGradGuard ng;
  const auto src = tokenize("CC(=O)O>"), tgt = tokenize("CCO");
  auto a = m.forward_teacher_forced(src, tgt);
  auto b = merged.forward_teacher_forced(src, tgt);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4 * std::max(1.0f, std::abs(a[i])));
}

TEST(AdapterFormat, RoundTripIsByteExact) {
  Seq2SeqModel m(small_config());
  auto bundle = m.make_bundle("sel", m.default_lora_targets(), 4, 8.0, 0.1, 42);
  bundle.metadata().tasks = {"fwd", "reag"};
  Rng rng(1);
  for (auto& [_, mod] : bundle.modules()) {
    for (auto& v : mod.B.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
  }
  std::stringstream first;
  save_adapter(bundle, first);
  const std::string bytes = first.str();
  std::stringstream in(bytes);
  const auto loaded = load_adapter(in);
  std::stringstream second;
  save_adapter(loaded, second);
  EXPECT_EQ(second.str(), bytes);
  EXPECT_EQ(loaded.name(), "sel");
  EXPECT_EQ(loaded.metadata().tasks, bundle.metadata().tasks);
  EXPECT_EQ(bytes.substr(0, 4), "LORB");
}

TEST(AdapterFormat, RejectsCorruption) {
  AdapterBundle b("x");
  b.add(create_adapter("w", 4, 4, 2, 1.0, 0.0, 1));
  std::stringstream ss;
  save_adapter(b, ss);
  std::string bytes = ss.str();
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream in(bad);
    EXPECT_THROW(load_adapter(in), FormatError);
  }
  {
    std::stringstream in(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_adapter(in), FormatError);
  }
  {
    std::stringstream in(bytes + "junk");
    EXPECT_THROW(load_adapter(in), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;  // version
    std::stringstream in(bad);
    EXPECT_THROW(load_adapter(in), FormatError);
  }
}

}  // namespace
}  // namespace lorachem
