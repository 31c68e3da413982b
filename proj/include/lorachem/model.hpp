// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level encoder-decoder transformer (T5-shaped): pre-norm RMS scaling,
// learned absolute positions, ReLU feed-forward, no biases. Every weight is
// addressable by a hierarchical name so adapters can target it.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorachem/beam.hpp"
#include "lorachem/binio.hpp"
#include "lorachem/error.hpp"
#include "lorachem/lora.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/tensor.hpp"
#include "lorachem/vocab.hpp"

namespace lorachem {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int d_ff = 256;
  int max_sequence_length = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_encoder_layers <= 0 || n_decoder_layers <= 0 ||
        d_ff <= 0 || max_sequence_length <= 0) {
      throw ContractError("model config fields must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ContractError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"d_ff", c.d_ff},
          {"max_sequence_length", c.max_sequence_length},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_encoder_layers = j.at("n_encoder_layers").get<int>();
  c.n_decoder_layers = j.at("n_decoder_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_sequence_length = j.at("max_sequence_length").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

template <class T>
class BasicSeq2SeqModel {
 public:
  using TensorT = BasicTensor<T>;
  using Bundle = BasicAdapterBundle<T>;

  explicit BasicSeq2SeqModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto ff = static_cast<std::size_t>(cfg_.d_ff);
    const auto len = static_cast<std::size_t>(cfg_.max_sequence_length);
    const auto v = static_cast<std::size_t>(ByteVocab::kSize);
    Rng rng(cfg_.seed);
    auto lin = [&](const std::string& name, std::size_t out, std::size_t in) {
      const double b = 1.0 / std::sqrt(static_cast<double>(in));
      add_weight(name, TensorT::uniform({out, in}, -b, b, rng, true));
    };
    auto gain = [&](const std::string& name) { add_weight(name, TensorT::full({d}, T{1}, true)); };

    add_weight("emb.tok", TensorT::uniform({v, d}, -0.5, 0.5, rng, true));
    add_weight("emb.enc_pos", TensorT::uniform({len, d}, -0.5, 0.5, rng, true));
    add_weight("emb.dec_pos", TensorT::uniform({len, d}, -0.5, 0.5, rng, true));
    for (int i = 0; i < cfg_.n_encoder_layers; ++i) {
      const std::string p = "enc." + std::to_string(i) + ".";
      gain(p + "ln_attn");
      for (const char* w : {"q", "k", "v", "o"}) lin(p + "attn." + w, d, d);
      gain(p + "ln_ff");
      lin(p + "ff.in", ff, d);
      lin(p + "ff.out", d, ff);
    }
    gain("enc.ln_final");
    for (int i = 0; i < cfg_.n_decoder_layers; ++i) {
      const std::string p = "dec." + std::to_string(i) + ".";
      gain(p + "ln_self");
      for (const char* w : {"q", "k", "v", "o"}) lin(p + "self." + w, d, d);
      gain(p + "ln_cross");
      for (const char* w : {"q", "k", "v", "o"}) lin(p + "cross." + w, d, d);
      gain(p + "ln_ff");
      lin(p + "ff.in", ff, d);
      lin(p + "ff.out", d, ff);
    }
    gain("dec.ln_final");
    lin("lm_head", v, d);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<std::string>& weight_names() const noexcept { return order_; }
  bool has_weight(const std::string& name) const { return weights_.count(name) != 0; }

  const TensorT& weight(const std::string& name) const {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ContractError("unknown weight '" + name + "'");
    return it->second;
  }

  /// Replaces a weight's values; the shape must match.
  void set_weight(const std::string& name, const TensorT& value) {
    auto& w = mutable_weight(name);
    if (w.shape() != value.shape()) {
      throw ShapeError("set_weight(" + name + "): " + shape_str(value.shape()) + " vs " +
                       shape_str(w.shape()));
    }
    auto dst = w.mutable_data();
    std::copy(value.data().begin(), value.data().end(), dst.begin());
  }

  std::vector<TensorT> parameters() const {
    std::vector<TensorT> out;
    for (const auto& n : order_) out.push_back(weights_.at(n));
    return out;
  }

  std::uint64_t parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& [_, w] : weights_) n += w.numel();
    return n;
  }

  /// FNV-1a over names and the bit patterns of every base weight.
  std::uint64_t weight_checksum() const {
    std::uint64_t h = fnv1a64("");
    for (const auto& name : order_) {
      h = fnv1a64(name, h);
      for (T x : weights_.at(name).data()) {
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&x), sizeof(T)), h);
      }
    }
    return h;
  }

  /// Query and value projections of every attention block.
  std::vector<std::string> default_lora_targets() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
      const bool attn = n.find(".attn.") != std::string::npos ||
                        n.find(".self.") != std::string::npos ||
                        n.find(".cross.") != std::string::npos;
      if (attn && (n.ends_with(".q") || n.ends_with(".v"))) out.push_back(n);
    }
    return out;
  }

  /// Fresh adapters (B = 0) for the given targets. Per-module seeds derive
  /// from `seed` and the target name.
  Bundle make_bundle(const std::string& name, const std::vector<std::string>& targets, int r,
                     double alpha, double dropout_p, std::uint64_t seed) const {
    Bundle b(name, AdapterMetadata{seed, {}});
    for (const auto& t : targets) {
      const auto& w = weight(t);
      if (w.rank() != 2) throw ContractError("adapter target '" + t + "' is not a matrix");
      b.add(create_adapter<T>(t, static_cast<long>(w.cols()), static_cast<long>(w.rows()), r,
                              alpha, dropout_p, counter_hash(seed, fnv1a64(t))));
    }
    return b;
  }

  // -------------------------------------------------------------------------
  // Adapter routing

  /// Stores `bundle`, makes it the active one and freezes every base weight.
  /// Tensors are shared with the caller's copy, so training through the
  /// model updates the caller's bundle.
  void attach(const Bundle& bundle) {
    if (active_ && *active_ != bundle.name()) {
      throw ContractError("bundle '" + *active_ + "' is active; detach it before attaching '" +
                          bundle.name() + "'");
    }
    validate(bundle);
    stored_.insert_or_assign(bundle.name(), bundle);
    if (!active_) {
      frozen_flags_.clear();
      for (auto& [n, w] : weights_) {
        frozen_flags_[n] = w.requires_grad();
        w.set_requires_grad(false);
      }
    }
    active_ = bundle.name();
  }

  /// Re-activates a previously stored bundle.
  void attach(const std::string& name) {
    auto it = stored_.find(name);
    if (it == stored_.end()) throw ContractError("no stored bundle named '" + name + "'");
    attach(Bundle(it->second));
  }

  void detach(const std::string& name) {
    if (!active_ || *active_ != name) {
      throw ContractError("bundle '" + name + "' is not attached");
    }
    for (auto& [n, w] : weights_) w.set_requires_grad(frozen_flags_.at(n));
    active_.reset();
  }

  /// Detach-then-attach as one step: validated before anything changes.
  void swap_adapter(const Bundle& next) {
    validate(next);
    if (active_) detach(*active_);
    attach(next);
  }

  const Bundle* active_adapter() const {
    return active_ ? &stored_.at(*active_) : nullptr;
  }
  const std::map<std::string, Bundle>& stored_adapters() const noexcept { return stored_; }

  /// LoRA dropout is the only stochastic layer; it is active only in
  /// training mode and seeded per forward call.
  void set_training(bool on) noexcept { training_ = on; }
  bool training() const noexcept { return training_; }
  void set_dropout_seed(std::uint64_t seed) noexcept { dropout_seed_ = seed; }

  /// Deep copy of the base weights (no adapters, same requires_grad flags
  /// as an unadapted model).
  BasicSeq2SeqModel clone() const {
    BasicSeq2SeqModel m(cfg_, Uninitialised{});
    for (const auto& n : order_) {
      const auto& w = weights_.at(n);
      const bool rg = active_ ? frozen_flags_.at(n) : w.requires_grad();
      m.add_weight(n, w.clone(rg));
    }
    return m;
  }

  /// Copy whose weights have `bundle` folded in: W + (alpha/r) B A.
  BasicSeq2SeqModel merged(const Bundle& bundle) const {
    validate(bundle);
    auto m = clone();
    for (const auto& [t, mod] : bundle.modules()) {
      m.set_weight(t, merge(weights_.at(t), mod));
    }
    return m;
  }

  // -------------------------------------------------------------------------
  // Forward

  /// Encoder states [|src| x d_model].
  TensorT encode(std::span<const int> src) const {
    check_length(src.size(), "source");
    auto pos = positions(src.size());
    auto x = add(embedding(weights_.at("emb.tok"), src), embedding(weights_.at("emb.enc_pos"), pos));
    for (int i = 0; i < cfg_.n_encoder_layers; ++i) {
      const std::string p = "enc." + std::to_string(i) + ".";
      auto h = rms_norm(x, weights_.at(p + "ln_attn"));
      x = add(x, attention(h, h, p + "attn.", false));
      h = rms_norm(x, weights_.at(p + "ln_ff"));
      x = add(x, feed_forward(h, p + "ff."));
    }
    return rms_norm(x, weights_.at("enc.ln_final"));
  }

  /// Final decoder states [|dec_input| x d_model] given encoder memory.
  TensorT decode_hidden(const TensorT& memory, std::span<const int> dec_input) const {
    check_length(dec_input.size(), "decoder input");
    auto pos = positions(dec_input.size());
    auto y = add(embedding(weights_.at("emb.tok"), dec_input),
                 embedding(weights_.at("emb.dec_pos"), pos));
    for (int i = 0; i < cfg_.n_decoder_layers; ++i) {
      const std::string p = "dec." + std::to_string(i) + ".";
      auto h = rms_norm(y, weights_.at(p + "ln_self"));
      y = add(y, attention(h, h, p + "self.", true));
      h = rms_norm(y, weights_.at(p + "ln_cross"));
      y = add(y, attention(h, memory, p + "cross.", false));
      h = rms_norm(y, weights_.at(p + "ln_ff"));
      y = add(y, feed_forward(h, p + "ff."));
    }
    return rms_norm(y, weights_.at("dec.ln_final"));
  }

  TensorT logits(const TensorT& hidden) const { return project(hidden, "lm_head"); }

  /// Decoder input for teacher forcing: PAD followed by tgt without its last id.
  static std::vector<int> shift_right(std::span<const int> tgt) {
    std::vector<int> in;
    in.reserve(tgt.size());
    in.push_back(ByteVocab::kPad);
    if (!tgt.empty()) in.insert(in.end(), tgt.begin(), tgt.end() - 1);
    return in;
  }

  /// Logits [|tgt| x vocab]; row t scores tgt[t] given src and tgt[< t].
  TensorT forward_teacher_forced(std::span<const int> src, std::span<const int> tgt) const {
    if (tgt.empty()) throw ContractError("forward_teacher_forced: empty target");
    check_length(tgt.size(), "target");
    const auto memory = encode(src);
    const auto in = shift_right(tgt);
    return logits(decode_hidden(memory, in));
  }

  /// log p(next | src, prefix) over the vocabulary.
  std::vector<double> next_token_log_probs(const TensorT& memory,
                                           const std::vector<int>& prefix) const {
    NoGradGuard no_grad;
    std::vector<int> in;
    in.reserve(prefix.size() + 1);
    in.push_back(ByteVocab::kPad);
    in.insert(in.end(), prefix.begin(), prefix.end());
    const auto hidden = decode_hidden(memory, in);
    const auto d = hidden.cols();
    auto last = TensorT::from({1, d}, std::vector<T>(hidden.data().end() - static_cast<std::ptrdiff_t>(d),
                                                     hidden.data().end()));
    const auto row = logits(last);
    return log_softmax<T>(row.data());
  }

  /// Beam search over generated ids; max_len also capped by the model's
  /// max_sequence_length. PAD is never generated.
  std::vector<Hypothesis> beam_decode(std::span<const int> src, int beam_width,
                                      int max_len = 256) const {
    NoGradGuard no_grad;
    const auto memory = encode(src);
    DecodeOptions opt;
    opt.beam_width = beam_width;
    opt.max_len = std::min(max_len, cfg_.max_sequence_length);
    opt.eos = ByteVocab::kEos;
    opt.banned = {ByteVocab::kPad};
    return beam_search([&](const std::vector<int>& prefix) { return next_token_log_probs(memory, prefix); },
                       opt);
  }

  Hypothesis greedy_decode(std::span<const int> src, int max_len = 256) const {
    NoGradGuard no_grad;
    const auto memory = encode(src);
    DecodeOptions opt;
    opt.max_len = std::min(max_len, cfg_.max_sequence_length);
    opt.eos = ByteVocab::kEos;
    opt.banned = {ByteVocab::kPad};
    return lorachem::greedy_decode(
        [&](const std::vector<int>& prefix) { return next_token_log_probs(memory, prefix); }, opt);
  }

 private:
  struct Uninitialised {};
  BasicSeq2SeqModel(ModelConfig cfg, Uninitialised) : cfg_(cfg) {}

  void add_weight(const std::string& name, TensorT w) {
    if (!weights_.emplace(name, std::move(w)).second) {
      throw ContractError("duplicate weight name '" + name + "'");
    }
    order_.push_back(name);
  }

  TensorT& mutable_weight(const std::string& name) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ContractError("unknown weight '" + name + "'");
    return it->second;
  }

  void validate(const Bundle& bundle) const {
    for (const auto& [t, m] : bundle.modules()) {
      auto it = weights_.find(t);
      if (it == weights_.end()) {
        throw ContractError("bundle '" + bundle.name() + "' targets unknown weight '" + t + "'");
      }
      detail::check_adapter_shapes(it->second, m);
    }
  }

  void check_length(std::size_t n, const char* what) const {
    if (n == 0) throw ContractError(std::string(what) + " sequence is empty");
    if (n > static_cast<std::size_t>(cfg_.max_sequence_length)) {
      throw LengthError(std::string(what) + " of length " + std::to_string(n) +
                        " exceeds max_sequence_length " +
                        std::to_string(cfg_.max_sequence_length));
    }
  }

  static std::vector<int> positions(std::size_t n) {
    std::vector<int> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
    return p;
  }

  TensorT project(const TensorT& x, const std::string& name) const {
    const auto& w = weights_.at(name);
    if (active_) {
      if (const auto* m = stored_.at(*active_).find(name)) {
        return adapted_forward(w, *m, x, training_, counter_hash(dropout_seed_, fnv1a64(name)));
      }
    }
    return linear(x, w);
  }

  TensorT attention(const TensorT& xq, const TensorT& xkv, const std::string& p,
                    bool causal) const {
    const auto q = project(xq, p + "q");
    const auto k = project(xkv, p + "k");
    const auto v = project(xkv, p + "v");
    const auto dh = static_cast<std::size_t>(cfg_.d_model / cfg_.n_heads);
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<TensorT> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (std::size_t h = 0; h < static_cast<std::size_t>(cfg_.n_heads); ++h) {
      const auto qh = slice_cols(q, h * dh, dh);
      const auto kh = slice_cols(k, h * dh, dh);
      const auto vh = slice_cols(v, h * dh, dh);
      const auto probs = softmax_rows(scale(matmul_nt(qh, kh), s), causal);
      heads.push_back(matmul(probs, vh));
    }
    return project(heads.size() == 1 ? heads[0] : concat_cols(heads), p + "o");
  }

  TensorT feed_forward(const TensorT& x, const std::string& p) const {
    return project(relu(project(x, p + "in")), p + "out");
  }

  ModelConfig cfg_;
  std::map<std::string, TensorT> weights_;
  std::vector<std::string> order_;
  std::map<std::string, Bundle> stored_;
  std::optional<std::string> active_;
  std::map<std::string, bool> frozen_flags_;
  bool training_ = false;
  std::uint64_t dropout_seed_ = 0;
};

using Seq2SeqModel = BasicSeq2SeqModel<float>;

// ---------------------------------------------------------------------------
// BMDL checkpoint format

inline constexpr std::string_view kModelMagic = "BMDL";
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const Seq2SeqModel& m, std::ostream& os) {
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& n : m.weight_names()) {
    weights.push_back({{"name", n}, {"shape", m.weight(n).shape()}});
  }
  binio::write_header(os, kModelMagic, kModelVersion,
                      {{"config", to_json(m.config())}, {"weights", std::move(weights)}});
  for (const auto& n : m.weight_names()) binio::write_floats(os, m.weight(n).data());
  if (!os) throw FormatError("failed writing model");
}

inline Seq2SeqModel load_model(std::istream& is) {
  const auto h = binio::read_header(is, kModelMagic, kModelVersion);
  try {
    Seq2SeqModel m(model_config_from_json(h.at("config")));
    const auto& ws = h.at("weights");
    if (ws.size() != m.weight_names().size()) {
      throw FormatError("checkpoint lists " + std::to_string(ws.size()) + " weights, model has " +
                        std::to_string(m.weight_names().size()));
    }
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const auto name = ws[i].at("name").get<std::string>();
      const auto shape = ws[i].at("shape").get<Shape>();
      if (name != m.weight_names()[i] || shape != m.weight(name).shape()) {
        throw FormatError("checkpoint weight " + std::to_string(i) + " ('" + name +
                          "') does not match the model layout");
      }
      std::vector<float> values(shape_numel(shape));
      binio::read_floats(is, values);
      m.set_weight(name, Tensor::from(shape, std::move(values)));
    }
    binio::expect_eof(is);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
}

inline void save_model(const Seq2SeqModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  save_model(m, os);
}

inline Seq2SeqModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return load_model(is);
}

}  // namespace lorachem
