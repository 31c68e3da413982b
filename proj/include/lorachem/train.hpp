// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher-forced training: full fine-tuning of every base weight, or LoRA
// training of the attached bundle with the base frozen.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorachem/dataset.hpp"
#include "lorachem/error.hpp"
#include "lorachem/model.hpp"
#include "lorachem/optim.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/vocab.hpp"

namespace lorachem {

enum class TrainMode { full, lora };

inline std::string_view mode_name(TrainMode m) { return m == TrainMode::full ? "full" : "lora"; }

inline TrainMode parse_mode(std::string_view s) {
  if (s == "full") return TrainMode::full;
  if (s == "lora") return TrainMode::lora;
  throw ContractError("unknown mode '" + std::string(s) + "' (expected full or lora)");
}

struct LoraHyper {
  int r = 16;
  double alpha = 32.0;
  double dropout_p = 0.0;
  std::vector<std::string> targets;  // empty: the model's default targets
};

struct TrainConfig {
  TrainMode mode = TrainMode::full;
  std::set<Task> tasks = {Task::fwd};
  bool multi_task = false;
  double lr = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::optional<LoraHyper> lora;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("lr must be finite and >= 0");
    if (epochs < 1) throw ContractError("epochs must be >= 1");
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (tasks.empty()) throw ContractError("no tasks selected");
    if ((mode == TrainMode::lora) != lora.has_value()) {
      throw ContractError("LoRA hyperparameters must be given exactly when mode is lora");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (Task t : c.tasks) tasks.push_back(task_name(t));
  nlohmann::json j = {{"mode", mode_name(c.mode)}, {"tasks", tasks},          {"multi_task", c.multi_task},
                      {"lr", c.lr},                {"epochs", c.epochs},      {"batch_size", c.batch_size},
                      {"seed", c.seed}};
  if (c.lora) {
    j["lora"] = {{"r", c.lora->r},
                 {"alpha", c.lora->alpha},
                 {"dropout_p", c.lora->dropout_p},
                 {"targets", c.lora->targets}};
  }
  return j;
}

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;  // token-weighted over the epoch
  std::size_t steps = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;

  double final_loss() const { return epochs.empty() ? NAN : epochs.back().mean_loss; }
};

inline nlohmann::json to_json(const TrainLog& log) {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : log.epochs) ep.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"steps", e.steps}});
  return {{"epochs", ep}, {"checksum_before", log.checksum_before}, {"checksum_after", log.checksum_after}};
}

/// One pass of Adam per batch. Each example is run separately and its mean
/// token loss is weighted by its share of the batch's target tokens, which
/// gives the same gradient as a padded batch with PAD positions ignored.
/// Optional `on_epoch` sees each epoch's log as it completes.
inline TrainLog train(Seq2SeqModel& model, const std::vector<TaskExample>& data, const TrainConfig& cfg,
                      const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: no examples");
  const auto* bundle = model.active_adapter();
  if (cfg.mode == TrainMode::lora && !bundle) throw ContractError("lora mode needs an attached adapter bundle");
  if (cfg.mode == TrainMode::full && bundle) {
    throw ContractError("full mode needs a model without an attached bundle (detach '" + bundle->name() + "')");
  }

  struct Encoded {
    std::vector<int> src, tgt;
  };
  std::vector<Encoded> enc;
  enc.reserve(data.size());
  for (const auto& ex : data) enc.push_back({tokenize(ex.input_text), tokenize(ex.target_text)});

  TrainLog log;
  log.checksum_before = model.weight_checksum();
  Adam<float> opt(cfg.mode == TrainMode::lora ? bundle->parameters() : model.parameters(), cfg.lr);
  model.set_training(true);
  std::vector<std::size_t> order(enc.size());
  std::uint64_t example_counter = 0;
  try {
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(counter_hash(cfg.seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
      double epoch_loss = 0.0;
      std::size_t epoch_tokens = 0, steps = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::size_t batch_tokens = 0;
        for (std::size_t b = start; b < end; ++b) batch_tokens += enc[order[b]].tgt.size();
        opt.zero_grad();
        for (std::size_t b = start; b < end; ++b) {
          const auto& e = enc[order[b]];
          model.set_dropout_seed(counter_hash(cfg.seed ^ 0x5EEDULL, example_counter++));
          const auto loss = softmax_cross_entropy(model.forward_teacher_forced(e.src, e.tgt),
                                                  std::span<const int>(e.tgt));
          const double value = loss.item();
          if (!std::isfinite(value)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(steps + 1) + " (example '" + data[order[b]].record_id + "')");
          }
          const double share = static_cast<double>(e.tgt.size()) / static_cast<double>(batch_tokens);
          backward(scale(loss, share));
          epoch_loss += value * static_cast<double>(e.tgt.size());
        }
        epoch_tokens += batch_tokens;
        opt.step();
        ++steps;
      }
      EpochLog el{epoch, epoch_loss / static_cast<double>(epoch_tokens), steps};
      log.epochs.push_back(el);
      if (on_epoch) on_epoch(el);
    }
  } catch (...) {
    model.set_training(false);
    throw;
  }
  model.set_training(false);
  log.checksum_after = model.weight_checksum();
  if (cfg.mode == TrainMode::lora && log.checksum_after != log.checksum_before) {
    throw ContractError("frozen base weights changed during LoRA training");
  }
  return log;
}

}  // namespace lorachem
