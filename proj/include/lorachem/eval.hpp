// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acc@K evaluation, the four-condition forgetting report and the
// out-of-distribution reagent analysis.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lorachem/dataset.hpp"
#include "lorachem/error.hpp"
#include "lorachem/fingerprint.hpp"
#include "lorachem/model.hpp"
#include "lorachem/reaction.hpp"
#include "lorachem/smiles.hpp"
#include "lorachem/vocab.hpp"

namespace lorachem {

/// JSON text with invalid UTF-8 (raw decoded bytes) replaced by U+FFFD.
inline std::string dump_json(const nlohmann::json& j, int indent = -1) {
  return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string trim_trailing(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' || s.back() == '\r')) {
    s.pop_back();
  }
  return s;
}

struct EvalOptions {
  std::vector<int> ks = {1, 2, 3, 5};
  int beam_width = 8;
  int max_len = 256;
};

struct Prediction {
  std::string text;
  double log_prob = 0.0;
  bool finished = true;

  bool operator==(const Prediction&) const = default;
};

struct ExampleResult {
  std::string record_id;
  std::string class_label;
  std::string task;
  std::string target;
  std::vector<Prediction> predictions;  // best first, up to max(ks)
  std::optional<int> hit_rank;           // 1-based rank of the gold string

  bool operator==(const ExampleResult&) const = default;
};

struct EvalReport {
  std::string dataset;
  std::vector<int> ks;
  std::map<int, double> accuracy;  // K -> percent
  std::vector<ExampleResult> examples;
};

/// 1-based rank of the first prediction equal to `target` after trailing
/// whitespace is trimmed from both.
inline std::optional<int> hit_rank(const std::string& target, const std::vector<Prediction>& predictions) {
  const auto gold = trim_trailing(target);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (trim_trailing(predictions[i].text) == gold) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

/// Percent of `examples` whose gold string is within the top K.
inline std::map<int, double> acc_at_k(const std::vector<const ExampleResult*>& examples, const std::vector<int>& ks) {
  std::map<int, double> out;
  for (int k : ks) {
    std::size_t hits = 0;
    for (const auto* e : examples) hits += e->hit_rank && *e->hit_rank <= k ? 1 : 0;
    out[k] = examples.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(examples.size());
  }
  return out;
}

/// Acc@K per class_label plus an "all" row.
inline std::map<std::string, std::map<int, double>> accuracy_by_class(const EvalReport& r) {
  std::map<std::string, std::vector<const ExampleResult*>> groups;
  for (const auto& e : r.examples) {
    groups[e.class_label].push_back(&e);
    groups["all"].push_back(&e);
  }
  std::map<std::string, std::map<int, double>> out;
  for (const auto& [label, members] : groups) out[label] = acc_at_k(members, r.ks);
  return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, v] : r.accuracy) acc["acc@" + std::to_string(k)] = v;
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& e : r.examples) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : e.predictions) {
      preds.push_back({{"text", p.text}, {"log_prob", p.log_prob}, {"finished", p.finished}});
    }
    examples.push_back({{"record_id", e.record_id},
                        {"class_label", e.class_label},
                        {"task", e.task},
                        {"target", e.target},
                        {"hit_rank", e.hit_rank ? nlohmann::json(*e.hit_rank) : nlohmann::json(nullptr)},
                        {"predictions", preds}});
  }
  nlohmann::json by_class = nlohmann::json::object();
  for (const auto& [label, m] : accuracy_by_class(r)) {
    for (const auto& [k, v] : m) by_class[label]["acc@" + std::to_string(k)] = v;
  }
  return {{"dataset", r.dataset}, {"ks", r.ks}, {"total", r.examples.size()}, {"accuracy", acc},
          {"accuracy_by_class", by_class}, {"examples", examples}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.ks = j.at("ks").get<std::vector<int>>();
    for (const auto& [key, v] : j.at("accuracy").items()) r.accuracy[std::stoi(key.substr(4))] = v.get<double>();
    for (const auto& ej : j.at("examples")) {
      ExampleResult e;
      e.record_id = ej.at("record_id").get<std::string>();
      e.class_label = ej.at("class_label").get<std::string>();
      e.task = ej.at("task").get<std::string>();
      e.target = ej.at("target").get<std::string>();
      if (!ej.at("hit_rank").is_null()) e.hit_rank = ej.at("hit_rank").get<int>();
      for (const auto& pj : ej.at("predictions")) {
        e.predictions.push_back({pj.at("text").get<std::string>(), pj.at("log_prob").get<double>(),
                                 pj.at("finished").get<bool>()});
      }
      r.examples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

/// Beam-decodes every example and scores exact string matches against the
/// top K candidates for each K in `opt.ks`.
inline EvalReport evaluate_acc_at_k(const Seq2SeqModel& model, const std::vector<TaskExample>& data,
                                    const EvalOptions& opt = {}, std::string dataset = "") {
  if (data.empty()) throw DataError("evaluate: empty dataset" + (dataset.empty() ? "" : " '" + dataset + "'"));
  if (opt.ks.empty()) throw ContractError("evaluate: no K values");
  const int max_k = *std::max_element(opt.ks.begin(), opt.ks.end());
  if (*std::min_element(opt.ks.begin(), opt.ks.end()) < 1) throw ContractError("evaluate: K must be >= 1");
  if (opt.beam_width < max_k) {
    throw ContractError("beam width " + std::to_string(opt.beam_width) + " is smaller than max K " +
                        std::to_string(max_k));
  }
  EvalReport r;
  r.dataset = std::move(dataset);
  r.ks = opt.ks;
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  r.examples.reserve(data.size());
  for (const auto& ex : data) {
    ExampleResult e;
    e.record_id = ex.record_id;
    e.class_label = ex.class_label.value_or("unlabelled");
    e.task = std::string(task_name(ex.task));
    e.target = trim_trailing(ex.target_text);
    const auto src = tokenize(ex.input_text);
    const auto hyps = model.beam_decode(src, opt.beam_width, opt.max_len);
    for (std::size_t i = 0; i < hyps.size() && i < static_cast<std::size_t>(max_k); ++i) {
      e.predictions.push_back({trim_trailing(detokenize(hyps[i].ids).text), hyps[i].log_prob, hyps[i].finished});
    }
    e.hit_rank = hit_rank(e.target, e.predictions);
    r.examples.push_back(std::move(e));
  }
  std::vector<const ExampleResult*> all;
  for (const auto& e : r.examples) all.push_back(&e);
  r.accuracy = acc_at_k(all, r.ks);
  return r;
}

// ---------------------------------------------------------------------------
// Forgetting

inline constexpr std::array<std::string_view, 4> kForgettingConditions = {"before", "full_ft", "lora_attached",
                                                                         "lora_detached"};

struct ForgettingReport {
  std::vector<int> ks;
  std::map<std::string, EvalReport> reports;  // condition -> report
  // class -> condition -> K -> percent
  std::map<std::string, std::map<std::string, std::map<int, double>>> table;
  std::vector<std::string> defects;

  double acc(const std::string& cls, std::string_view condition, int k) const {
    return table.at(cls).at(std::string(condition)).at(k);
  }
};

/// Evaluates `general` under four conditions: the base model, the fully
/// fine-tuned model, the base with `bundle` attached, and the base after
/// detaching it again. The detached condition must reproduce the base
/// predictions bit for bit; any difference is listed as a defect.
inline ForgettingReport forgetting_report(const Seq2SeqModel& base, const Seq2SeqModel& full_ft,
                                          const AdapterBundle& bundle, const std::vector<TaskExample>& general,
                                          const EvalOptions& opt = {}) {
  if (!(full_ft.config() == base.config())) throw ContractError("forgetting: base and full-FT configs differ");
  if (base.active_adapter() || full_ft.active_adapter()) {
    throw ContractError("forgetting: base and full-FT models must have no attached bundle");
  }
  auto adapted = base.clone();
  try {
    adapted.attach(bundle);
  } catch (const ShapeError& e) {
    throw ContractError(std::string("forgetting: bundle does not fit the base model: ") + e.what());
  }
  adapted.detach(bundle.name());
  ForgettingReport fr;
  fr.reports["before"] = evaluate_acc_at_k(base, general, opt, "before");
  fr.reports["full_ft"] = evaluate_acc_at_k(full_ft, general, opt, "full_ft");
  adapted.attach(bundle.name());
  fr.reports["lora_attached"] = evaluate_acc_at_k(adapted, general, opt, "lora_attached");
  adapted.detach(bundle.name());
  fr.reports["lora_detached"] = evaluate_acc_at_k(adapted, general, opt, "lora_detached");
  fr.ks = fr.reports["before"].ks;

  for (const auto& c : kForgettingConditions) {
    for (const auto& [cls, m] : accuracy_by_class(fr.reports.at(std::string(c)))) fr.table[cls][std::string(c)] = m;
  }
  const auto& before = fr.reports["before"].examples;
  const auto& detached = fr.reports["lora_detached"].examples;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (!(before[i] == detached[i])) {
      fr.defects.push_back("detached predictions differ from base on example '" + before[i].record_id + "'");
    }
  }
  return fr;
}

inline nlohmann::json to_json(const ForgettingReport& fr) {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [cls, conds] : fr.table) {
    for (const auto& [c, m] : conds) {
      for (const auto& [k, v] : m) table[cls][c]["acc@" + std::to_string(k)] = v;
    }
  }
  return {{"ks", fr.ks},
          {"conditions", kForgettingConditions},
          {"table", table},
          {"detached_equals_before", fr.defects.empty()},
          {"defects", fr.defects}};
}

// ---------------------------------------------------------------------------
// Out-of-distribution reagents

inline constexpr int kTanimotoBins = 10;

/// 0.1-wide bin index; 1.0 lands in the last bin.
inline int tanimoto_bin(double t) {
  return std::clamp(static_cast<int>(std::floor(t * kTanimotoBins + 1e-9)), 0, kTanimotoBins - 1);
}

struct OodEntry {
  std::string smiles;
  std::string key;
  std::string source_model;
  int rank = 0;  // best rank at which this reagent was proposed
  std::string record_id;
  double max_tanimoto = 0.0;  // against task-training reagents
};

struct UnparseablePrediction {
  std::string source_model;
  std::string record_id;
  int rank = 0;
  std::string fragment;
  std::string error;
};

struct OodReport {
  std::vector<OodEntry> entries;
  std::vector<UnparseablePrediction> unparseable;
  std::array<std::size_t, kTanimotoBins> histogram{};
  std::size_t fragments_seen = 0;
  std::size_t in_distribution = 0;
};

struct OodSource {
  std::string name;
  const EvalReport* report = nullptr;
};

struct ReagentSet {
  std::set<std::string> keys;
  std::vector<Fingerprint> fingerprints;
};

inline ReagentSet reagent_set(const std::vector<std::string>& smiles, const char* what) {
  ReagentSet s;
  for (const auto& smi : smiles) {
    MolGraph g;
    try {
      g = parse_smiles(smi);
    } catch (const SmilesError& e) {
      throw DataError(std::string(what) + " reagent '" + smi + "' does not parse: " + e.what());
    }
    if (s.keys.insert(molecule_key(g)).second) s.fingerprints.push_back(fingerprint(g));
  }
  return s;
}

/// Reagents proposed in the top `top_k` predictions of each REAG report that
/// are structurally absent from both training sets. Each (source, molecule)
/// pair is listed once, at its best rank.
inline OodReport ood_reagents(const std::vector<OodSource>& sources, const std::vector<std::string>& task_train_reagents,
                              const std::vector<std::string>& general_train_reagents, int top_k = 5) {
  const auto task_set = reagent_set(task_train_reagents, "task-training");
  const auto general_set = reagent_set(general_train_reagents, "general-training");
  OodReport out;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;  // (source, key) -> entry index
  for (const auto& src : sources) {
    for (const auto& ex : src.report->examples) {
      if (ex.task != task_name(Task::reag)) continue;
      for (std::size_t i = 0; i < ex.predictions.size() && i < static_cast<std::size_t>(top_k); ++i) {
        const int rank = static_cast<int>(i) + 1;
        for (const auto& frag : split_fragments(ex.predictions[i].text)) {
          ++out.fragments_seen;
          MolGraph g;
          try {
            if (frag.empty()) throw SmilesError("empty fragment", 0);
            g = parse_smiles(frag);
          } catch (const SmilesError& e) {
            out.unparseable.push_back({src.name, ex.record_id, rank, frag, e.what()});
            continue;
          }
          auto key = molecule_key(g);
          if (task_set.keys.count(key) || general_set.keys.count(key)) {
            ++out.in_distribution;
            continue;
          }
          const auto id = std::make_pair(src.name, key);
          if (auto it = seen.find(id); it != seen.end()) {
            auto& e = out.entries[it->second];
            if (rank < e.rank) {
              e.rank = rank;
              e.smiles = frag;
              e.record_id = ex.record_id;
            }
            continue;
          }
          const auto fp = fingerprint(g);
          double best = 0.0;
          for (const auto& t : task_set.fingerprints) best = std::max(best, tanimoto(fp, t));
          seen.emplace(id, out.entries.size());
          out.entries.push_back({frag, std::move(key), src.name, rank, ex.record_id, best});
        }
      }
    }
  }
  for (const auto& e : out.entries) {
    if (task_set.keys.count(e.key) || general_set.keys.count(e.key)) {
      throw ContractError("OOD list contains training reagent '" + e.smiles + "'");
    }
    ++out.histogram[static_cast<std::size_t>(tanimoto_bin(e.max_tanimoto))];
  }
  return out;
}

inline std::string histogram_csv(const OodReport& r) {
  std::string out = "bin_start,bin_end,count\n";
  char buf[64];
  for (int b = 0; b < kTanimotoBins; ++b) {
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%zu\n", b / 10.0, (b + 1) / 10.0,
                  r.histogram[static_cast<std::size_t>(b)]);
    out += buf;
  }
  return out;
}

inline nlohmann::json to_json(const OodReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"smiles", e.smiles},
                       {"source_model", e.source_model},
                       {"rank", e.rank},
                       {"record_id", e.record_id},
                       {"max_tanimoto", e.max_tanimoto}});
  }
  nlohmann::json bad = nlohmann::json::array();
  for (const auto& u : r.unparseable) {
    bad.push_back({{"source_model", u.source_model},
                   {"record_id", u.record_id},
                   {"rank", u.rank},
                   {"fragment", u.fragment},
                   {"error", u.error}});
  }
  nlohmann::json hist = nlohmann::json::array();
  for (int b = 0; b < kTanimotoBins; ++b) {
    hist.push_back({{"bin_start", b / 10.0}, {"bin_end", (b + 1) / 10.0}, {"count", r.histogram[static_cast<std::size_t>(b)]}});
  }
  return {{"ood", entries},
          {"unparseable_count", r.unparseable.size()},
          {"unparseable", bad},
          {"fragments_seen", r.fragments_seen},
          {"in_distribution", r.in_distribution},
          {"histogram", hist}};
}

}  // namespace lorachem
