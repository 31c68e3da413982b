// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. dispatch() maps errors to exit codes:
// 0 success, 1 usage, 2 data, 3 numeric.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lorachem/dataset.hpp"
#include "lorachem/error.hpp"
#include "lorachem/eval.hpp"
#include "lorachem/lora.hpp"
#include "lorachem/model.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/stats.hpp"
#include "lorachem/synthetic.hpp"
#include "lorachem/train.hpp"

namespace lorachem::cli {

inline constexpr std::string_view kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace fs = std::filesystem;

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline std::uint64_t default_seed() {
  const char* env = std::getenv("LORACHEM_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ContractError(std::string("LORACHEM_SEED is not an integer: '") + env + "'");
  return v;
}

/// Reproducibility record written next to every output set.
class Manifest {
 public:
  Manifest(std::string command, const CLI::App& sub, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)) {
    for (const auto* opt : sub.get_options()) {
      const auto& name = opt->get_single_name();
      if (name.empty() || name == "help") continue;
      if (opt->get_items_expected_max() == 0) {  // bare flag
        flags_[name] = opt->count() > 0;
      } else if (opt->count() == 0) {
        flags_[name] = opt->get_default_str();
      } else if (opt->results().size() == 1) {
        flags_[name] = opt->results()[0];
      } else {
        flags_[name] = opt->results();
      }
    }
  }

  void input(const std::string& path) {
    inputs_.push_back({{"path", path}, {"fnv1a64", std::to_string(fnv1a64(read_file(path)))}});
  }
  void output(const fs::path& path) {
    outputs_.push_back({{"path", path.filename().string()}, {"fnv1a64", std::to_string(fnv1a64(read_file(path.string())))}});
  }
  void seed(const std::string& name, std::uint64_t v) { seeds_[name] = v; }
  void note(const std::string& key, nlohmann::json v) { extra_[key] = std::move(v); }

  void write(const fs::path& dir) const {
    nlohmann::json j = {{"command", command_}, {"argv", argv_},     {"flags", flags_},  {"seeds", seeds_},
                        {"inputs", inputs_},   {"outputs", outputs_}, {"version", kVersion}};
    if (!extra_.empty()) j["extra"] = extra_;
    write_file(dir / "manifest.json", dump_json(j, 2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json flags_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json extra_ = nlohmann::json::object();
};

/// Output directory plus the files written into it, in order.
class Outputs {
 public:
  explicit Outputs(const std::string& dir) : dir_(dir) {
    if (dir.empty()) throw ContractError("--out is required");
    fs::create_directories(dir_);
  }
  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    write_file(p, text);
    written_.push_back(p);
    return p;
  }
  fs::path reserve(const std::string& name) {
    written_.push_back(dir_ / name);
    return dir_ / name;
  }
  void finish(Manifest& m) const {
    for (const auto& p : written_) m.output(p);
    m.write(dir_);
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

inline std::vector<ReactionRecord> load_records(const std::string& path, Manifest& m, bool strict = true) {
  m.input(path);
  auto res = load_dataset(path, std::nullopt, strict);
  for (const auto& e : res.errors) std::cerr << path << ": row " << e.row << ": " << e.message << "\n";
  return std::move(res.records);
}

inline std::vector<TaskExample> load_examples(const std::string& path, const std::string& tasks, bool multi_task,
                                              Manifest& m) {
  const auto records = load_records(path, m);
  if (records.empty()) throw DataError(path + ": no records");
  std::size_t skipped = 0;
  auto ex = format_tasks(records, parse_tasks(tasks), multi_task, &skipped);
  if (skipped) std::cerr << path << ": skipped REAG for " << skipped << " record(s) without reagents\n";
  return ex;
}

inline std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ContractError("bad K list '" + s + "'");
    }
  }
  if (out.empty()) throw ContractError("empty K list");
  return out;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Shared {
  std::string out;
  std::uint64_t seed = 0;
  std::string tasks = "fwd";
  bool multi_task = false;
};

inline void add_task_flags(CLI::App* sub, Shared& s) {
  sub->add_option("--tasks", s.tasks, "comma-separated subset of fwd,retro,reag")->capture_default_str();
  sub->add_flag("--multi-task", s.multi_task, "prefix inputs with their task marker");
}

inline void add_seed_flag(CLI::App* sub, Shared& s) {
  sub->add_option("--seed", s.seed, "seed (default: $LORACHEM_SEED or 0)")->capture_default_str();
}

struct TrainFlags {
  double lr = 1e-3;
  int epochs = 10;
  int batch_size = 8;
};

inline void add_train_flags(CLI::App* sub, TrainFlags& t) {
  sub->add_option("--lr", t.lr, "learning rate")->capture_default_str();
  sub->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
  sub->add_option("--batch-size", t.batch_size, "examples per optimizer step")->capture_default_str();
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"lorachem: LoRA fine-tuning of a byte-level reaction seq2seq model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);  // argv[0] varies by install
  Shared sh;
  try {
    sh.seed = default_seed();
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  }
  std::function<void()> action;

  // prepare ------------------------------------------------------------------
  auto* prep = app.add_subcommand("prepare", "load, curate, split and write a dataset");
  std::string input, synthetic, split_ratio = "8:1:1";
  double min_yield = 0.0;
  bool dedup = false, lenient = false;
  auto* in_opt = prep->add_option("--input", input, "JSONL or CSV reaction file");
  prep->add_option("--synthetic", synthetic, "generate a family (esterification, amide_coupling, thioesterification) "
                                             "or 'forgetting' for the two-stage corpus")
      ->excludes(in_opt);
  prep->add_option("--min-yield", min_yield, "keep yields strictly above this (0 disables)")->capture_default_str();
  prep->add_flag("--dedup-products", dedup, "drop repeated product sets");
  prep->add_option("--split", split_ratio, "train:val:test ratios")->capture_default_str();
  prep->add_flag("--lenient", lenient, "skip malformed rows instead of aborting");
  add_seed_flag(prep, sh);
  prep->add_option("--out", sh.out, "output directory")->required();
  prep->callback([&] {
    action = [&] {
      Manifest m("prepare", *prep, args);
      m.seed("split", sh.seed);
      Outputs out(sh.out);
      if (synthetic == "forgetting") {
        const auto c = forgetting_corpus(sh.seed);
        const std::pair<const char*, const std::vector<ReactionRecord>*> files[] = {
            {"general_train.jsonl", &c.general_train},
            {"general_eval.jsonl", &c.general_eval},
            {"task_train.jsonl", &c.task_train},
            {"task_eval.jsonl", &c.task_eval}};
        for (const auto& [name, recs] : files) {
          std::ostringstream ss;
          write_jsonl(*recs, ss);
          out.write(name, ss.str());
        }
        out.finish(m);
        return;
      }
      std::vector<ReactionRecord> records;
      if (!synthetic.empty()) {
        records = synthetic_reactions(parse_grammar(synthetic), 0, sh.seed);
      } else if (!input.empty()) {
        m.input(input);
        auto res = load_dataset(input, std::nullopt, !lenient);
        records = std::move(res.records);
        nlohmann::json errs = nlohmann::json::array();
        for (const auto& e : res.errors) {
          std::cerr << input << ": row " << e.row << ": " << e.message << "\n";
          errs.push_back({{"row", e.row}, {"message", e.message}});
        }
        out.write("load_errors.json", dump_json(errs, 2) + "\n");
      } else {
        throw ContractError("prepare needs --input or --synthetic");
      }
      CurationReport rep;
      const auto curated = curate(records, min_yield, dedup, &rep);
      const auto parts = split(curated, parse_split(split_ratio, sh.seed));
      const std::pair<const char*, const std::vector<ReactionRecord>*> files[] = {
          {"train.jsonl", &parts.train}, {"val.jsonl", &parts.val}, {"test.jsonl", &parts.test}};
      for (const auto& [name, recs] : files) {
        std::ostringstream ss;
        write_jsonl(*recs, ss);
        out.write(name, ss.str());
      }
      auto rj = to_json(rep);
      rj["split"] = {{"train", parts.train.size()}, {"val", parts.val.size()}, {"test", parts.test.size()}};
      out.write("curation.json", dump_json(rj, 2) + "\n");
      out.finish(m);
    };
  });

  // pretrain / train ---------------------------------------------------------
  ModelConfig mc;
  std::string data, model_path, mode = "full", targets, bundle_name = "adapter";
  int r = 16;
  double alpha = 32.0, dropout = 0.0;
  TrainFlags tf;

  auto finish_training = [&](Seq2SeqModel& model, const std::vector<TaskExample>& ex, const TrainConfig& cfg,
                             Manifest& m, Outputs& out, std::optional<AdapterBundle> bundle) {
    const auto log = train(model, ex, cfg, [](const EpochLog& e) {
      std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << "\n";
    });
    auto lj = to_json(log);
    lj["config"] = to_json(cfg);
    out.write("train_log.json", dump_json(lj, 2) + "\n");
    if (bundle) {
      bundle->metadata().tasks = split_commas(sh.tasks);
      save_adapter(*bundle, out.reserve("adapter.lorb").string());
    } else {
      save_model(model, out.reserve("model.bmdl").string());
    }
    out.finish(m);
  };

  auto* pre = app.add_subcommand("pretrain", "train a fresh model on all weights");
  pre->add_option("--data", data, "training records")->required();
  pre->add_option("--d-model", mc.d_model)->capture_default_str();
  pre->add_option("--heads", mc.n_heads)->capture_default_str();
  pre->add_option("--enc-layers", mc.n_encoder_layers)->capture_default_str();
  pre->add_option("--dec-layers", mc.n_decoder_layers)->capture_default_str();
  pre->add_option("--d-ff", mc.d_ff)->capture_default_str();
  pre->add_option("--max-seq-len", mc.max_sequence_length)->capture_default_str();
  add_train_flags(pre, tf);
  add_task_flags(pre, sh);
  add_seed_flag(pre, sh);
  pre->add_option("--out", sh.out, "output directory")->required();
  pre->callback([&] {
    action = [&] {
      Manifest m("pretrain", *pre, args);
      const auto ex = load_examples(data, sh.tasks, sh.multi_task, m);
      mc.seed = sh.seed;
      mc.validate();
      Seq2SeqModel model(mc);
      TrainConfig cfg{TrainMode::full, parse_tasks(sh.tasks), sh.multi_task, tf.lr, tf.epochs, tf.batch_size,
                      counter_hash(sh.seed, 1), std::nullopt};
      m.seed("init", mc.seed);
      m.seed("shuffle", cfg.seed);
      Outputs out(sh.out);
      finish_training(model, ex, cfg, m, out, std::nullopt);
    };
  });

  auto* tr = app.add_subcommand("train", "task-specific tuning: full fine-tuning or a LoRA bundle");
  tr->add_option("--model", model_path, "base model (.bmdl)")->required();
  tr->add_option("--data", data, "training records")->required();
  tr->add_option("--mode", mode, "full or lora")->capture_default_str();
  tr->add_option("--r", r, "LoRA rank")->capture_default_str();
  tr->add_option("--alpha", alpha, "LoRA alpha")->capture_default_str();
  tr->add_option("--dropout", dropout, "LoRA input dropout")->capture_default_str();
  tr->add_option("--targets", targets, "comma-separated weight names (default: attention q and v)");
  tr->add_option("--name", bundle_name, "bundle name")->capture_default_str();
  add_train_flags(tr, tf);
  add_task_flags(tr, sh);
  add_seed_flag(tr, sh);
  tr->add_option("--out", sh.out, "output directory")->required();
  tr->callback([&] {
    action = [&] {
      Manifest m("train", *tr, args);
      const auto ex = load_examples(data, sh.tasks, sh.multi_task, m);
      m.input(model_path);
      auto model = load_model(model_path);
      TrainConfig cfg{parse_mode(mode), parse_tasks(sh.tasks), sh.multi_task, tf.lr, tf.epochs, tf.batch_size,
                      counter_hash(sh.seed, 2), std::nullopt};
      m.seed("shuffle", cfg.seed);
      std::optional<AdapterBundle> bundle;
      if (cfg.mode == TrainMode::lora) {
        const auto t = targets.empty() ? model.default_lora_targets() : split_commas(targets);
        cfg.lora = LoraHyper{r, alpha, dropout, t};
        const auto init_seed = counter_hash(sh.seed, 3);
        m.seed("adapter_init", init_seed);
        bundle = model.make_bundle(bundle_name, t, r, alpha, dropout, init_seed);
        model.attach(*bundle);
        const auto pc = param_counts(model.parameter_count(), *bundle);
        m.note("param_counts", {{"trainable", pc.trainable}, {"frozen", pc.frozen}, {"fraction", pc.fraction}});
      }
      Outputs out(sh.out);
      finish_training(model, ex, cfg, m, out, bundle);
    };
  });

  // eval ---------------------------------------------------------------------
  std::vector<std::string> adapters;
  std::string ks = "1,2,3,5";
  EvalOptions eo;
  auto add_eval_flags = [&](CLI::App* sub) {
    sub->add_option("--k", ks, "comma-separated K values")->capture_default_str();
    sub->add_option("--beam", eo.beam_width, "beam width")->capture_default_str();
    sub->add_option("--max-len", eo.max_len, "decode length cap")->capture_default_str();
    add_task_flags(sub, sh);
  };
  auto run_eval = [&](const std::string& command, CLI::App* sub) {
    Manifest m(command, *sub, args);
    eo.ks = parse_ks(ks);
    const auto ex = load_examples(data, sh.tasks, sh.multi_task, m);
    m.input(model_path);
    auto model = load_model(model_path);
    const auto base_sum = model.weight_checksum();
    nlohmann::json runs = nlohmann::json::array();
    auto one = [&](const std::optional<std::string>& adapter) {
      auto rep = evaluate_acc_at_k(model, ex, eo, fs::path(data).filename().string());
      auto j = to_json(rep);
      j["adapter"] = adapter ? nlohmann::json(*adapter) : nlohmann::json(nullptr);
      runs.push_back(std::move(j));
    };
    if (adapters.empty()) one(std::nullopt);
    for (const auto& path : adapters) {
      m.input(path);
      const auto b = load_adapter(path);
      model.swap_adapter(b);  // detach-then-attach, validated first
      one(b.name());
    }
    if (model.weight_checksum() != base_sum) throw ContractError("base weights changed during evaluation");
    Outputs out(sh.out);
    out.write("eval.json", dump_json({{"runs", runs}}, 2) + "\n");
    out.finish(m);
  };
  auto* ev = app.add_subcommand("eval", "Acc@K evaluation, optionally under one or more adapters in turn");
  ev->add_option("--model", model_path, "model (.bmdl)")->required();
  ev->add_option("--data", data, "evaluation records")->required();
  ev->add_option("--adapter", adapters, "adapter file; repeat to swap through several");
  add_eval_flags(ev);
  ev->add_option("--out", sh.out, "output directory")->required();
  ev->callback([&] { action = [&] { run_eval("eval", ev); }; });

  // adapter ------------------------------------------------------------------
  auto* ad = app.add_subcommand("adapter", "adapter bundle management");
  ad->require_subcommand(1);
  std::string adapter_path;

  auto* pack = ad->add_subcommand("pack", "write a fresh (B = 0) bundle for a model");
  pack->add_option("--model", model_path)->required();
  pack->add_option("--name", bundle_name)->capture_default_str();
  pack->add_option("--r", r)->capture_default_str();
  pack->add_option("--alpha", alpha)->capture_default_str();
  pack->add_option("--dropout", dropout)->capture_default_str();
  pack->add_option("--targets", targets, "comma-separated weight names (default: attention q and v)");
  add_seed_flag(pack, sh);
  pack->add_option("--out", sh.out, "output directory")->required();
  pack->callback([&] {
    action = [&] {
      Manifest m("adapter pack", *pack, args);
      m.input(model_path);
      const auto model = load_model(model_path);
      const auto t = targets.empty() ? model.default_lora_targets() : split_commas(targets);
      m.seed("adapter_init", sh.seed);
      const auto b = model.make_bundle(bundle_name, t, r, alpha, dropout, sh.seed);
      Outputs out(sh.out);
      save_adapter(b, out.reserve("adapter.lorb").string());
      out.finish(m);
    };
  });

  auto* insp = ad->add_subcommand("inspect", "print a bundle's header and parameter counts as JSON");
  insp->add_option("--adapter", adapter_path)->required();
  insp->add_option("--model", model_path, "base model, for the trainable fraction");
  insp->callback([&] {
    action = [&] {
      const auto b = load_adapter(adapter_path);
      auto j = adapter_header(b);
      const std::uint64_t base = model_path.empty() ? 0 : load_model(model_path).parameter_count();
      const auto pc = param_counts(base, b);
      j["param_counts"] = {{"trainable", pc.trainable}, {"base_total", pc.frozen}, {"fraction", pc.fraction}};
      std::cout << dump_json(j, 2) << "\n";
    };
  });

  auto* mrg = ad->add_subcommand("merge", "fold a bundle into the base weights");
  mrg->add_option("--model", model_path)->required();
  mrg->add_option("--adapter", adapter_path)->required();
  mrg->add_option("--out", sh.out, "output directory")->required();
  mrg->callback([&] {
    action = [&] {
      Manifest m("adapter merge", *mrg, args);
      m.input(model_path);
      m.input(adapter_path);
      const auto merged = load_model(model_path).merged(load_adapter(adapter_path));
      Outputs out(sh.out);
      save_model(merged, out.reserve("model.bmdl").string());
      out.finish(m);
    };
  });

  auto* swp = ad->add_subcommand("swap", "evaluate under each adapter in turn, swapping on one in-memory model");
  swp->add_option("--model", model_path)->required();
  swp->add_option("--data", data)->required();
  swp->add_option("--adapter", adapters, "adapter files, in swap order")->required()->expected(2, 64);
  add_eval_flags(swp);
  swp->add_option("--out", sh.out, "output directory")->required();
  swp->callback([&] { action = [&] { run_eval("adapter swap", swp); }; });

  // forgetting ---------------------------------------------------------------
  std::string full_path;
  auto* fg = app.add_subcommand("forgetting", "Acc@K per class before tuning, after full FT, with and without LoRA");
  fg->add_option("--base", model_path, "model before task tuning")->required();
  fg->add_option("--full", full_path, "fully fine-tuned model")->required();
  fg->add_option("--adapter", adapter_path, "LoRA bundle for the base model")->required();
  fg->add_option("--data", data, "general evaluation records")->required();
  add_eval_flags(fg);
  fg->add_option("--out", sh.out, "output directory")->required();
  fg->callback([&] {
    action = [&] {
      Manifest m("forgetting", *fg, args);
      eo.ks = parse_ks(ks);
      const auto ex = load_examples(data, sh.tasks, sh.multi_task, m);
      for (const auto* p : {&model_path, &full_path, &adapter_path}) m.input(*p);
      const auto fr = forgetting_report(load_model(model_path), load_model(full_path), load_adapter(adapter_path), ex, eo);
      Outputs out(sh.out);
      out.write("forgetting.json", dump_json(to_json(fr), 2) + "\n");
      out.finish(m);
      if (!fr.defects.empty()) {
        for (const auto& d : fr.defects) std::cerr << "defect: " << d << "\n";
        throw NumericError("detached-adapter predictions differ from the base model");
      }
    };
  });

  // ood ----------------------------------------------------------------------
  std::vector<std::string> eval_paths;
  std::string task_train, general_train;
  int top_k = 5;
  auto* od = app.add_subcommand("ood", "reagents proposed outside both training sets");
  od->add_option("--eval", eval_paths, "eval.json from a REAG evaluation; repeatable")->required();
  od->add_option("--task-train", task_train, "task-specific training records")->required();
  od->add_option("--general-train", general_train, "general training records")->required();
  od->add_option("--top-k", top_k)->capture_default_str();
  od->add_option("--out", sh.out, "output directory")->required();
  od->callback([&] {
    action = [&] {
      Manifest m("ood", *od, args);
      auto reagents = [&](const std::string& path) {
        std::vector<std::string> out;
        for (const auto& rec : load_records(path, m)) out.insert(out.end(), rec.reagents.begin(), rec.reagents.end());
        return out;
      };
      const auto task_set = reagents(task_train);
      const auto general_set = reagents(general_train);
      std::vector<EvalReport> reports;
      std::vector<std::string> names;
      for (const auto& path : eval_paths) {
        m.input(path);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
          throw DataError(path + ": " + e.what());
        }
        const auto& runs = j.contains("runs") ? j.at("runs") : j;
        for (const auto& run : runs) {
          reports.push_back(eval_report_from_json(run));
          const auto stem = fs::path(path).parent_path().filename().string();
          names.push_back(run.contains("adapter") && !run.at("adapter").is_null()
                              ? run.at("adapter").get<std::string>()
                              : (stem.empty() ? path : stem));
        }
      }
      std::vector<OodSource> sources;
      for (std::size_t i = 0; i < reports.size(); ++i) sources.push_back({names[i], &reports[i]});
      const auto rep = ood_reagents(sources, task_set, general_set, top_k);
      for (const auto& u : rep.unparseable) {
        std::cerr << "unparseable prediction (" << u.source_model << ", " << u.record_id << ", rank " << u.rank
                  << "): '" << u.fragment << "'\n";
      }
      Outputs out(sh.out);
      out.write("ood.json", dump_json(to_json(rep), 2) + "\n");
      out.write("ood_histogram.csv", histogram_csv(rep));
      out.finish(m);
    };
  });

  // stats --------------------------------------------------------------------
  std::string xs, ys, stats_input, stats_mode = "auto";
  auto* st = app.add_subcommand("stats", "Cliff's delta and the Wilcoxon signed-rank test on paired samples");
  auto* xo = st->add_option("--x", xs, "comma-separated values");
  auto* yo = st->add_option("--y", ys, "comma-separated values");
  st->add_option("--input", stats_input, "JSON file {labels?, x, y}")->excludes(xo)->excludes(yo);
  st->add_option("--mode", stats_mode, "auto, exact or normal")->capture_default_str();
  st->add_option("--out", sh.out, "output directory (default: print to stdout)");
  st->callback([&] {
    action = [&] {
      std::optional<Manifest> m;
      if (!sh.out.empty()) m.emplace("stats", *st, args);
      std::vector<double> x, y;
      nlohmann::json labels;
      auto numbers = [](const std::string& s) {
        std::vector<double> out;
        for (const auto& part : split_commas(s)) {
          std::size_t used = 0;
          double v = 0;
          try {
            v = std::stod(part, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != part.size()) throw DataError("not a number: '" + part + "'");
          out.push_back(v);
        }
        return out;
      };
      if (!stats_input.empty()) {
        if (m) m->input(stats_input);
        try {
          const auto j = nlohmann::json::parse(read_file(stats_input));
          x = j.at("x").get<std::vector<double>>();
          y = j.at("y").get<std::vector<double>>();
          if (j.contains("labels")) {
            labels = j.at("labels");
            if (labels.size() != x.size()) throw DataError("labels and x differ in length");
          }
        } catch (const nlohmann::json::exception& e) {
          throw DataError(stats_input + ": " + e.what());
        }
      } else {
        x = numbers(xs);
        y = numbers(ys);
      }
      const auto wm = stats_mode == "auto"    ? WilcoxonMode::automatic
                      : stats_mode == "exact" ? WilcoxonMode::exact
                      : stats_mode == "normal"
                          ? WilcoxonMode::normal
                          : throw ContractError("unknown --mode '" + stats_mode + "'");
      if (x.empty() || y.empty()) throw DataError("stats: empty sample");
      auto j = stats_report(x, y, wm);
      if (!labels.is_null()) j["labels"] = labels;
      if (!m) {
        std::cout << dump_json(j, 2) << "\n";
        return;
      }
      Outputs out(sh.out);
      out.write("stats.json", dump_json(j, 2) + "\n");
      out.finish(*m);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    if (action) action();
    return kOk;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
}

/// Entry point used by the binary and by tests.
inline int dispatch(int argc, const char* const* argv) { return run(argc, argv); }

inline int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lorachem::cli
