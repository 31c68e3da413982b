// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lorachem/eval.hpp"
#include "lorachem/fingerprint.hpp"
#include "lorachem/synthetic.hpp"
#include "lorachem/train.hpp"

namespace lorachem {
namespace {

ModelConfig tiny_config(int max_len = 64) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.d_ff = 32;
  c.max_sequence_length = max_len;
  c.seed = 3;
  return c;
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<TaskExample> small_task(std::size_t n = 6) {
  return format_tasks(synthetic_reactions(Grammar::esterification, n, 2), {Task::fwd}, false);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.mode = TrainMode::lora;
  EXPECT_THROW(c.validate(), ContractError);  // lora hyperparameters missing
  c.lora = LoraHyper{};
  EXPECT_NO_THROW(c.validate());
  c.mode = TrainMode::full;
  EXPECT_THROW(c.validate(), ContractError);  // lora hyperparameters present
  c = {};
  c.lr = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_EQ(to_json(TrainConfig{})["mode"], "full");
}

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  Seq2SeqModel m(tiny_config());
  const auto before = m.weight_checksum();
  TrainConfig c;
  c.lr = 0.0;
  c.batch_size = 64;  // one step
  const auto log = train(m, small_task(), c);
  EXPECT_EQ(log.epochs.size(), 1u);
  EXPECT_EQ(log.epochs[0].steps, 1u);
  EXPECT_EQ(m.weight_checksum(), before);
  EXPECT_EQ(log.checksum_after, before);
}

TEST(Train, FullModeUpdatesWeights) {
  Seq2SeqModel m(tiny_config());
  const auto before = m.weight_checksum();
  TrainConfig c;
  c.epochs = 2;
  const auto log = train(m, small_task(), c);
  EXPECT_NE(m.weight_checksum(), before);
  EXPECT_TRUE(std::isfinite(log.final_loss()));
}

TEST(Train, LoraModeTouchesOnlyAdapters) {
  Seq2SeqModel m(tiny_config());
  auto bundle = m.make_bundle("t", m.default_lora_targets(), 2, 4.0, 0.1, 7);
  const auto b_before = values(bundle.parameters().back());
  m.attach(bundle);
  const auto before = m.weight_checksum();
  TrainConfig c;
  c.mode = TrainMode::lora;
  c.lora = LoraHyper{2, 4.0, 0.1, {}};
  const auto log = train(m, small_task(), c);
  EXPECT_EQ(log.checksum_before, before);
  EXPECT_EQ(log.checksum_after, before);
  EXPECT_EQ(m.weight_checksum(), before);
  EXPECT_NE(values(bundle.parameters().back()), b_before);  // shared with the model
  EXPECT_FALSE(m.training());
}

TEST(Train, ModePreconditions) {
  Seq2SeqModel m(tiny_config());
  TrainConfig lora;
  lora.mode = TrainMode::lora;
  lora.lora = LoraHyper{};
  EXPECT_THROW(train(m, small_task(), lora), ContractError);
  m.attach(m.make_bundle("t", m.default_lora_targets(), 2, 4.0, 0.0, 1));
  EXPECT_THROW(train(m, small_task(), TrainConfig{}), ContractError);
  EXPECT_THROW(train(m, {}, lora), DataError);
}

TEST(Train, FixedSeedGivesIdenticalLogs) {
  auto run = [] {
    Seq2SeqModel m(tiny_config());
    auto bundle = m.make_bundle("t", m.default_lora_targets(), 2, 4.0, 0.2, 7);
    m.attach(bundle);
    TrainConfig c;
    c.mode = TrainMode::lora;
    c.lora = LoraHyper{2, 4.0, 0.2, {}};
    c.epochs = 3;
    c.batch_size = 4;
    c.seed = 99;
    return std::make_pair(to_json(train(m, small_task(), c)).dump(), values(bundle.parameters()[0]));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, NonFiniteLossReportsContext) {
  Seq2SeqModel m(tiny_config());
  auto w = values(m.weight("lm_head"));
  w[0] = std::numeric_limits<float>::infinity();
  w[1] = -std::numeric_limits<float>::infinity();
  m.set_weight("lm_head", Tensor::from(m.weight("lm_head").shape(), w));
  try {
    train(m, small_task(), TrainConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(m.training());
}

TEST(AccAtK, HitRankDefinition) {
  std::vector<Prediction> p = {{"A"}, {"B"}, {"C  "}, {"D"}, {"E"}};
  EXPECT_EQ(hit_rank("C", p), 3);
  EXPECT_EQ(hit_rank("C\n", p), 3);
  EXPECT_EQ(hit_rank("Z", p), std::nullopt);
  ExampleResult e;
  e.hit_rank = 3;
  const auto acc = acc_at_k({&e}, {1, 2, 3, 5});
  EXPECT_EQ(acc.at(1), 0.0);
  EXPECT_EQ(acc.at(2), 0.0);
  EXPECT_EQ(acc.at(3), 100.0);
  EXPECT_EQ(acc.at(5), 100.0);
}

TEST(AccAtK, Arithmetic) {
  std::vector<ExampleResult> ex(4);
  ex[0].hit_rank = 1;
  ex[2].hit_rank = 1;
  ex[3].hit_rank = 4;
  std::vector<const ExampleResult*> ptrs;
  for (const auto& e : ex) ptrs.push_back(&e);
  const auto acc = acc_at_k(ptrs, {1, 2, 3, 5});
  EXPECT_EQ(acc.at(1), 50.0);
  EXPECT_EQ(acc.at(3), 50.0);
  EXPECT_EQ(acc.at(5), 75.0);
}

TEST(AccAtK, Errors) {
  Seq2SeqModel m(tiny_config());
  EvalOptions o;
  EXPECT_THROW(evaluate_acc_at_k(m, {}, o), DataError);
  o.beam_width = 3;
  EXPECT_THROW(evaluate_acc_at_k(m, small_task(1), o), ContractError);
}

// Every sequence the model can emit within `max_len` ids, best first.
std::vector<Hypothesis> exhaustive(const Seq2SeqModel& m, const std::string& input, int max_len) {
  const auto src = tokenize(input);
  const auto memory = m.encode(src);
  std::vector<Hypothesis> out, frontier(1);
  while (!frontier.empty()) {
    std::vector<Hypothesis> next;
    for (const auto& h : frontier) {
      const auto lp = m.next_token_log_probs(memory, h.ids);
      for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
        if (t == ByteVocab::kPad) continue;
        Hypothesis c = h;
        c.ids.push_back(t);
        c.log_prob += lp[static_cast<std::size_t>(t)];
        c.finished = t == ByteVocab::kEos;
        if (c.finished || static_cast<int>(c.ids.size()) == max_len) {
          out.push_back(c);
        } else {
          next.push_back(c);
        }
      }
    }
    frontier = std::move(next);
  }
  std::sort(out.begin(), out.end(), hypothesis_before);
  return out;
}

TEST(AccAtK, TwoStepModelMatchesExhaustiveOracle) {
  Seq2SeqModel m(tiny_config(4));
  EvalOptions o;
  o.max_len = 2;
  o.beam_width = ByteVocab::kSize;  // nothing relevant is pruned at depth 2
  std::vector<TaskExample> data;
  const std::vector<int> gold_rank = {1, 3, 5, 0, 2};
  std::vector<std::vector<Hypothesis>> oracle;
  for (std::size_t i = 0; i < gold_rank.size(); ++i) {
    const std::string input(1, static_cast<char>('a' + i));
    oracle.push_back(exhaustive(m, input, 2));
    const auto target = gold_rank[i] ? detokenize(oracle[i][gold_rank[i] - 1].ids).text : std::string("no-match");
    data.push_back({Task::fwd, input, target, "x" + std::to_string(i), std::string("c")});
  }
  const auto r = evaluate_acc_at_k(m, data, o);
  std::map<int, int> hits;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = r.examples[i];
    ASSERT_EQ(e.predictions.size(), 5u);
    std::vector<Prediction> expected;
    for (std::size_t j = 0; j < 5; ++j) {
      expected.push_back({trim_trailing(detokenize(oracle[i][j].ids).text), oracle[i][j].log_prob, oracle[i][j].finished});
      EXPECT_EQ(e.predictions[j].text, expected[j].text);
      EXPECT_NEAR(e.predictions[j].log_prob, expected[j].log_prob, 1e-9);
      EXPECT_EQ(e.predictions[j].finished, expected[j].finished);
    }
    const auto want = hit_rank(data[i].target_text, expected);
    EXPECT_EQ(e.hit_rank, want);
    for (int k : {1, 2, 3, 5}) hits[k] += want && *want <= k ? 1 : 0;
  }
  for (int k : {1, 2, 3, 5}) EXPECT_DOUBLE_EQ(r.accuracy.at(k), 100.0 * hits[k] / 5.0);
}

TEST(AccAtK, MonotoneAndDeterministic) {
  Seq2SeqModel m(tiny_config());
  TrainConfig c;
  c.epochs = 3;
  const auto data = small_task(8);
  train(m, data, c);
  EvalOptions o;
  o.max_len = 24;
  const auto a = evaluate_acc_at_k(m, data, o);
  const auto b = evaluate_acc_at_k(m, data, o);
  EXPECT_EQ(dump_json(to_json(a)), dump_json(to_json(b)));
  for (const auto& [cls, acc] : accuracy_by_class(a)) {
    EXPECT_LE(acc.at(1), acc.at(2));
    EXPECT_LE(acc.at(2), acc.at(3));
    EXPECT_LE(acc.at(3), acc.at(5));
    for (const auto& [k, v] : acc) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
}

TEST(Forgetting, ZeroTuningGivesIdenticalColumns) {
  Seq2SeqModel base(tiny_config());
  const auto full = base.clone();
  const auto bundle = base.make_bundle("t", base.default_lora_targets(), 2, 4.0, 0.0, 5);
  auto general = format_tasks(synthetic_reactions(Grammar::esterification, 3, 1), {Task::fwd}, false);
  const auto thio = format_tasks(synthetic_reactions(Grammar::thioesterification, 3, 1), {Task::fwd}, false);
  general.insert(general.end(), thio.begin(), thio.end());
  EvalOptions o;
  o.max_len = 12;
  const auto fr = forgetting_report(base, full, bundle, general, o);
  EXPECT_TRUE(fr.defects.empty());
  EXPECT_EQ(fr.table.size(), 3u);  // two classes plus "all"
  for (const auto& [cls, conds] : fr.table) {
    for (const auto& c : kForgettingConditions) EXPECT_EQ(conds.at(std::string(c)), conds.at("before")) << cls;
  }
  for (const auto& c : kForgettingConditions) {
    EXPECT_EQ(fr.reports.at(std::string(c)).examples, fr.reports.at("before").examples);
  }
  EXPECT_TRUE(to_json(fr)["detached_equals_before"].get<bool>());
}

TEST(Forgetting, ConfigMismatch) {
  Seq2SeqModel base(tiny_config());
  Seq2SeqModel other(tiny_config(32));
  const auto bundle = base.make_bundle("t", base.default_lora_targets(), 2, 4.0, 0.0, 5);
  EXPECT_THROW(forgetting_report(base, other, bundle, small_task(1)), ContractError);
  Seq2SeqModel wide(ModelConfig{});
  EXPECT_THROW(forgetting_report(base, base.clone(), wide.make_bundle("w", wide.default_lora_targets(), 2, 4.0, 0.0, 1),
                                 small_task(1)),
               ContractError);
}

EvalReport reag_report(const std::vector<std::vector<std::string>>& predictions) {
  EvalReport r;
  r.ks = {1, 2, 3, 5};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    ExampleResult e;
    e.record_id = "e" + std::to_string(i);
    e.task = "reag";
    for (const auto& p : predictions[i]) e.predictions.push_back({p, -1.0, true});
    r.examples.push_back(e);
  }
  return r;
}

double oracle_max_tanimoto(const std::string& smiles, const std::vector<std::string>& train) {
  double best = 0;
  for (const auto& t : train) {
    best = std::max(best, tanimoto(fingerprint(parse_smiles(smiles)), fingerprint(parse_smiles(t))));
  }
  return best;
}

TEST(Ood, Examples) {
  const std::vector<std::string> task_train = {"CCN(CC)CC", "O=C(O)O"};
  const std::vector<std::string> general_train = {"OS(=O)(=O)O", "CCOCC"};
  const auto report = reag_report({
      {"N(CC)(CC)CC", "C1COCCO1", "CCOCC.C1COCCO1", "C1CC(", "C1COCCO1"},  // first is a respelled training reagent
      {"ClCCl", "CCOCC"},
  });
  const auto r = ood_reagents({{"m1", &report}}, task_train, general_train);
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[0].smiles, "C1COCCO1");
  EXPECT_EQ(r.entries[0].rank, 2);
  EXPECT_DOUBLE_EQ(r.entries[0].max_tanimoto, oracle_max_tanimoto("C1COCCO1", task_train));
  EXPECT_EQ(r.entries[1].smiles, "ClCCl");
  EXPECT_EQ(r.entries[1].rank, 1);
  ASSERT_EQ(r.unparseable.size(), 1u);
  EXPECT_EQ(r.unparseable[0].fragment, "C1CC(");
  EXPECT_EQ(r.unparseable[0].rank, 4);
  EXPECT_EQ(r.in_distribution, 3u);
  std::size_t total = 0;
  for (auto c : r.histogram) total += c;
  EXPECT_EQ(total, 2u);
  EXPECT_EQ(r.histogram[static_cast<std::size_t>(tanimoto_bin(r.entries[0].max_tanimoto))] >= 1, true);
}

TEST(Ood, SourcesAreSeparateAndNonReagTasksIgnored) {
  auto a = reag_report({{"C1COCCO1"}});
  auto b = reag_report({{"C", "C1COCCO1"}});
  auto fwd = reag_report({{"ClCCl"}});
  fwd.examples[0].task = "fwd";
  const auto r = ood_reagents({{"a", &a}, {"b", &b}, {"f", &fwd}}, {"CCO"}, {});
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].source_model, "a");
  EXPECT_EQ(r.entries[2].source_model, "b");
  EXPECT_EQ(r.entries[2].rank, 2);
}

TEST(Ood, EmptyAndHistogramCsv) {
  const auto report = reag_report({{"CCO"}});
  const auto r = ood_reagents({{"m", &report}}, {"OCC"}, {});
  EXPECT_TRUE(r.entries.empty());
  for (auto c : r.histogram) EXPECT_EQ(c, 0u);
  const auto csv = histogram_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_start,bin_end,count");
  EXPECT_NE(csv.find("0.9,1.0,0\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_EQ(tanimoto_bin(1.0), 9);
  EXPECT_EQ(tanimoto_bin(0.3), 3);
  EXPECT_EQ(tanimoto_bin(0.0), 0);
  EXPECT_EQ(to_json(r)["unparseable_count"], 0);
}

TEST(Ood, DisjointFromTrainingOnRandomPredictions) {
  const auto pool = synthetic_reactions(Grammar::esterification, 40, 6);
  std::vector<std::string> task_train, general_train;
  std::vector<std::vector<std::string>> preds;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (i % 2 ? task_train : general_train).push_back(pool[i].reactants[1]);
    preds.push_back({pool[(i * 7) % pool.size()].reactants[1], pool[i].products[0], pool[i].reactants[0]});
  }
  const auto report = reag_report(preds);
  const auto r = ood_reagents({{"m", &report}}, task_train, general_train);
  std::set<std::string> train_keys;
  for (const auto* v : {&task_train, &general_train}) {
    for (const auto& s : *v) train_keys.insert(molecule_key(s));
  }
  EXPECT_FALSE(r.entries.empty());
  for (const auto& e : r.entries) {
    EXPECT_EQ(train_keys.count(molecule_key(e.smiles)), 0u) << e.smiles;
    EXPECT_DOUBLE_EQ(e.max_tanimoto, oracle_max_tanimoto(e.smiles, task_train));
  }
}

}  // namespace
}  // namespace lorachem
