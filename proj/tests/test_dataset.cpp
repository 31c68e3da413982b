// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "lorachem/dataset.hpp"
#include "lorachem/reaction.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/synthetic.hpp"

namespace lorachem {
namespace {

ReactionRecord rec(std::string id, std::vector<std::string> reactants, std::vector<std::string> reagents,
                   std::vector<std::string> products, std::optional<double> y = std::nullopt) {
  ReactionRecord r;
  r.id = std::move(id);
  r.reactants = std::move(reactants);
  r.reagents = std::move(reagents);
  r.products = std::move(products);
  r.yield_fraction = y;
  return r;
}

std::vector<ReactionRecord> numbered(std::size_t n) {
  std::vector<ReactionRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rec("r" + std::to_string(i), {"CCO"}, {}, {"CC=O"}));
  return out;
}

std::vector<std::string> ids(const std::vector<ReactionRecord>& v) {
  std::vector<std::string> out;
  for (const auto& r : v) out.push_back(r.id);
  return out;
}

TEST(Load, JsonlRow) {
  std::istringstream in(R"({"id":"r1","reactants":["CCO"],"reagents":[],"products":["CC=O"],"yield":0.8})");
  const auto res = load_dataset(in, DataFormat::jsonl);
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_TRUE(res.errors.empty());
  EXPECT_EQ(res.records[0].id, "r1");
  EXPECT_EQ(res.records[0].products, std::vector<std::string>{"CC=O"});
  EXPECT_DOUBLE_EQ(*res.records[0].yield_fraction, 0.8);
  EXPECT_FALSE(res.records[0].class_label.has_value());
}

TEST(Load, EmptyProductsRejectedWithRow) {
  std::istringstream in(
      "{\"id\":\"a\",\"reactants\":[\"C\"],\"products\":[\"C\"]}\n"
      "{\"id\":\"b\",\"reactants\":[\"C\"],\"products\":[]}\n");
  const auto res = load_dataset(in, DataFormat::jsonl);
  EXPECT_EQ(res.records.size(), 1u);
  ASSERT_EQ(res.errors.size(), 1u);
  EXPECT_EQ(res.errors[0].row, 2u);
  EXPECT_NE(res.errors[0].message.find("products"), std::string::npos);
}

TEST(Load, LenientCountsAndStrictAborts) {
  std::string text;
  for (int i = 0; i < 10; ++i) {
    if (i == 3) {
      text += "{not json\n";
    } else if (i == 7) {
      text += R"({"id":"x","reactants":["C1CC"],"products":["C"]})" "\n";  // unclosed ring
    } else {
      text += R"({"id":"r)" + std::to_string(i) + R"(","reactants":["CC"],"products":["C=C"]})" "\n";
    }
  }
  std::istringstream lenient(text);
  const auto res = load_dataset(lenient, DataFormat::jsonl);
  EXPECT_EQ(res.records.size(), 8u);
  ASSERT_EQ(res.errors.size(), 2u);
  EXPECT_EQ(res.errors[0].row, 4u);
  EXPECT_EQ(res.errors[1].row, 8u);

  std::istringstream strict(text);
  try {
    load_dataset(strict, DataFormat::jsonl, true);
    FAIL() << "strict load should throw";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 4"), std::string::npos) << e.what();
  }
}

TEST(Load, SchemaViolations) {
  for (const char* row : {R"({"reactants":["C"],"products":["C"]})", R"({"id":"a","reactants":"C","products":["C"]})",
                          R"({"id":"a","reactants":["C"],"products":["C"],"yield":1.5})",
                          R"({"id":"a","reactants":["C"],"products":["C"],"yield":"high"})", "[1,2]"}) {
    std::istringstream in(row);
    EXPECT_EQ(load_dataset(in, DataFormat::jsonl).errors.size(), 1u) << row;
  }
  EXPECT_THROW(load_dataset(std::string("/nonexistent/file.jsonl")), DataError);
}

TEST(Load, CsvWithQuotingAndSeparators) {
  std::istringstream in(
      "id,reactants,reagents,products,yield,class_label\n"
      "r1,CCO;O,,CC=O,0.5,oxidation\n"
      "\"r,2\",\"CC(C)O\",[Na+];[Cl-],CC(C)=O,,\n"
      "r3,CC,,,0.2,x\n");
  const auto res = load_dataset(in, DataFormat::csv);
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_EQ(res.records[0].reactants, (std::vector<std::string>{"CCO", "O"}));
  EXPECT_TRUE(res.records[0].reagents.empty());
  EXPECT_EQ(*res.records[0].class_label, "oxidation");
  EXPECT_EQ(res.records[1].id, "r,2");
  EXPECT_EQ(res.records[1].reagents, (std::vector<std::string>{"[Na+]", "[Cl-]"}));
  EXPECT_FALSE(res.records[1].yield_fraction.has_value());
  ASSERT_EQ(res.errors.size(), 1u);
  EXPECT_EQ(res.errors[0].row, 4u);

  std::istringstream bad_header("id,smiles\n");
  const auto bad = load_dataset(bad_header, DataFormat::csv);
  ASSERT_EQ(bad.errors.size(), 1u);
  EXPECT_EQ(bad.errors[0].row, 1u);
}

TEST(Load, JsonlRoundTrip) {
  auto recs = synthetic_reactions(Grammar::amide_coupling, 20, 5);
  recs[3].yield_fraction.reset();
  recs[4].class_label.reset();
  std::ostringstream out;
  write_jsonl(recs, out);
  std::istringstream in(out.str());
  const auto back = load_dataset(in, DataFormat::jsonl, true);
  EXPECT_EQ(back.records, recs);
}

TEST(Curate, StrictYieldBoundary) {
  const std::vector<ReactionRecord> in = {rec("a", {"C"}, {}, {"CC"}, 0.2), rec("b", {"C"}, {}, {"CCC"}, 0.3),
                                          rec("c", {"C"}, {}, {"CCCC"}, 0.31), rec("d", {"C"}, {}, {"CCCCC"})};
  CurationReport rep;
  const auto out = curate(in, 0.3, false, &rep);
  EXPECT_EQ(ids(out), std::vector<std::string>{"c"});
  EXPECT_EQ(rep.input_count, 4u);
  EXPECT_EQ(rep.yield_dropped, 3u);
  EXPECT_EQ(rep.output_count, 1u);
}

TEST(Curate, DedupIsStructuralAndOrderPreserving) {
  const std::vector<ReactionRecord> in = {
      rec("a", {"C"}, {}, {"OCC", "C"}),
      rec("b", {"CC"}, {}, {"CCO"}),
      rec("c", {"CCC"}, {}, {"C", "C(O)C"}),  // same product set as "a", spelled differently
      rec("d", {"CCCC"}, {}, {"CCO"}),
  };
  CurationReport rep;
  const auto out = curate(in, 0.0, true, &rep);
  EXPECT_EQ(ids(out), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(rep.dedup_dropped, 2u);
  EXPECT_EQ(to_json(rep)["output_count"], 2);
}

TEST(Curate, IdentityAndIdempotence) {
  auto in = synthetic_reactions(Grammar::esterification, 60, 1);
  EXPECT_EQ(curate(in, 0.0, false), in);
  Rng rng(9);
  for (auto& r : in) {
    r.yield_fraction = rng.uniform();
    if (rng.below(4) == 0) r.products = {"CCO"};
  }
  const auto once = curate(in, 0.3, true);
  EXPECT_EQ(curate(once, 0.3, true), once);
}

TEST(Split, Sizes) {
  const SplitSpec s811 = parse_split("8:1:1", 0);
  const auto a = split(numbered(10), s811);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.val.size(), 1u);
  EXPECT_EQ(a.test.size(), 1u);
  const auto b = split(numbered(685), s811);
  EXPECT_EQ(b.train.size(), 547u);
  EXPECT_EQ(b.val.size(), 69u);
  EXPECT_EQ(b.test.size(), 69u);
  EXPECT_THROW(split(numbered(2), s811), DataError);
  EXPECT_THROW(parse_split("8:1", 0), ContractError);
  EXPECT_THROW(parse_split("8:0:1", 0), ContractError);
  EXPECT_THROW(parse_split("8:a:1", 0), ContractError);
}

TEST(Split, DeterministicDisjointCovering) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(300);
    const SplitSpec spec{0.8, 0.1, 0.1, rng.next()};
    const auto recs = numbered(n);
    const auto a = split(recs, spec);
    const auto b = split(recs, spec);
    EXPECT_EQ(ids(a.train), ids(b.train));
    EXPECT_EQ(ids(a.val), ids(b.val));
    EXPECT_EQ(ids(a.test), ids(b.test));
    auto all = ids(a.train);
    for (const auto& v : {ids(a.val), ids(a.test)}) all.insert(all.end(), v.begin(), v.end());
    std::sort(all.begin(), all.end());
    auto expected = ids(recs);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(all, expected) << "n=" << n;
    EXPECT_GE(a.val.size(), 1u);
    EXPECT_GE(a.test.size(), 1u);
  }
}

TEST(Format, Examples) {
  const auto r = rec("r1", {"CCO", "O"}, {"[Na+]"}, {"CC=O"});
  auto fwd = format_tasks({r}, {Task::fwd}, true);
  ASSERT_EQ(fwd.size(), 1u);
  EXPECT_EQ(fwd[0].input_text, "Product: CCO.O.[Na+]>");
  EXPECT_EQ(fwd[0].target_text, "CC=O");
  EXPECT_EQ(format_tasks({r}, {Task::fwd}, false)[0].input_text, "CCO.O.[Na+]>");

  const auto all = format_tasks({r}, {Task::fwd, Task::retro, Task::reag}, true);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[1].input_text, "Reactants: CC=O>");
  EXPECT_EQ(all[1].target_text, "CCO.O");
  EXPECT_EQ(all[2].input_text, "Reagents: CCO.O.CC=O>");
  EXPECT_EQ(all[2].target_text, "[Na+]");
}

TEST(Format, ReagSkippedWithoutReagents) {
  const std::vector<ReactionRecord> recs = {rec("a", {"C"}, {}, {"CC"}), rec("b", {"C"}, {"O"}, {"CC"})};
  std::size_t skipped = 0;
  const auto out = format_tasks(recs, {Task::fwd, Task::reag}, true, &skipped);
  EXPECT_EQ(out.size(), 3u);
  EXPECT_EQ(skipped, 1u);
  EXPECT_THROW(format_tasks(recs, {}, true), ContractError);
  EXPECT_EQ(parse_tasks("fwd,reag"), (std::set<Task>{Task::fwd, Task::reag}));
  EXPECT_THROW(parse_tasks("fwd,oops"), ContractError);
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

TEST(Format, ParsesBackToComponents) {
  auto recs = synthetic_reactions(Grammar::esterification, 40, 3);
  recs[0].reagents.clear();
  recs[1].reactants.push_back("CC(=O)O");
  for (bool multi : {true, false}) {
    for (const auto& r : recs) {
      for (Task t : {Task::fwd, Task::retro, Task::reag}) {
        if (t == Task::reag && r.reagents.empty()) continue;
        const auto ex = format_example(r, t, multi);
        std::string body = ex.input_text;
        const auto prefix = task_prefix(t);
        ASSERT_EQ(body.starts_with(prefix), multi);
        if (multi) body.erase(0, prefix.size());
        const auto layout = t == Task::fwd ? ReactionLayout::forward
                            : t == Task::reag ? ReactionLayout::reagents
                                              : ReactionLayout::retro;
        const auto parsed = validate_reaction_string(body + ex.target_text, layout);
        switch (t) {
          case Task::fwd: {
            auto left = r.reactants;
            left.insert(left.end(), r.reagents.begin(), r.reagents.end());
            EXPECT_EQ(sorted(parsed.left), sorted(left));
            EXPECT_EQ(sorted(parsed.right), sorted(r.products));
            break;
          }
          case Task::reag: {
            auto left = r.reactants;
            left.insert(left.end(), r.products.begin(), r.products.end());
            EXPECT_EQ(sorted(parsed.left), sorted(left));
            EXPECT_EQ(sorted(parsed.right), sorted(r.reagents));
            break;
          }
          case Task::retro:
            EXPECT_EQ(sorted(parsed.left), sorted(r.products));
            EXPECT_EQ(sorted(parsed.right), sorted(r.reactants));
            break;
        }
      }
    }
  }
}

TEST(Synthetic, FamiliesAreValidAndDistinct) {
  for (Grammar g : {Grammar::esterification, Grammar::amide_coupling, Grammar::thioesterification}) {
    const auto all = synthetic_reactions(g, 0, 1);
    EXPECT_EQ(all.size(), grammar_size());
    for (const auto& r : all) validate_record(r);
    // Cyclobutyl/cyclopentyl swaps are distinct molecules that share a
    // radius-2 structural key, so dedup merges exactly one pair.
    EXPECT_EQ(curate(all, 0.3, true).size(), all.size() - 1) << grammar_name(g);
    EXPECT_EQ(synthetic_reactions(g, 10, 4), synthetic_reactions(g, 10, 4));
  }
  const auto c = forgetting_corpus(7);
  EXPECT_EQ(c.general_train.size(), 2 * 160u + 24u);
  EXPECT_EQ(c.general_eval.size(), 72u);
  EXPECT_EQ(c.task_train.size(), 32u);
  std::set<std::string> general_ids;
  for (const auto& r : c.general_train) general_ids.insert(r.id);
  for (const auto* v : {&c.general_eval, &c.task_train, &c.task_eval}) {
    for (const auto& r : *v) EXPECT_EQ(general_ids.count(r.id), 0u) << r.id;
  }
  for (const auto& r : c.task_train) {
    for (const auto& e : c.task_eval) EXPECT_NE(r.id, e.id);
  }
  EXPECT_THROW(parse_grammar("C"), ContractError);
}

}  // namespace
}  // namespace lorachem
