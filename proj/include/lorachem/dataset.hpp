// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reaction records: loading (JSONL / CSV), curation, seeded splits and
// formatting into prefixed task examples.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "lorachem/error.hpp"
#include "lorachem/fingerprint.hpp"
#include "lorachem/rng.hpp"
#include "lorachem/smiles.hpp"

namespace lorachem {

struct ReactionRecord {
  std::string id;
  std::vector<std::string> reactants;
  std::vector<std::string> reagents;
  std::vector<std::string> products;
  std::optional<double> yield_fraction;
  std::optional<std::string> class_label;

  bool operator==(const ReactionRecord&) const = default;
};

/// Throws DataError when a record breaks its invariants.
inline void validate_record(const ReactionRecord& r) {
  if (r.reactants.empty()) throw DataError("record '" + r.id + "': reactants are empty");
  if (r.products.empty()) throw DataError("record '" + r.id + "': products are empty");
  if (r.yield_fraction && !(*r.yield_fraction >= 0.0 && *r.yield_fraction <= 1.0)) {
    throw DataError("record '" + r.id + "': yield outside [0, 1]");
  }
  for (const auto* list : {&r.reactants, &r.reagents, &r.products}) {
    for (const auto& s : *list) {
      try {
        (void)parse_smiles(s);
      } catch (const SmilesError& e) {
        throw DataError("record '" + r.id + "': SMILES '" + s + "': " + e.what());
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Loading

enum class DataFormat { jsonl, csv };

struct RowError {
  std::size_t row = 0;  // 1-based line number in the file
  std::string message;
};

struct LoadResult {
  std::vector<ReactionRecord> records;
  std::vector<RowError> errors;
};

inline nlohmann::json to_json(const ReactionRecord& r) {
  nlohmann::json j = {{"id", r.id},
                      {"reactants", r.reactants},
                      {"reagents", r.reagents},
                      {"products", r.products}};
  j["yield"] = r.yield_fraction ? nlohmann::json(*r.yield_fraction) : nlohmann::json(nullptr);
  if (r.class_label) j["class_label"] = *r.class_label;
  return j;
}

inline ReactionRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("row is not a JSON object");
  auto str_list = [&](const char* key, bool required) {
    if (!j.contains(key)) {
      if (required) throw DataError(std::string("missing field '") + key + "'");
      return std::vector<std::string>{};
    }
    const auto& v = j.at(key);
    if (!v.is_array()) throw DataError(std::string("field '") + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw DataError(std::string("field '") + key + "' must hold strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  ReactionRecord r;
  if (!j.contains("id") || !j.at("id").is_string()) throw DataError("missing string field 'id'");
  r.id = j.at("id").get<std::string>();
  r.reactants = str_list("reactants", true);
  r.reagents = str_list("reagents", false);
  r.products = str_list("products", true);
  if (j.contains("yield") && !j.at("yield").is_null()) {
    if (!j.at("yield").is_number()) throw DataError("field 'yield' must be a number");
    r.yield_fraction = j.at("yield").get<double>();
  }
  if (j.contains("class_label") && !j.at("class_label").is_null()) {
    if (!j.at("class_label").is_string()) throw DataError("field 'class_label' must be a string");
    r.class_label = j.at("class_label").get<std::string>();
  }
  validate_record(r);
  return r;
}

inline constexpr std::string_view kCsvHeader = "id,reactants,reagents,products,yield,class_label";

/// One CSV line into fields (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back().push_back(c);
    }
  }
  if (quoted) throw DataError("unterminated quote");
  return out;
}

inline ReactionRecord record_from_csv(std::string_view line) {
  const auto f = split_csv_line(line);
  if (f.size() != 6) throw DataError("expected 6 columns, got " + std::to_string(f.size()));
  auto smiles_list = [](const std::string& cell) {
    std::vector<std::string> out;
    if (cell.empty()) return out;
    std::size_t start = 0;
    while (true) {
      const auto sep = cell.find(';', start);
      out.push_back(cell.substr(start, sep == std::string::npos ? std::string::npos : sep - start));
      if (sep == std::string::npos) break;
      start = sep + 1;
    }
    return out;
  };
  ReactionRecord r;
  r.id = f[0];
  r.reactants = smiles_list(f[1]);
  r.reagents = smiles_list(f[2]);
  r.products = smiles_list(f[3]);
  if (!f[4].empty()) {
    std::size_t used = 0;
    double y = 0;
    try {
      y = std::stod(f[4], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[4].size()) throw DataError("yield '" + f[4] + "' is not a number");
    r.yield_fraction = y;
  }
  if (!f[5].empty()) r.class_label = f[5];
  validate_record(r);
  return r;
}

inline DataFormat format_for_path(const std::string& path) {
  return path.ends_with(".csv") ? DataFormat::csv : DataFormat::jsonl;
}

/// Reads every row; invalid rows go to `errors` with their line number, or
/// abort the load in strict mode.
inline LoadResult load_dataset(std::istream& in, DataFormat format, bool strict = false) {
  LoadResult out;
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      if (format == DataFormat::csv && !header_seen) {
        header_seen = true;
        if (line != kCsvHeader) throw DataError("CSV header must be '" + std::string(kCsvHeader) + "'");
        continue;
      }
      if (format == DataFormat::csv) {
        out.records.push_back(record_from_csv(line));
      } else {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw DataError(std::string("invalid JSON: ") + e.what());
        }
        out.records.push_back(record_from_json(j));
      }
    } catch (const DataError& e) {
      if (strict) throw DataError("row " + std::to_string(row) + ": " + e.what());
      out.errors.push_back({row, e.what()});
    }
  }
  return out;
}

inline LoadResult load_dataset(const std::string& path, std::optional<DataFormat> format = {},
                               bool strict = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return load_dataset(in, format.value_or(format_for_path(path)), strict);
}

inline void write_jsonl(const std::vector<ReactionRecord>& records, std::ostream& os) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline void write_jsonl(const std::vector<ReactionRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_jsonl(records, os);
}

// ---------------------------------------------------------------------------
// Curation

struct CurationReport {
  std::size_t input_count = 0;
  std::size_t yield_dropped = 0;
  std::size_t dedup_dropped = 0;
  std::size_t output_count = 0;
};

inline nlohmann::json to_json(const CurationReport& r) {
  return {{"input_count", r.input_count},
          {"yield_dropped", r.yield_dropped},
          {"dedup_dropped", r.dedup_dropped},
          {"output_count", r.output_count}};
}

/// Sorted structural keys of the products, joined.
inline std::string product_set_key(const ReactionRecord& r) {
  std::vector<std::string> keys;
  for (const auto& p : r.products) keys.push_back(molecule_key(p));
  std::sort(keys.begin(), keys.end());
  std::string out;
  for (const auto& k : keys) out += k + "|";
  return out;
}

/// Keeps records with yield strictly above min_yield (yield-less records
/// fail any positive threshold; min_yield <= 0 disables the filter), then
/// optionally the first record per product set. Input order is preserved.
inline std::vector<ReactionRecord> curate(const std::vector<ReactionRecord>& records,
                                          double min_yield, bool dedup_by_product,
                                          CurationReport* report = nullptr) {
  CurationReport rep;
  rep.input_count = records.size();
  std::vector<ReactionRecord> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (min_yield > 0.0 && !(r.yield_fraction && *r.yield_fraction > min_yield)) {
      ++rep.yield_dropped;
      continue;
    }
    if (dedup_by_product && !seen.insert(product_set_key(r)).second) {
      ++rep.dedup_dropped;
      continue;
    }
    out.push_back(r);
  }
  rep.output_count = out.size();
  if (report) *report = rep;
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
};

/// Parses "8:1:1"-style ratios.
inline SplitSpec parse_split(std::string_view text, std::uint64_t seed) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (true) {
    const auto c = text.find(':', start);
    const std::string piece(text.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (piece.empty() || used != piece.size()) throw ContractError("bad split '" + std::string(text) + "'");
    parts.push_back(v);
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  if (parts.size() != 3) throw ContractError("split needs three ratios, got '" + std::string(text) + "'");
  const double total = parts[0] + parts[1] + parts[2];
  if (!(parts[0] > 0 && parts[1] > 0 && parts[2] > 0)) throw ContractError("split ratios must be positive");
  return {parts[0] / total, parts[1] / total, parts[2] / total, seed};
}

struct SplitResult {
  std::vector<ReactionRecord> train, val, test;
};

/// Seeded shuffle, then n_val = round(val * N), n_test = round(test * N)
/// (half away from zero, at least 1 each), train takes the rest.
inline SplitResult split(const std::vector<ReactionRecord>& records, const SplitSpec& spec) {
  if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw ContractError("split ratios must be positive and sum to 1");
  }
  const std::size_t n = records.size();
  if (n < 3) throw DataError("cannot split " + std::to_string(n) + " records (need at least 3)");
  const auto count = [n](double ratio) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n))));
  };
  const std::size_t n_val = count(spec.val), n_test = count(spec.test);
  if (n_val + n_test >= n) throw DataError("split leaves no training records");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(idx);
  SplitResult out;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : i < n_train + n_val ? out.val : out.test;
    dst.push_back(records[idx[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task formatting

enum class Task { fwd, retro, reag };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::fwd: return "fwd";
    case Task::retro: return "retro";
    case Task::reag: return "reag";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "fwd") return Task::fwd;
  if (s == "retro") return Task::retro;
  if (s == "reag") return Task::reag;
  throw ContractError("unknown task '" + std::string(s) + "' (expected fwd, retro or reag)");
}

/// Comma-separated task list, e.g. "fwd,reag".
inline std::set<Task> parse_tasks(std::string_view s) {
  std::set<Task> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto c = s.find(',', start);
    const auto piece = s.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start);
    if (!piece.empty()) out.insert(parse_task(piece));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  if (out.empty()) throw ContractError("empty task list");
  return out;
}

inline std::string_view task_prefix(Task t) {
  switch (t) {
    case Task::fwd: return "Product: ";
    case Task::retro: return "Reactants: ";
    case Task::reag: return "Reagents: ";
  }
  return "";
}

struct TaskExample {
  Task task = Task::fwd;
  std::string input_text;
  std::string target_text;
  std::string record_id;
  std::optional<std::string> class_label;
};

inline std::string join(const std::vector<std::string>& parts, std::string_view sep = ".") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline TaskExample format_example(const ReactionRecord& r, Task t, bool multi_task) {
  TaskExample ex;
  ex.task = t;
  ex.record_id = r.id;
  ex.class_label = r.class_label;
  std::string body;
  switch (t) {
    case Task::fwd: {
      auto left = r.reactants;
      left.insert(left.end(), r.reagents.begin(), r.reagents.end());
      body = join(left) + ">";
      ex.target_text = join(r.products);
      break;
    }
    case Task::reag:
      body = join(r.reactants) + "." + join(r.products) + ">";
      ex.target_text = join(r.reagents);
      break;
    case Task::retro:
      body = join(r.products) + ">";
      ex.target_text = join(r.reactants);
      break;
  }
  ex.input_text = multi_task ? std::string(task_prefix(t)) + body : body;
  return ex;
}

/// One example per (record, applicable task), tasks in fwd, retro, reag
/// order. REAG is skipped for records without reagents; the number skipped
/// is reported through `skipped_reag`.
inline std::vector<TaskExample> format_tasks(const std::vector<ReactionRecord>& records,
                                             const std::set<Task>& tasks, bool multi_task,
                                             std::size_t* skipped_reag = nullptr) {
  if (tasks.empty()) throw ContractError("format_tasks: no tasks selected");
  std::vector<TaskExample> out;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    for (Task t : tasks) {
      if (t == Task::reag && r.reagents.empty()) {
        ++skipped;
        continue;
      }
      out.push_back(format_example(r, t, multi_task));
    }
  }
  if (skipped_reag) *skipped_reag = skipped;
  return out;
}

}  // namespace lorachem
