// Copyright 2026 The simalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "simalign/artifacts.hpp"
#include "simalign/trainer.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Ablation harness: each suite is a list of labeled config variants run over
// several seeds; every (variant, seed) cell regenerates its benchmark,
// reuses one pretrained detector per seed, adapts, and records the final
// full-target evaluation.
// ---------------------------------------------------------------------------

enum class BankKind { kNone, kSource, kSourceAndVariants };

struct SuiteVariant {
  std::string label;
  TrainConfig train;
  BankKind bank = BankKind::kSource;
};

struct AblationCell {
  std::string label;
  uint64_t seed = 0;
  double map = 0.0;
  double accuracy = 0.0;
  bool failed = false;
  std::string error;
};

struct AblationRow {
  std::string label;
  int n = 0;
  double map_mean = 0.0, map_sd = 0.0;
  double accuracy_mean = 0.0, accuracy_sd = 0.0;
};

struct AblationTable {
  std::string suite;
  std::vector<AblationCell> cells;
  std::vector<AblationRow> rows;
};

inline const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> kSuites = {
      "strategies", "memory_vs_batch", "fg_bg",        "subsampling",
      "delta_sweep", "k_sweep",        "lambda2_sweep", "lambda3_sweep"};
  return kSuites;
}

inline std::vector<SuiteVariant> suite_variants(const std::string& suite,
                                                const TrainConfig& base) {
  std::vector<SuiteVariant> out;
  auto push = [&](const std::string& label, std::function<void(TrainConfig&)> tweak,
                  BankKind bank = BankKind::kSource) {
    SuiteVariant v;
    v.label = label;
    v.train = base;
    tweak(v.train);
    v.bank = bank;
    out.push_back(std::move(v));
  };

  if (suite == "strategies") {
    push("domain_only", [](TrainConfig& c) { c.mode = AlignmentMode::kProvenanceDomainOnly; },
         BankKind::kSourceAndVariants);
    push("color", [](TrainConfig& c) { c.mode = AlignmentMode::kProvenanceColor; },
         BankKind::kSourceAndVariants);
    push("rotation", [](TrainConfig& c) { c.mode = AlignmentMode::kProvenanceRotation; },
         BankKind::kSourceAndVariants);
    push("color_rotation",
         [](TrainConfig& c) { c.mode = AlignmentMode::kProvenanceColorRotation; },
         BankKind::kSourceAndVariants);
  } else if (suite == "memory_vs_batch") {
    push("memory_similar", [](TrainConfig& c) { c.mode = AlignmentMode::kMemorySimilar; });
    push("batch_c2c", [](TrainConfig& c) { c.mode = AlignmentMode::kBatchC2C; }, BankKind::kNone);
    push("category_agnostic", [](TrainConfig& c) { c.mode = AlignmentMode::kCategoryAgnostic; },
         BankKind::kNone);
    push("prototype", [](TrainConfig& c) { c.mode = AlignmentMode::kPrototype; }, BankKind::kNone);
  } else if (suite == "fg_bg") {
    push("fg_only", [](TrainConfig& c) { c.bg_weight = 0.0f; });
    push("bg_only", [](TrainConfig& c) { c.fg_weight = 0.0f; });
    push("fg_bg", [](TrainConfig&) {});
  } else if (suite == "subsampling") {
    push("full", [](TrainConfig& c) { c.subsample = SubsampleMethod::kNone; });
    push("coreset", [](TrainConfig& c) { c.subsample = SubsampleMethod::kCoreset; });
    push("random", [](TrainConfig& c) { c.subsample = SubsampleMethod::kRandom; });
  } else if (suite == "delta_sweep") {
    for (float delta : {0.0f, 0.4f, 0.6f, 0.8f, 0.9f})
      push("delta_" + format_double(delta),
           [delta](TrainConfig& c) { c.confidence_threshold = delta; });
  } else if (suite == "k_sweep") {
    for (int k : {1, 10, 30})
      push("k_" + std::to_string(k), [k](TrainConfig& c) { c.top_k = k; });
  } else if (suite == "lambda2_sweep") {
    for (float w : {0.0f, 0.01f, 0.05f, 0.1f})
      push("fg_weight_" + format_double(w), [w](TrainConfig& c) { c.fg_weight = w; });
  } else if (suite == "lambda3_sweep") {
    for (float w : {0.0f, 0.001f, 0.01f, 0.05f, 0.1f})
      push("bg_weight_" + format_double(w), [w](TrainConfig& c) { c.bg_weight = w; });
  } else {
    std::string valid;
    for (const auto& s : ablation_suites()) {
      if (!valid.empty()) valid += ", ";
      valid += s;
    }
    throw ValidationError("unknown suite '" + suite + "'; valid suites: " + valid);
  }
  return out;
}

namespace detail {

inline void finalize_rows(AblationTable& table, const std::vector<SuiteVariant>& variants) {
  for (const auto& v : variants) {
    AblationRow row;
    row.label = v.label;
    std::vector<double> maps, accs;
    for (const auto& cell : table.cells) {
      if (cell.label != v.label || cell.failed) continue;
      maps.push_back(cell.map);
      accs.push_back(cell.accuracy);
    }
    row.n = static_cast<int>(maps.size());
    auto mean_sd = [](const std::vector<double>& xs, double& mean, double& sd) {
      if (xs.empty()) {
        mean = sd = 0.0;
        return;
      }
      mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      sd = 0.0;
      if (xs.size() > 1) {
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(xs.size() - 1));
      }
    };
    mean_sd(maps, row.map_mean, row.map_sd);
    mean_sd(accs, row.accuracy_mean, row.accuracy_sd);
    table.rows.push_back(std::move(row));
  }
}

}  // namespace detail

/// One seed's shared artifacts within a suite run.
struct SeedContext {
  Benchmark bench;
  DetectorParams pretrained;
  std::map<int, MemoryBank> banks;  // keyed by BankKind

  MemoryBank& bank_for(BankKind kind, const DetectorParams& d, int threads) {
    int key = static_cast<int>(kind);
    auto it = banks.find(key);
    if (it != banks.end()) return it->second;
    std::vector<const SceneSample*> pool = scene_ptrs(bench.source);
    if (kind == BankKind::kSourceAndVariants)
      for (const auto* p : scene_ptrs(bench.variants)) pool.push_back(p);
    return banks.emplace(key, build_memory_bank(pool, d, 0, threads)).first->second;
  }

  std::vector<const SceneSample*> pool_for(BankKind kind) const {
    std::vector<const SceneSample*> pool = scene_ptrs(bench.source);
    if (kind == BankKind::kSourceAndVariants)
      for (const auto* p : scene_ptrs(bench.variants)) pool.push_back(p);
    return pool;
  }
};

/// Runs one suite over `seeds` seeds. Cell failures are recorded and the
/// suite continues. The per-seed dataset and pretrained detector are shared
/// across the suite's variants.
inline AblationTable run_ablation(const std::string& suite, const ExperimentConfig& base,
                                  int seeds, const DetectorConfig& dcfg,
                                  const std::function<void(const AblationCell&)>& on_cell = nullptr) {
  if (seeds < 1) throw ValidationError("run_ablation: seeds must be >= 1");
  std::vector<SuiteVariant> variants = suite_variants(suite, base.train);
  AblationTable table;
  table.suite = suite;
  int threads = resolve_threads(base.train.threads);

  for (int s = 0; s < seeds; ++s) {
    uint64_t seed = base.train.seed + static_cast<uint64_t>(s);
    SeedContext ctx;
    ctx.bench = generate_benchmark(base.data, seed, threads);
    TrainConfig pre_cfg = base.train;
    pre_cfg.seed = seed;
    ctx.pretrained = pretrain_source(ctx.bench.source, dcfg, pre_cfg).detector;

    for (const auto& variant : variants) {
      AblationCell cell;
      cell.label = variant.label;
      cell.seed = seed;
      try {
        TrainConfig cfg = variant.train;
        cfg.seed = seed;
        MemoryContext memory;
        MemoryBank working_bank;
        if (variant.bank != BankKind::kNone) {
          working_bank = ctx.bank_for(variant.bank, ctx.pretrained, threads);
          if (cfg.subsample != SubsampleMethod::kNone) {
            RngStream sub_rng = RngStream(seed).substream(stream_salt::kSubsample);
            working_bank =
                subsample_bank(working_bank, cfg.subsample, cfg.keep_fg, cfg.keep_bg, sub_rng);
          }
          memory.bank = &working_bank;
          memory.provenance = &ctx.bench.provenance;
          memory.refresh_pool = ctx.pool_for(variant.bank);
        }
        AdaptResult run = adapt(ctx.bench.source, ctx.bench.target, ctx.pretrained,
                                variant.bank != BankKind::kNone ? &memory : nullptr, cfg);
        cell.map = run.final_eval.map;
        cell.accuracy = run.final_eval.accuracy;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      if (on_cell) on_cell(cell);
      table.cells.push_back(std::move(cell));
    }
  }
  detail::finalize_rows(table, variants);
  return table;
}

// ---------------------------------------------------------------------------
// Machine-readable outputs.
// ---------------------------------------------------------------------------

inline std::string ablation_cells_csv(const AblationTable& table) {
  std::string out = "suite,label,seed,map,accuracy,failed,error\n";
  for (const auto& c : table.cells) {
    std::string err = c.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out += table.suite + "," + c.label + "," + std::to_string(c.seed) + "," +
           format_double(c.map) + "," + format_double(c.accuracy) + "," +
           (c.failed ? "1" : "0") + "," + err + "\n";
  }
  return out;
}

inline std::string ablation_summary_csv(const AblationTable& table) {
  std::string out = "suite,label,n,map_mean,map_sd,accuracy_mean,accuracy_sd\n";
  for (const auto& r : table.rows)
    out += table.suite + "," + r.label + "," + std::to_string(r.n) + "," +
           format_double(r.map_mean) + "," + format_double(r.map_sd) + "," +
           format_double(r.accuracy_mean) + "," + format_double(r.accuracy_sd) + "\n";
  return out;
}

}  // namespace simalign
