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

#include <set>
#include <string>

#include <json.hpp>

#include "simalign/dataset_io.hpp"
#include "simalign/memory_bank.hpp"
#include "simalign/retrieval.hpp"

namespace simalign {

inline constexpr int kConfigSchemaVersion = 1;

enum class AlignmentMode {
  kMemorySimilar,
  kBatchC2C,
  kCategoryAgnostic,
  kPrototype,
  kProvenanceDomainOnly,
  kProvenanceColor,
  kProvenanceRotation,
  kProvenanceColorRotation,
};

inline bool is_provenance_mode(AlignmentMode m) {
  return m == AlignmentMode::kProvenanceDomainOnly || m == AlignmentMode::kProvenanceColor ||
         m == AlignmentMode::kProvenanceRotation || m == AlignmentMode::kProvenanceColorRotation;
}

/// Modes whose positives come from the precomputed memory bank.
inline bool is_memory_mode(AlignmentMode m) {
  return m == AlignmentMode::kMemorySimilar || is_provenance_mode(m);
}

inline StrategyMode strategy_of(AlignmentMode m) {
  switch (m) {
    case AlignmentMode::kProvenanceDomainOnly: return StrategyMode::kDomainOnly;
    case AlignmentMode::kProvenanceColor: return StrategyMode::kColor;
    case AlignmentMode::kProvenanceRotation: return StrategyMode::kRotation;
    case AlignmentMode::kProvenanceColorRotation: return StrategyMode::kColorRotation;
    default: throw ArgumentError("strategy_of: not a provenance mode");
  }
}

inline std::string to_string(AlignmentMode m) {
  switch (m) {
    case AlignmentMode::kMemorySimilar: return "memory_similar";
    case AlignmentMode::kBatchC2C: return "batch_c2c";
    case AlignmentMode::kCategoryAgnostic: return "category_agnostic";
    case AlignmentMode::kPrototype: return "prototype";
    case AlignmentMode::kProvenanceDomainOnly: return "provenance:domain_only";
    case AlignmentMode::kProvenanceColor: return "provenance:color";
    case AlignmentMode::kProvenanceRotation: return "provenance:rotation";
    case AlignmentMode::kProvenanceColorRotation: return "provenance:color_rotation";
  }
  throw ArgumentError("unknown alignment mode");
}

inline AlignmentMode alignment_mode_from(const std::string& s) {
  if (s == "memory_similar") return AlignmentMode::kMemorySimilar;
  if (s == "batch_c2c") return AlignmentMode::kBatchC2C;
  if (s == "category_agnostic") return AlignmentMode::kCategoryAgnostic;
  if (s == "prototype") return AlignmentMode::kPrototype;
  if (s == "provenance:domain_only") return AlignmentMode::kProvenanceDomainOnly;
  if (s == "provenance:color") return AlignmentMode::kProvenanceColor;
  if (s == "provenance:rotation") return AlignmentMode::kProvenanceRotation;
  if (s == "provenance:color_rotation") return AlignmentMode::kProvenanceColorRotation;
  throw ValidationError("unknown alignment mode '" + s + "'");
}

inline std::string to_string(SubsampleMethod m) {
  switch (m) {
    case SubsampleMethod::kNone: return "none";
    case SubsampleMethod::kCoreset: return "coreset";
    case SubsampleMethod::kRandom: return "random";
  }
  throw ArgumentError("unknown subsample method");
}

inline SubsampleMethod subsample_method_from(const std::string& s) {
  if (s == "none") return SubsampleMethod::kNone;
  if (s == "coreset") return SubsampleMethod::kCoreset;
  if (s == "random") return SubsampleMethod::kRandom;
  throw ValidationError("unknown subsample method '" + s + "'");
}

/// Every knob of the training objective and loop.
struct TrainConfig {
  float unsup_weight = 1.0f;            // weight of the pseudo-label loss
  float fg_weight = 0.05f;              // weight of the foreground triplet loss
  float bg_weight = 0.05f;              // weight of the adversarial background loss
  float confidence_threshold = 0.8f;    // min detection score on target images
  float triplet_margin = 1.5f;
  int top_k = 1;                        // retrieved positives per target instance
  int negative_count = 1;               // negative set size per pair
  float lr = 0.01f;
  float momentum = 0.9f;
  int pretrain_epochs = 30;
  int adapt_epochs = 30;
  int refresh_interval = 2;             // epochs between memory refreshes
  SubsampleMethod subsample = SubsampleMethod::kNone;
  float keep_fg = 0.5f;
  float keep_bg = 0.3f;
  AlignmentMode mode = AlignmentMode::kMemorySimilar;
  bool fg_enabled = true;
  bool bg_enabled = true;
  uint64_t seed = 1;
  float grl_lambda = 0.25f;  // constant reversal scale (no warm-up schedule)
  float nms_iou = 0.5f;
  int batch_source = 2;
  int batch_target = 2;
  int threads = 0;                      // 0 = hardware concurrency
  int eval_stride = 8;                  // per-epoch trace eval uses every n-th scene

  void validate() const {
    if (unsup_weight < 0 || fg_weight < 0 || bg_weight < 0)
      throw ValidationError("config: loss weights must be >= 0");
    if (!(confidence_threshold >= 0.0f && confidence_threshold <= 1.0f))
      throw ValidationError("config: confidence_threshold must be in [0,1]");
    if (top_k < 1) throw ValidationError("config: top_k must be >= 1");
    if (negative_count < 0) throw ValidationError("config: negative_count must be >= 0");
    if (!(keep_fg > 0.0f && keep_fg <= 1.0f) || !(keep_bg > 0.0f && keep_bg <= 1.0f))
      throw ValidationError("config: keep ratios must be in (0,1]");
    if (pretrain_epochs < 0 || adapt_epochs < 0) throw ValidationError("config: negative epochs");
    if (refresh_interval < 1) throw ValidationError("config: refresh_interval must be >= 1");
    if (batch_source < 1 || batch_target < 1) throw ValidationError("config: batch sizes must be >= 1");
    if (eval_stride < 1) throw ValidationError("config: eval_stride must be >= 1");
    if (!(nms_iou >= 0.0f && nms_iou <= 1.0f)) throw ValidationError("config: nms_iou in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// JSON config with a versioned schema; unknown keys are rejected.
// ---------------------------------------------------------------------------

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"unsup_weight", c.unsup_weight},
              {"fg_weight", c.fg_weight},
              {"bg_weight", c.bg_weight},
              {"confidence_threshold", c.confidence_threshold},
              {"triplet_margin", c.triplet_margin},
              {"top_k", c.top_k},
              {"negative_count", c.negative_count},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"pretrain_epochs", c.pretrain_epochs},
              {"adapt_epochs", c.adapt_epochs},
              {"refresh_interval", c.refresh_interval},
              {"subsample", to_string(c.subsample)},
              {"keep_fg", c.keep_fg},
              {"keep_bg", c.keep_bg},
              {"mode", to_string(c.mode)},
              {"fg_enabled", c.fg_enabled},
              {"bg_enabled", c.bg_enabled},
              {"seed", c.seed},
              {"grl_lambda", c.grl_lambda},
              {"nms_iou", c.nms_iou},
              {"batch_source", c.batch_source},
              {"batch_target", c.batch_target},
              {"threads", c.threads},
              {"eval_stride", c.eval_stride}};
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const std::string& where) {
  std::string offenders;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      if (!offenders.empty()) offenders += ", ";
      offenders += it.key();
    }
  }
  if (!offenders.empty())
    throw ValidationError("config: unknown key(s) in " + where + ": " + offenders);
}

}  // namespace detail

inline TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> kKnown = {
      "unsup_weight",  "fg_weight",      "bg_weight",  "confidence_threshold",
      "triplet_margin", "top_k",         "negative_count", "lr",
      "momentum",      "pretrain_epochs", "adapt_epochs", "refresh_interval",
      "subsample",     "keep_fg",        "keep_bg",    "mode",
      "fg_enabled",    "bg_enabled",     "seed",       "grl_lambda",
      "nms_iou",       "batch_source",   "batch_target", "threads",
      "eval_stride"};
  detail::reject_unknown_keys(j, kKnown, "train");
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("unsup_weight", c.unsup_weight);
  get("fg_weight", c.fg_weight);
  get("bg_weight", c.bg_weight);
  get("confidence_threshold", c.confidence_threshold);
  get("triplet_margin", c.triplet_margin);
  get("top_k", c.top_k);
  get("negative_count", c.negative_count);
  get("lr", c.lr);
  get("momentum", c.momentum);
  get("pretrain_epochs", c.pretrain_epochs);
  get("adapt_epochs", c.adapt_epochs);
  get("refresh_interval", c.refresh_interval);
  if (j.contains("subsample")) c.subsample = subsample_method_from(j.at("subsample").get<std::string>());
  get("keep_fg", c.keep_fg);
  get("keep_bg", c.keep_bg);
  if (j.contains("mode")) c.mode = alignment_mode_from(j.at("mode").get<std::string>());
  get("fg_enabled", c.fg_enabled);
  get("bg_enabled", c.bg_enabled);
  get("seed", c.seed);
  get("grl_lambda", c.grl_lambda);
  get("nms_iou", c.nms_iou);
  get("batch_source", c.batch_source);
  get("batch_target", c.batch_target);
  get("threads", c.threads);
  get("eval_stride", c.eval_stride);
  c.validate();
  return c;
}

/// Full experiment config file: {"schema_version": 1, "data": ..., "train": ...}.
struct ExperimentConfig {
  DataConfig data;
  TrainConfig train;
};

inline json experiment_config_to_json(const ExperimentConfig& c) {
  return json{{"schema_version", kConfigSchemaVersion},
              {"data", data_config_to_json(c.data)},
              {"train", train_config_to_json(c.train)}};
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"schema_version", "data", "train"}, "root");
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw ValidationError("config: missing or unsupported schema_version");
  ExperimentConfig c;
  if (j.contains("data")) {
    static const std::set<std::string> kDataKeys = {"scenes",  "classes",     "image_size",
                                                    "fog",     "min_objects", "max_objects"};
    detail::reject_unknown_keys(j.at("data"), kDataKeys, "data");
    json merged = data_config_to_json(DataConfig{});
    merged.update(j.at("data"));
    c.data = data_config_from_json(merged);
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  return c;
}

inline uint64_t config_hash(const ExperimentConfig& c) {
  return fnv1a(experiment_config_to_json(c).dump());
}

}  // namespace simalign
