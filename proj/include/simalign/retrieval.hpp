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

#include <algorithm>
#include <vector>

#include "simalign/memory_bank.hpp"

namespace simalign {

/// The requested class partition is empty (or holds no usable vectors).
struct ClassUnavailableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// No cross-category negative exists (single-class bank).
struct NegativeUnavailableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Alignment strategies for the provenance-driven hypothesis experiment.
enum class StrategyMode { kDomainOnly, kColor, kRotation, kColorRotation };

struct RetrievedFg {
  const ForegroundEntry* entry = nullptr;
  double similarity = 0.0;
};

struct RetrievedBg {
  const BackgroundEntry* entry = nullptr;
  double similarity = 0.0;
};

/// Most-similar same-class entry by cosine; exhaustive exact scan, ties
/// broken by lowest object uid.
inline RetrievedFg retrieve_fg_positive(const Tensor& g_t, int class_id, const MemoryBank& bank) {
  if (class_id < 0 || class_id >= static_cast<int>(bank.fg.size()))
    throw ClassUnavailableError("retrieve_fg_positive: class " + std::to_string(class_id) +
                                " out of range");
  const auto& part = bank.fg[static_cast<size_t>(class_id)];
  RetrievedFg best;
  for (const auto& e : part) {
    double sim = cosine_similarity(g_t, e.g);
    if (!best.entry || sim > best.similarity ||
        (sim == best.similarity && e.object_uid < best.entry->object_uid)) {
      best.entry = &e;
      best.similarity = sim;
    }
  }
  if (!best.entry)
    throw ClassUnavailableError("retrieve_fg_positive: empty partition for class " +
                                std::to_string(class_id));
  return best;
}

/// Most-similar background entry; zero vectors cannot participate in cosine
/// similarity and are skipped.
inline RetrievedBg retrieve_bg_positive(const Tensor& bg_t, const MemoryBank& bank) {
  RetrievedBg best;
  for (const auto& e : bank.bg) {
    if (norm64(e.bg) <= 0.0) continue;
    double sim = cosine_similarity(bg_t, e.bg);
    if (!best.entry || sim > best.similarity ||
        (sim == best.similarity && e.scene_uid < best.entry->scene_uid)) {
      best.entry = &e;
      best.similarity = sim;
    }
  }
  if (!best.entry)
    throw ClassUnavailableError("retrieve_bg_positive: background memory empty or degenerate");
  return best;
}

/// Uniform draw over all entries whose class differs from `class_id`.
inline const ForegroundEntry* sample_negative(int class_id, const MemoryBank& bank,
                                              RngStream& rng) {
  size_t total = 0;
  for (int c = 0; c < static_cast<int>(bank.fg.size()); ++c)
    if (c != class_id) total += bank.fg[static_cast<size_t>(c)].size();
  if (total == 0)
    throw NegativeUnavailableError("sample_negative: no entries outside class " +
                                   std::to_string(class_id));
  size_t pick = rng.uniform_int(total);
  for (int c = 0; c < static_cast<int>(bank.fg.size()); ++c) {
    if (c == class_id) continue;
    const auto& part = bank.fg[static_cast<size_t>(c)];
    if (pick < part.size()) return &part[pick];
    pick -= part.size();
  }
  throw NegativeUnavailableError("sample_negative: internal indexing error");
}

/// K most-similar same-class entries, descending similarity; ties broken by
/// lowest object uid. Returns fewer when the partition is smaller than K.
inline std::vector<RetrievedFg> retrieve_topk(const Tensor& g_t, int class_id,
                                              const MemoryBank& bank, int k) {
  if (k < 1) throw ArgumentError("retrieve_topk: K must be >= 1");
  if (class_id < 0 || class_id >= static_cast<int>(bank.fg.size()))
    throw ClassUnavailableError("retrieve_topk: class out of range");
  const auto& part = bank.fg[static_cast<size_t>(class_id)];
  if (part.empty())
    throw ClassUnavailableError("retrieve_topk: empty partition for class " +
                                std::to_string(class_id));
  std::vector<RetrievedFg> scored;
  scored.reserve(part.size());
  for (const auto& e : part) scored.push_back({&e, cosine_similarity(g_t, e.g)});
  std::sort(scored.begin(), scored.end(), [](const RetrievedFg& a, const RetrievedFg& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry->object_uid < b.entry->object_uid;
  });
  if (scored.size() > static_cast<size_t>(k)) scored.resize(static_cast<size_t>(k));
  return scored;
}

/// Provenance-driven retrieval: the exact source counterpart of a target
/// object (domain-only) or its color / rotation / color+rotation sibling.
inline const ForegroundEntry* retrieve_by_strategy(uint64_t target_object_uid,
                                                   const ProvenanceIndex& index,
                                                   const MemoryBank& bank, StrategyMode mode) {
  const SiblingSet& siblings = index.resolve_object(target_object_uid);
  uint64_t wanted = 0;
  switch (mode) {
    case StrategyMode::kDomainOnly: wanted = siblings.source; break;
    case StrategyMode::kColor: wanted = siblings.color; break;
    case StrategyMode::kRotation: wanted = siblings.rotation; break;
    case StrategyMode::kColorRotation: wanted = siblings.color_rotation; break;
  }
  const ForegroundEntry* entry = bank.find_object(wanted);
  if (!entry)
    throw ProvenanceError("retrieve_by_strategy: bank lacks entry for object " + hex64(wanted));
  return entry;
}

}  // namespace simalign
