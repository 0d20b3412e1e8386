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
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "simalign/detector.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Source feature memory: one foreground entry per labeled box (class-
// partitioned) and one background entry per scene. A bank is immutable
// between refreshes; refresh recomputes vectors in place, preserving uids.
// ---------------------------------------------------------------------------

struct ForegroundEntry {
  Tensor g;  // D-dim instance embedding
  int class_id = 0;
  uint64_t scene_uid = 0;
  uint64_t object_uid = 0;
};

struct BackgroundEntry {
  Tensor bg;  // D-dim background embedding
  uint64_t scene_uid = 0;
};

struct MemoryBank {
  std::vector<std::vector<ForegroundEntry>> fg;  // indexed by class
  std::vector<BackgroundEntry> bg;
  int64_t built_at = 0;
  int refresh_interval = 2;  // epochs between refreshes
  uint64_t extractor_hash = 0;
  int skipped = 0;  // degenerate boxes / zero embeddings dropped during build

  size_t fg_count() const {
    size_t n = 0;
    for (const auto& part : fg) n += part.size();
    return n;
  }

  const ForegroundEntry* find_object(uint64_t object_uid) const {
    for (const auto& part : fg)
      for (const auto& e : part)
        if (e.object_uid == object_uid) return &e;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Feature computation shared by bank building and refresh.
// ---------------------------------------------------------------------------

/// Instance embedding of one ground-truth box: det_head(box_pool(f(x))).
inline Tensor fg_embedding(const FeatureMap& fm, const AnnotatedBox& box,
                           const DetectorParams& d) {
  Tensor pooled = box_pool(fm.t, fm.to_cell_space(box.as_boxf()), d.cfg.pool_size);
  return det_head(pooled_to_row(pooled), d).g;
}

/// Scene background embedding: det_head(adaptive_pool(mask(f(x), boxes))).
inline Tensor bg_embedding(const FeatureMap& fm, const std::vector<AnnotatedBox>& boxes,
                           const DetectorParams& d) {
  std::vector<BoxF> cell_boxes;
  cell_boxes.reserve(boxes.size());
  for (const auto& b : boxes) cell_boxes.push_back(fm.to_cell_space(b.as_boxf()));
  Tensor masked = mask_background(fm.t, cell_boxes);
  Tensor pooled = adaptive_pool(masked, d.cfg.pool_size);
  return det_head(pooled_to_row(pooled), d).g;
}

namespace detail {

struct SceneFeatures {
  std::vector<ForegroundEntry> fg;
  BackgroundEntry bg;
  int skipped = 0;
};

inline SceneFeatures compute_scene_features(const SceneSample& scene, const DetectorParams& d) {
  SceneFeatures out;
  FeatureMap fm = extract_features(scene.image, d);
  for (const auto& box : scene.boxes) {
    try {
      Tensor g = fg_embedding(fm, box, d);
      if (norm64(g) <= 0.0) {
        ++out.skipped;
        continue;
      }
      out.fg.push_back(ForegroundEntry{std::move(g), box.class_id, scene.scene_uid, box.object_uid});
    } catch (const DegenerateBoxError&) {
      ++out.skipped;
    }
  }
  out.bg = BackgroundEntry{bg_embedding(fm, scene.boxes, d), scene.scene_uid};
  return out;
}

}  // namespace detail

/// Builds both memories over the scene pool. One foreground entry per
/// labeled box (degenerates skipped and counted), one background entry per
/// scene, partitioned by class.
inline MemoryBank build_memory_bank(const std::vector<const SceneSample*>& scenes,
                                    const DetectorParams& d, int64_t built_at = 0,
                                    int threads = 1) {
  MemoryBank bank;
  bank.fg.resize(static_cast<size_t>(d.cfg.num_classes));
  bank.built_at = built_at;
  bank.extractor_hash = d.content_hash();

  std::vector<detail::SceneFeatures> per_scene(scenes.size());
  parallel_for(scenes.size(), threads,
               [&](size_t i) { per_scene[i] = detail::compute_scene_features(*scenes[i], d); });

  std::set<std::pair<uint64_t, uint64_t>> seen;
  for (auto& sf : per_scene) {
    bank.skipped += sf.skipped;
    for (auto& e : sf.fg) {
      if (e.class_id < 0 || e.class_id >= d.cfg.num_classes)
        throw ArgumentError("memory: class id out of range");
      if (!seen.emplace(e.scene_uid, e.object_uid).second)
        throw UsageError("memory: duplicate (scene, object) pair");
      bank.fg[static_cast<size_t>(e.class_id)].push_back(std::move(e));
    }
    bank.bg.push_back(std::move(sf.bg));
  }
  return bank;
}

inline std::vector<const SceneSample*> scene_ptrs(const Dataset& ds) {
  std::vector<const SceneSample*> out;
  out.reserve(ds.scenes.size());
  for (const auto& s : ds.scenes) out.push_back(&s);
  return out;
}

/// Foreground memory only (per-class entries), as a standalone operation.
inline std::vector<std::vector<ForegroundEntry>> build_foreground_memory(
    const Dataset& source, const DetectorParams& d, int* skipped = nullptr, int threads = 1) {
  MemoryBank bank = build_memory_bank(scene_ptrs(source), d, 0, threads);
  if (skipped) *skipped = bank.skipped;
  return std::move(bank.fg);
}

/// Background memory only, one entry per scene.
inline std::vector<BackgroundEntry> build_background_memory(const Dataset& source,
                                                            const DetectorParams& d,
                                                            int threads = 1) {
  MemoryBank bank = build_memory_bank(scene_ptrs(source), d, 0, threads);
  return std::move(bank.bg);
}

enum class RefreshStatus { kRefreshed, kTooEarly };

/// Recomputes every entry with the current weights, preserving uids and
/// counts. A call before the refresh interval has elapsed is a no-op.
inline RefreshStatus refresh(MemoryBank& bank, const std::vector<const SceneSample*>& scenes,
                             const DetectorParams& d, int64_t current_step, int threads = 1) {
  if (current_step - bank.built_at < bank.refresh_interval) return RefreshStatus::kTooEarly;

  std::map<uint64_t, const SceneSample*> by_uid;
  for (const SceneSample* s : scenes) by_uid.emplace(s->scene_uid, s);

  // Group entry indices by scene so each feature map is computed once.
  struct SceneWork {
    const SceneSample* scene = nullptr;
    std::vector<std::pair<int, size_t>> fg_slots;  // (class, index)
    std::vector<size_t> bg_slots;
  };
  std::map<uint64_t, SceneWork> work;
  auto scene_of = [&](uint64_t uid) -> const SceneSample* {
    auto it = by_uid.find(uid);
    if (it == by_uid.end())
      throw UsageError("refresh: scene " + hex64(uid) + " missing from pool");
    return it->second;
  };
  for (int c = 0; c < static_cast<int>(bank.fg.size()); ++c)
    for (size_t i = 0; i < bank.fg[static_cast<size_t>(c)].size(); ++i) {
      const auto& e = bank.fg[static_cast<size_t>(c)][i];
      SceneWork& w = work[e.scene_uid];
      w.scene = scene_of(e.scene_uid);
      w.fg_slots.emplace_back(c, i);
    }
  for (size_t i = 0; i < bank.bg.size(); ++i) {
    SceneWork& w = work[bank.bg[i].scene_uid];
    w.scene = scene_of(bank.bg[i].scene_uid);
    w.bg_slots.push_back(i);
  }

  std::vector<SceneWork*> jobs;
  jobs.reserve(work.size());
  for (auto& [uid, w] : work) jobs.push_back(&w);
  parallel_for(jobs.size(), threads, [&](size_t j) {
    SceneWork& w = *jobs[j];
    FeatureMap fm = extract_features(w.scene->image, d);
    for (auto [c, idx] : w.fg_slots) {
      ForegroundEntry& e = bank.fg[static_cast<size_t>(c)][idx];
      const AnnotatedBox* box = nullptr;
      for (const auto& b : w.scene->boxes)
        if (b.object_uid == e.object_uid) box = &b;
      if (!box) throw UsageError("refresh: object " + hex64(e.object_uid) + " missing from scene");
      Tensor g = fg_embedding(fm, *box, d);
      if (norm64(g) > 0.0) e.g = std::move(g);  // keep the old vector over a degenerate refresh
    }
    for (size_t idx : w.bg_slots)
      bank.bg[idx].bg = bg_embedding(fm, w.scene->boxes, d);
  });

  bank.built_at = current_step;
  bank.extractor_hash = d.content_hash();
  return RefreshStatus::kRefreshed;
}

// ---------------------------------------------------------------------------
// Subsampling. Coreset selection is k-center greedy: seed with the point
// nearest the mean, then repeatedly add the point whose distance to the
// selected set is largest. Ties resolve to the lowest index.
// ---------------------------------------------------------------------------

/// Raw k-center greedy over arbitrary vectors; returns indices in selection
/// order.
inline std::vector<size_t> coreset_greedy(const std::vector<Tensor>& points, size_t k) {
  if (points.empty()) throw ArgumentError("coreset_greedy: empty input");
  k = std::min(k, points.size());
  size_t dim = points[0].numel();
  std::vector<double> mean(dim, 0.0);
  for (const auto& p : points)
    for (size_t i = 0; i < dim; ++i) mean[i] += p.data[i];
  for (double& v : mean) v /= static_cast<double>(points.size());

  auto dist_to_mean = [&](const Tensor& p) {
    double acc = 0.0;
    for (size_t i = 0; i < dim; ++i) {
      double diff = static_cast<double>(p.data[i]) - mean[i];
      acc += diff * diff;
    }
    return acc;
  };

  size_t seed = 0;
  double best = dist_to_mean(points[0]);
  for (size_t i = 1; i < points.size(); ++i) {
    double di = dist_to_mean(points[i]);
    if (di < best) {
      best = di;
      seed = i;
    }
  }

  std::vector<size_t> selected = {seed};
  std::vector<double> min_dist(points.size());
  for (size_t i = 0; i < points.size(); ++i) min_dist[i] = squared_distance(points[i], points[seed]);
  while (selected.size() < k) {
    size_t next = 0;
    double far = -1.0;
    for (size_t i = 0; i < points.size(); ++i) {
      if (min_dist[i] > far) {
        far = min_dist[i];
        next = i;
      }
    }
    selected.push_back(next);
    for (size_t i = 0; i < points.size(); ++i)
      min_dist[i] = std::min(min_dist[i], squared_distance(points[i], points[next]));
  }
  return selected;
}

namespace detail {

inline Tensor safe_normalize(const Tensor& v) {
  double n = norm64(v);
  if (n <= 0.0) return v;  // zero vectors stay at the origin
  Tensor out = v;
  for (float& x : out.data) x = static_cast<float>(x / n);
  return out;
}

inline size_t keep_count(size_t n, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw ArgumentError("subsample: keep ratio must be in (0, 1]");
  if (n == 0) throw ArgumentError("subsample: empty input");
  auto k = static_cast<size_t>(std::ceil(keep_ratio * static_cast<double>(n)));
  return std::clamp<size_t>(k, 1, n);
}

}  // namespace detail

/// Coreset selection on L2-normalized vectors (consistent with cosine
/// retrieval); returns kept indices in ascending order.
inline std::vector<size_t> coreset_select(const std::vector<Tensor>& vectors, double keep_ratio) {
  size_t k = detail::keep_count(vectors.size(), keep_ratio);
  std::vector<Tensor> normalized;
  normalized.reserve(vectors.size());
  for (const auto& v : vectors) normalized.push_back(detail::safe_normalize(v));
  std::vector<size_t> picked = coreset_greedy(normalized, k);
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Uniform sample without replacement; returns kept indices ascending.
inline std::vector<size_t> random_select(size_t n, double keep_ratio, RngStream& rng) {
  size_t k = detail::keep_count(n, keep_ratio);
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

enum class SubsampleMethod { kNone, kCoreset, kRandom };

/// Applies the configured subsampling: per-class for the foreground memory,
/// global for the background memory. Returns a new bank.
inline MemoryBank subsample_bank(const MemoryBank& bank, SubsampleMethod method, double keep_fg,
                                 double keep_bg, RngStream& rng) {
  if (method == SubsampleMethod::kNone) return bank;
  MemoryBank out = bank;
  for (auto& part : out.fg) {
    if (part.empty()) continue;
    std::vector<size_t> kept;
    if (method == SubsampleMethod::kCoreset) {
      std::vector<Tensor> vectors;
      vectors.reserve(part.size());
      for (const auto& e : part) vectors.push_back(e.g);
      kept = coreset_select(vectors, keep_fg);
    } else {
      kept = random_select(part.size(), keep_fg, rng);
    }
    std::vector<ForegroundEntry> subset;
    subset.reserve(kept.size());
    for (size_t i : kept) subset.push_back(part[i]);
    part = std::move(subset);
  }
  if (!out.bg.empty()) {
    std::vector<size_t> kept;
    if (method == SubsampleMethod::kCoreset) {
      std::vector<Tensor> vectors;
      vectors.reserve(out.bg.size());
      for (const auto& e : out.bg) vectors.push_back(e.bg);
      kept = coreset_select(vectors, keep_bg);
    } else {
      kept = random_select(out.bg.size(), keep_bg, rng);
    }
    std::vector<BackgroundEntry> subset;
    subset.reserve(kept.size());
    for (size_t i : kept) subset.push_back(out.bg[i]);
    out.bg = std::move(subset);
  }
  return out;
}

/// Max over dropped points of the distance to the nearest kept point.
inline double covering_radius(const std::vector<Tensor>& all, const std::vector<size_t>& kept) {
  if (kept.empty()) throw ArgumentError("covering_radius: empty subset");
  std::set<size_t> kept_set(kept.begin(), kept.end());
  double radius = 0.0;
  for (size_t i = 0; i < all.size(); ++i) {
    if (kept_set.count(i)) continue;
    double best = std::numeric_limits<double>::infinity();
    for (size_t j : kept) best = std::min(best, squared_distance(all[i], all[j]));
    radius = std::max(radius, std::sqrt(best));
  }
  return radius;
}

}  // namespace simalign
