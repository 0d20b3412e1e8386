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
#include <optional>
#include <vector>

#include "simalign/alignment.hpp"
#include "simalign/config.hpp"
#include "simalign/eval.hpp"
#include "simalign/memory_bank.hpp"
#include "simalign/retrieval.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_fg = 0.0;
  double l_bg = 0.0;
  double l_total = 0.0;
  double map = 0.0;       // subset eval (every eval_stride-th scene)
  double accuracy = 0.0;
  long fg_pairs = 0;
  long bg_pairs = 0;
  long skipped = 0;       // alignment instances dropped this epoch
};

struct MetricsTrace {
  std::vector<EpochRecord> epochs;
};

// ---------------------------------------------------------------------------
// Anchor classification loss, shared by supervised source training and the
// pseudo-label loss: anchors with IoU >= 0.5 against a labeled box are
// positives of that box's class, negatives are sampled at 3:1 and labeled
// background.
// ---------------------------------------------------------------------------

namespace detail {

struct AnchorSelection {
  std::vector<int> indices;
  std::vector<int> labels;
};

/// Labels anchors against the given boxes (IoU >= 0.5 -> that box's class)
/// and samples background negatives at 3:1. On pseudo-labeled images
/// `bg_prob_floor` restricts negatives to anchors the current model itself
/// rates as background with at least that probability, so undetected real
/// objects are ignored rather than reinforced as background.
inline AnchorSelection select_training_anchors(const std::vector<BoxF>& anchors,
                                               const std::vector<AnnotatedBox>& boxes,
                                               int background_class, RngStream& rng,
                                               const std::vector<float>* bg_probs = nullptr,
                                               float bg_prob_floor = 0.0f) {
  AnchorSelection sel;
  std::vector<int> negative_pool;
  for (size_t a = 0; a < anchors.size(); ++a) {
    double best_iou = 0.0;
    int best_class = -1;
    for (const auto& b : boxes) {
      double overlap = iou(anchors[a], b.as_boxf());
      if (overlap > best_iou) {
        best_iou = overlap;
        best_class = b.class_id;
      }
    }
    if (best_iou >= 0.5) {
      sel.indices.push_back(static_cast<int>(a));
      sel.labels.push_back(best_class);
    } else if (!bg_probs || (*bg_probs)[a] >= bg_prob_floor) {
      negative_pool.push_back(static_cast<int>(a));
    }
  }
  size_t n_neg = std::min(negative_pool.size(), sel.indices.size() * 3);
  for (size_t i = 0; i < n_neg; ++i) {
    size_t j = i + rng.uniform_int(negative_pool.size() - i);
    std::swap(negative_pool[i], negative_pool[j]);
    sel.indices.push_back(negative_pool[i]);
    sel.labels.push_back(background_class);
  }
  return sel;
}

struct AnchorLossWork {
  bool valid = false;
  double loss = 0.0;
  std::vector<BoxPoolCache> pool_caches;
  DetHeadCache head_cache;
  Tensor grad_logits;  // [n, C+1], mean-normalized CE gradient
};

inline AnchorLossWork anchor_loss_forward(const FeatureMap& fm, const std::vector<BoxF>& anchors,
                                          const AnchorSelection& sel, const DetectorParams& d) {
  AnchorLossWork work;
  if (sel.indices.empty()) return work;
  int n = static_cast<int>(sel.indices.size());
  int flen = d.cfg.pooled_len();
  Tensor rows({n, flen});
  work.pool_caches.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Tensor pooled = box_pool(fm.t, fm.to_cell_space(anchors[static_cast<size_t>(sel.indices[static_cast<size_t>(i)])]),
                             d.cfg.pool_size, &work.pool_caches[static_cast<size_t>(i)]);
    std::copy(pooled.data.begin(), pooled.data.end(), rows.data.begin() + static_cast<long>(i) * flen);
  }
  HeadOutput out = det_head(rows, d, &work.head_cache);
  int n_logits = d.cfg.num_classes + 1;
  work.grad_logits = Tensor({n, n_logits});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor row({n_logits});
    std::copy(out.logits.data.begin() + static_cast<long>(i) * n_logits,
              out.logits.data.begin() + static_cast<long>(i + 1) * n_logits, row.data.begin());
    SoftmaxResult ce = softmax_cross_entropy(row, sel.labels[static_cast<size_t>(i)]);
    total += ce.loss;
    for (int c = 0; c < n_logits; ++c)
      work.grad_logits.at(i, c) = ce.grad_logits.data[static_cast<size_t>(c)] / static_cast<float>(n);
  }
  work.loss = total / n;
  work.valid = true;
  return work;
}

/// Routes the CE gradient through head and pooling into grad_fmap and the
/// parameter gradients, applying `scale` on the way.
inline void anchor_loss_backward(AnchorLossWork& work, const DetectorParams& d, float scale,
                                 GradMap& grads, Tensor& grad_fmap) {
  if (!work.valid) return;
  Tensor grad_rows = det_head_backward(work.head_cache, scaled(work.grad_logits, scale),
                                       std::nullopt, d, grads);
  int flen = d.cfg.pooled_len();
  int p = d.cfg.pool_size, cf = d.cfg.feat_channels;
  for (size_t i = 0; i < work.pool_caches.size(); ++i) {
    Tensor slice({p, p, cf});
    std::copy(grad_rows.data.begin() + static_cast<long>(i) * flen,
              grad_rows.data.begin() + static_cast<long>(i + 1) * flen, slice.data.begin());
    box_pool_backward(slice, work.pool_caches[i], grad_fmap);
  }
}

}  // namespace detail

/// Confidence-thresholded detections converted to hard labels.
inline std::vector<AnnotatedBox> pseudo_label(const SceneSample& scene, const DetectorParams& d,
                                              float delta, float nms_iou = 0.5f) {
  std::vector<AnnotatedBox> labels;
  for (const auto& det : propose_and_detect(scene.image, d, delta, nms_iou)) {
    labels.push_back(AnnotatedBox{static_cast<int>(std::lround(det.box.x0)),
                                  static_cast<int>(std::lround(det.box.y0)),
                                  static_cast<int>(std::lround(det.box.x1)),
                                  static_cast<int>(std::lround(det.box.y1)), det.class_id, 0});
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Source pretraining.
// ---------------------------------------------------------------------------

struct PretrainResult {
  DetectorParams detector;
  MetricsTrace trace;
  EvalReport final_eval;  // full source-domain evaluation
};

namespace detail {

inline std::vector<size_t> shuffled_indices(size_t n, RngStream rng) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t i = n; i > 1; --i) {
    size_t j = rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

inline std::vector<const SceneSample*> eval_subset(const Dataset& ds, int stride) {
  std::vector<const SceneSample*> subset;
  for (size_t i = 0; i < ds.scenes.size(); i += static_cast<size_t>(stride))
    subset.push_back(&ds.scenes[i]);
  return subset;
}

}  // namespace detail

inline PretrainResult pretrain_source(const Dataset& source, const DetectorConfig& dcfg,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (source.scenes.empty()) throw ArgumentError("pretrain_source: empty dataset");
  RngStream root(cfg.seed);
  RngStream init_rng = root.substream(stream_salt::kInit);
  PretrainResult result;
  result.detector = init_detector(dcfg, init_rng);

  const SceneSample& probe = source.scenes[0];
  std::vector<BoxF> anchors = anchor_grid(probe.height(), probe.width(), dcfg.anchors);
  int batch = cfg.batch_source + cfg.batch_target;
  int threads = resolve_threads(cfg.threads);

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    RngStream epoch_rng = root.substream(stream_salt::kShuffle).substream(static_cast<uint64_t>(epoch));
    std::vector<size_t> order = detail::shuffled_indices(source.scenes.size(), epoch_rng);

    double epoch_loss = 0.0;
    long steps = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch)) {
      size_t count = std::min<size_t>(static_cast<size_t>(batch), order.size() - start);
      std::vector<double> losses(count, 0.0);
      std::vector<GradMap> grads(count);
      parallel_for(count, threads, [&](size_t slot) {
        const SceneSample& scene = source.scenes[order[start + slot]];
        RngStream scene_rng = root.substream(stream_salt::kNegatives)
                                  .substream(static_cast<uint64_t>(epoch))
                                  .substream(start + slot);
        detail::AnchorSelection sel = detail::select_training_anchors(
            anchors, scene.boxes, dcfg.background_class(), scene_rng);
        ExtractCache ec;
        FeatureMap fm = extract_features(scene.image, result.detector, &ec);
        detail::AnchorLossWork work = detail::anchor_loss_forward(fm, anchors, sel, result.detector);
        if (!work.valid) return;
        losses[slot] = work.loss;
        Tensor grad_fmap(fm.t.shape);
        detail::anchor_loss_backward(work, result.detector, 1.0f / static_cast<float>(count),
                                     grads[slot], grad_fmap);
        extract_backward(grad_fmap, ec, grads[slot]);
      });
      GradMap step_grads = GradMap::zeros_like(result.detector.params);
      double step_loss = 0.0;
      for (size_t slot = 0; slot < count; ++slot) {
        step_grads.accumulate_all(grads[slot]);
        step_loss += losses[slot] / static_cast<double>(count);
      }
      if (!std::isfinite(step_loss))
        throw TrainingError("pretrain diverged at epoch " + std::to_string(epoch));
      sgd_step(result.detector.params, step_grads, cfg.lr, cfg.momentum);
      epoch_loss += step_loss;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_sup = steps > 0 ? epoch_loss / steps : 0.0;
    rec.l_total = rec.l_sup;
    EvalReport er = evaluate_detector(result.detector, detail::eval_subset(source, cfg.eval_stride),
                                      cfg.nms_iou, threads);
    rec.map = er.map;
    rec.accuracy = er.accuracy;
    result.trace.epochs.push_back(rec);
  }
  result.final_eval =
      evaluate_detector(result.detector, scene_ptrs(source), cfg.nms_iou, threads);
  return result;
}

// ---------------------------------------------------------------------------
// The combined objective over one batch:
//   L = L_sup + unsup_weight * L_unsup + fg_weight * L_fg + bg_weight * L_bg
// ---------------------------------------------------------------------------

struct MemoryContext {
  MemoryBank* bank = nullptr;
  const ProvenanceIndex* provenance = nullptr;
  std::vector<const SceneSample*> refresh_pool;
};

struct Batch {
  std::vector<const SceneSample*> source;
  std::vector<const SceneSample*> target;
};

/// Mutable cross-step state for the prototype baseline (EMA class means).
struct PrototypeState {
  std::vector<Tensor> mean;
  std::vector<bool> ready;
  float decay = 0.99f;

  void init(int classes, int dim) {
    mean.assign(static_cast<size_t>(classes), Tensor({dim}));
    ready.assign(static_cast<size_t>(classes), false);
  }
  void update(int class_id, const Tensor& g) {
    auto c = static_cast<size_t>(class_id);
    if (!ready[c]) {
      mean[c] = g;
      ready[c] = true;
      return;
    }
    for (size_t i = 0; i < mean[c].data.size(); ++i)
      mean[c].data[i] = decay * mean[c].data[i] + (1.0f - decay) * g.data[i];
  }
};

struct ObjectiveResult {
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_fg = 0.0;
  double l_bg = 0.0;
  double l_total = 0.0;
  GradMap detector_grads;
  GradMap discriminator_grads;
  long fg_pairs = 0;
  long bg_pairs = 0;
  long skipped = 0;
};

namespace detail {

// Alignment operates on L2-normalized embeddings scaled to a fixed radius:
// cosine retrieval is scale free, and the fixed radius makes squared
// distances commensurate with the triplet margin regardless of raw
// activation scale. At radius 2 the squared distance between nonnegative
// embeddings spans [0, 8], so the margin of 1.5 is a real but satisfiable
// separation demand.
inline constexpr float kAlignRadius = 2.0f;

struct UnitFeature {
  Tensor unit;  // radius-scaled unit vector
  double norm = 0.0;
  bool ok = false;
};

inline UnitFeature to_unit(const Tensor& g) {
  UnitFeature f;
  f.norm = norm64(g);
  if (f.norm <= 0.0) return f;
  f.unit = g;
  for (float& v : f.unit.data) v = static_cast<float>(v / f.norm * kAlignRadius);
  f.ok = true;
  return f;
}

/// Chain rule through scaled normalization: with u = r g / |g|,
/// grad_raw = (r grad_u - (grad_u . u / r) u) ... expressed via the unit
/// direction: grad_raw = (grad_u - (grad_u . d) d) * r / |g| with d = u / r.
inline Tensor unit_backward(const Tensor& grad_unit, const UnitFeature& f) {
  double along = dot64(grad_unit, f.unit) / (kAlignRadius * kAlignRadius);
  Tensor g = grad_unit;
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = static_cast<float>((g.data[i] - along * f.unit.data[i]) * kAlignRadius / f.norm);
  return g;
}

struct BatchSourceFeature {
  Tensor g;  // unit vector
  int class_id;
};

struct TargetWork {
  const SceneSample* scene = nullptr;
  ExtractCache ext_cache;
  FeatureMap fmap;
  Tensor grad_fmap;
  GradMap grads;
  bool any_grad = false;

  double unsup_loss = 0.0;
  bool unsup_valid = false;

  std::vector<Detection> detections;
  std::vector<float> bg_probs;  // per anchor, from the proposal pass
  Tensor det_rows_g;            // [n_det, D]
  std::vector<UnitFeature> det_units;
  DetHeadCache det_head_cache;
  std::vector<BoxPoolCache> det_pool_caches;
  std::vector<Tensor> det_grad_g;  // accumulated per detection, unit space
  bool fg_grads_present = false;

  Tensor bg_feature;
  UnitFeature bg_unit;
  bool bg_valid = false;
  MaskCache mask_cache;
  AdaptivePoolCache ada_cache;
  DetHeadCache bg_head_cache;

  long skipped = 0;
};

}  // namespace detail

inline ObjectiveResult compute_objective(const Batch& batch, MemoryContext* memory,
                                         const DetectorParams& detector, const ParamSet& disc,
                                         const TrainConfig& cfg, PrototypeState* protos,
                                         RngStream step_rng) {
  cfg.validate();
  ObjectiveResult result;
  result.detector_grads = GradMap::zeros_like(detector.params);
  result.discriminator_grads = GradMap::zeros_like(disc);

  bool fg_active = cfg.fg_enabled && cfg.fg_weight > 0.0f;
  bool bg_active = cfg.bg_enabled && cfg.bg_weight > 0.0f;
  bool need_batch_features = cfg.mode == AlignmentMode::kBatchC2C ||
                             cfg.mode == AlignmentMode::kCategoryAgnostic ||
                             cfg.mode == AlignmentMode::kPrototype;
  if ((fg_active || bg_active) && is_memory_mode(cfg.mode)) {
    if (!memory || !memory->bank)
      throw UsageError("compute_objective: memory bank required for mode " + to_string(cfg.mode));
    if (is_provenance_mode(cfg.mode) && !memory->provenance)
      throw UsageError("compute_objective: provenance index required for mode " + to_string(cfg.mode));
  }

  int threads = resolve_threads(cfg.threads);
  const DetectorConfig& dcfg = detector.cfg;

  // ---- Phase 1: per-scene forward passes (parallel, deterministic merge).
  std::vector<double> source_losses(batch.source.size(), 0.0);
  std::vector<GradMap> source_grads(batch.source.size());
  std::vector<std::vector<detail::BatchSourceFeature>> source_features(batch.source.size());
  std::vector<std::vector<Tensor>> source_bg_features(batch.source.size());
  std::vector<detail::TargetWork> target_work(batch.target.size());

  size_t total_scenes = batch.source.size() + batch.target.size();
  parallel_for(total_scenes, threads, [&](size_t slot) {
    if (slot < batch.source.size()) {
      const SceneSample& scene = *batch.source[slot];
      std::vector<BoxF> anchors = anchor_grid(scene.height(), scene.width(), dcfg.anchors);
      RngStream scene_rng = step_rng.substream(slot);
      detail::AnchorSelection sel =
          detail::select_training_anchors(anchors, scene.boxes, dcfg.background_class(), scene_rng);
      ExtractCache ec;
      FeatureMap fm = extract_features(scene.image, detector, &ec);
      detail::AnchorLossWork work = detail::anchor_loss_forward(fm, anchors, sel, detector);
      if (work.valid) {
        source_losses[slot] = work.loss;
        Tensor grad_fmap(fm.t.shape);
        detail::anchor_loss_backward(work, detector,
                                     1.0f / static_cast<float>(batch.source.size()),
                                     source_grads[slot], grad_fmap);
        extract_backward(grad_fmap, ec, source_grads[slot]);
      }
      if (fg_active && need_batch_features) {
        for (const auto& box : scene.boxes) {
          try {
            detail::UnitFeature f = detail::to_unit(fg_embedding(fm, box, detector));
            if (f.ok) source_features[slot].push_back({std::move(f.unit), box.class_id});
          } catch (const DegenerateBoxError&) {
          }
        }
      }
      if (bg_active && !is_memory_mode(cfg.mode)) {
        detail::UnitFeature f = detail::to_unit(bg_embedding(fm, scene.boxes, detector));
        if (f.ok) source_bg_features[slot].push_back(std::move(f.unit));
      }
      return;
    }

    size_t t = slot - batch.source.size();
    detail::TargetWork& work = target_work[t];
    work.scene = batch.target[t];
    const SceneSample& scene = *work.scene;
    RngStream scene_rng = step_rng.substream(slot);

    work.fmap = extract_features(scene.image, detector, &work.ext_cache);
    work.grad_fmap = Tensor(work.fmap.t.shape);
    work.grads = GradMap();

    // Detections and pseudo labels share one proposal pass.
    work.detections = propose_and_detect(scene.image, detector, cfg.confidence_threshold,
                                         cfg.nms_iou, &work.bg_probs);

    if (cfg.unsup_weight > 0.0f && !work.detections.empty()) {
      std::vector<AnnotatedBox> pseudo;
      for (const auto& det : work.detections)
        pseudo.push_back(AnnotatedBox{static_cast<int>(std::lround(det.box.x0)),
                                      static_cast<int>(std::lround(det.box.y0)),
                                      static_cast<int>(std::lround(det.box.x1)),
                                      static_cast<int>(std::lround(det.box.y1)), det.class_id, 0});
      std::vector<BoxF> anchors = anchor_grid(scene.height(), scene.width(), dcfg.anchors);
      detail::AnchorSelection sel = detail::select_training_anchors(
          anchors, pseudo, dcfg.background_class(), scene_rng, &work.bg_probs,
          cfg.confidence_threshold);
      detail::AnchorLossWork unsup =
          detail::anchor_loss_forward(work.fmap, anchors, sel, detector);
      if (unsup.valid) {
        work.unsup_loss = unsup.loss;
        work.unsup_valid = true;
        detail::anchor_loss_backward(
            unsup, detector, cfg.unsup_weight / static_cast<float>(batch.target.size()),
            work.grads, work.grad_fmap);
        work.any_grad = true;
      }
    }

    if (fg_active && !work.detections.empty()) {
      int n = static_cast<int>(work.detections.size());
      int flen = dcfg.pooled_len();
      Tensor rows({n, flen});
      work.det_pool_caches.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        Tensor pooled = box_pool(work.fmap.t, work.fmap.to_cell_space(work.detections[static_cast<size_t>(i)].box),
                                 dcfg.pool_size, &work.det_pool_caches[static_cast<size_t>(i)]);
        std::copy(pooled.data.begin(), pooled.data.end(),
                  rows.data.begin() + static_cast<long>(i) * flen);
      }
      work.det_rows_g = det_head(rows, detector, &work.det_head_cache).g;
      work.det_grad_g.assign(static_cast<size_t>(n), Tensor({dcfg.embed_dim}));
      work.det_units.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        Tensor g_t({dcfg.embed_dim});
        std::copy(work.det_rows_g.data.begin() + static_cast<long>(i) * dcfg.embed_dim,
                  work.det_rows_g.data.begin() + static_cast<long>(i + 1) * dcfg.embed_dim,
                  g_t.data.begin());
        work.det_units[static_cast<size_t>(i)] = detail::to_unit(g_t);
      }
    }

    if (bg_active) {
      std::vector<BoxF> cell_boxes;
      for (const auto& det : work.detections)
        cell_boxes.push_back(work.fmap.to_cell_space(det.box));
      Tensor masked = mask_background(work.fmap.t, cell_boxes, &work.mask_cache);
      Tensor pooled = adaptive_pool(masked, dcfg.pool_size, &work.ada_cache);
      work.bg_feature = det_head(pooled_to_row(pooled), detector, &work.bg_head_cache).g;
      work.bg_unit = detail::to_unit(work.bg_feature);
      work.bg_valid = true;
    }
  });

  for (size_t s = 0; s < batch.source.size(); ++s)
    result.l_sup += source_losses[s] / static_cast<double>(batch.source.size());

  for (auto& work : target_work)
    if (work.unsup_valid)
      result.l_unsup += work.unsup_loss / static_cast<double>(batch.target.size());

  // ---- Phase 2 (serial): cross-scene losses.

  // Pool the batch source features for the non-memory baselines.
  std::vector<detail::BatchSourceFeature> batch_features;
  for (auto& per_scene : source_features)
    for (auto& f : per_scene) batch_features.push_back(std::move(f));

  if (protos && cfg.mode == AlignmentMode::kPrototype) {
    if (protos->mean.empty()) protos->init(dcfg.num_classes, dcfg.embed_dim);
    for (const auto& f : batch_features) protos->update(f.class_id, f.g);
  }

  if (fg_active) {
    std::vector<AlignmentPair> pairs;
    std::vector<std::pair<size_t, size_t>> routing;  // (target slot, detection index)
    RngStream neg_rng = step_rng.substream(0x4E47);

    for (size_t t = 0; t < target_work.size(); ++t) {
      detail::TargetWork& work = target_work[t];
      for (size_t i = 0; i < work.detections.size(); ++i) {
        const Detection& det = work.detections[i];
        if (!work.det_units[i].ok) {
          ++work.skipped;
          continue;
        }
        const Tensor& g_t = work.det_units[i].unit;

        // Collect (positive, class) candidates per the alignment mode.
        std::vector<std::pair<Tensor, int>> positives;
        try {
          switch (cfg.mode) {
            case AlignmentMode::kMemorySimilar: {
              for (const auto& hit : retrieve_topk(g_t, det.class_id, *memory->bank, cfg.top_k))
                positives.push_back({detail::to_unit(hit.entry->g).unit, hit.entry->class_id});
              break;
            }
            case AlignmentMode::kBatchC2C: {
              const detail::BatchSourceFeature* best = nullptr;
              double best_sim = -2.0;
              for (const auto& f : batch_features) {
                if (f.class_id != det.class_id) continue;
                double sim = cosine_similarity(g_t, f.g);
                if (sim > best_sim) {
                  best_sim = sim;
                  best = &f;
                }
              }
              if (!best) throw ClassUnavailableError("batch has no same-class instance");
              positives.push_back({best->g, best->class_id});
              break;
            }
            case AlignmentMode::kCategoryAgnostic: {
              const detail::BatchSourceFeature* best = nullptr;
              double best_sim = -2.0;
              for (const auto& f : batch_features) {
                double sim = cosine_similarity(g_t, f.g);
                if (sim > best_sim) {
                  best_sim = sim;
                  best = &f;
                }
              }
              if (!best) throw ClassUnavailableError("batch has no source instance");
              positives.push_back({best->g, best->class_id});
              break;
            }
            case AlignmentMode::kPrototype: {
              if (!protos || det.class_id >= static_cast<int>(protos->ready.size()) ||
                  !protos->ready[static_cast<size_t>(det.class_id)])
                throw ClassUnavailableError("prototype not initialized");
              detail::UnitFeature proto =
                  detail::to_unit(protos->mean[static_cast<size_t>(det.class_id)]);
              if (!proto.ok) throw ClassUnavailableError("degenerate prototype");
              positives.push_back({std::move(proto.unit), det.class_id});
              break;
            }
            default: {  // provenance strategies
              const SceneSample& scene = *work.scene;
              const AnnotatedBox* matched = nullptr;
              double best_iou = 0.5 - 1e-12;
              for (const auto& gt : scene.boxes) {
                double overlap = iou(det.box, gt.as_boxf());
                if (overlap > best_iou) {
                  best_iou = overlap;
                  matched = &gt;
                }
              }
              if (!matched) throw ClassUnavailableError("detection matches no annotated object");
              const ForegroundEntry* entry = retrieve_by_strategy(
                  matched->object_uid, *memory->provenance, *memory->bank, strategy_of(cfg.mode));
              positives.push_back({detail::to_unit(entry->g).unit, entry->class_id});
              break;
            }
          }
        } catch (const ClassUnavailableError&) {
          ++work.skipped;
          continue;
        } catch (const ProvenanceError&) {
          ++work.skipped;
          continue;
        }

        for (auto& [pos, pos_class] : positives) {
          AlignmentPair pair;
          pair.similarity = cosine_similarity(g_t, pos);
          pair.target = g_t;
          pair.positive = std::move(pos);
          pair.strategy_tag = to_string(cfg.mode);
          for (int m = 0; m < cfg.negative_count; ++m) {
            try {
              if (is_memory_mode(cfg.mode)) {
                pair.negatives.push_back(
                    detail::to_unit(sample_negative(pos_class, *memory->bank, neg_rng)->g).unit);
              } else if (cfg.mode == AlignmentMode::kPrototype) {
                std::vector<int> others;
                for (int c = 0; c < static_cast<int>(protos->ready.size()); ++c)
                  if (c != pos_class && protos->ready[static_cast<size_t>(c)]) others.push_back(c);
                if (others.empty()) throw NegativeUnavailableError("no other prototype");
                detail::UnitFeature neg = detail::to_unit(
                    protos->mean[static_cast<size_t>(others[neg_rng.uniform_int(others.size())])]);
                if (!neg.ok) throw NegativeUnavailableError("degenerate prototype");
                pair.negatives.push_back(std::move(neg.unit));
              } else {
                std::vector<const detail::BatchSourceFeature*> others;
                for (const auto& f : batch_features)
                  if (f.class_id != pos_class) others.push_back(&f);
                if (others.empty()) throw NegativeUnavailableError("no other-class batch instance");
                pair.negatives.push_back(others[neg_rng.uniform_int(others.size())]->g);
              }
            } catch (const NegativeUnavailableError&) {
              break;  // positive-only fallback
            }
          }
          pairs.push_back(std::move(pair));
          routing.emplace_back(t, i);
        }
      }
    }

    FgLossReport fg = loss_fg(pairs, cfg.triplet_margin);
    result.l_fg = fg.value;
    result.fg_pairs = static_cast<long>(fg.pair_count);
    for (size_t p = 0; p < pairs.size(); ++p) {
      auto [t, i] = routing[p];
      add_in_place(target_work[t].det_grad_g[i], fg.pair_grads[p], cfg.fg_weight);
      target_work[t].fg_grads_present = true;
    }
  }

  if (bg_active) {
    std::vector<Tensor> target_bgs;
    std::vector<size_t> bg_slots;
    std::vector<Tensor> src_bgs;
    for (size_t t = 0; t < target_work.size(); ++t) {
      detail::TargetWork& work = target_work[t];
      if (!work.bg_valid || !work.bg_unit.ok) {
        if (work.bg_valid) ++work.skipped;
        continue;
      }
      if (is_memory_mode(cfg.mode)) {
        try {
          src_bgs.push_back(detail::to_unit(
              retrieve_bg_positive(work.bg_unit.unit, *memory->bank).entry->bg).unit);
        } catch (const ClassUnavailableError&) {
          ++work.skipped;
          continue;
        }
      }
      target_bgs.push_back(work.bg_unit.unit);
      bg_slots.push_back(t);
    }
    if (!is_memory_mode(cfg.mode))
      for (const auto& per_scene : source_bg_features)
        for (const auto& f : per_scene) src_bgs.push_back(f);

    BgLossReport bg = loss_bg(src_bgs, target_bgs, disc, cfg.grl_lambda);
    if (!bg.skipped) {
      result.l_bg = bg.value;
      result.bg_pairs = static_cast<long>(target_bgs.size());
      // The discriminator minimizes L_bg itself; the objective weight only
      // scales what flows into the detector through the reversal.
      result.discriminator_grads.accumulate_all(bg.disc_grads);
      for (size_t i = 0; i < bg_slots.size(); ++i) {
        detail::TargetWork& work = target_work[bg_slots[i]];
        Tensor grad_raw = detail::unit_backward(bg.target_grads[i], work.bg_unit);
        // The reversed gradient shapes the extractor; it passes through the
        // head without touching the head's parameters.
        Tensor grad_row = det_head_backward(work.bg_head_cache, std::nullopt,
                                            scaled(grad_raw, cfg.bg_weight), detector,
                                            work.grads, /*accumulate_params=*/false);
        Tensor grad_pooled({detector.cfg.pool_size, detector.cfg.pool_size,
                            detector.cfg.feat_channels});
        grad_pooled.data = grad_row.data;
        Tensor grad_masked = adaptive_pool_backward(grad_pooled, work.ada_cache);
        Tensor grad_unmasked = mask_background_backward(grad_masked, work.mask_cache);
        add_in_place(work.grad_fmap, grad_unmasked);
        work.any_grad = true;
      }
    }
  }

  // ---- Phase 3: route accumulated detection gradients and close each
  // target scene's extractor backward.
  parallel_for(target_work.size(), threads, [&](size_t t) {
    detail::TargetWork& work = target_work[t];
    if (work.fg_grads_present) {
      int n = static_cast<int>(work.detections.size());
      Tensor grad_rows({n, detector.cfg.embed_dim});
      for (int i = 0; i < n; ++i) {
        if (!work.det_units[static_cast<size_t>(i)].ok) continue;  // zero row stays zero
        Tensor raw = detail::unit_backward(work.det_grad_g[static_cast<size_t>(i)],
                                           work.det_units[static_cast<size_t>(i)]);
        std::copy(raw.data.begin(), raw.data.end(),
                  grad_rows.data.begin() + static_cast<long>(i) * detector.cfg.embed_dim);
      }
      Tensor grad_pooled_rows =
          det_head_backward(work.det_head_cache, std::nullopt, grad_rows, detector, work.grads);
      int flen = detector.cfg.pooled_len();
      for (int i = 0; i < n; ++i) {
        Tensor slice({detector.cfg.pool_size, detector.cfg.pool_size, detector.cfg.feat_channels});
        std::copy(grad_pooled_rows.data.begin() + static_cast<long>(i) * flen,
                  grad_pooled_rows.data.begin() + static_cast<long>(i + 1) * flen,
                  slice.data.begin());
        box_pool_backward(slice, work.det_pool_caches[static_cast<size_t>(i)], work.grad_fmap);
      }
      work.any_grad = true;
    }
    if (work.any_grad) extract_backward(work.grad_fmap, work.ext_cache, work.grads);
  });

  for (auto& g : source_grads) result.detector_grads.accumulate_all(g);
  for (auto& work : target_work) {
    result.detector_grads.accumulate_all(work.grads);
    result.skipped += work.skipped;
  }

  result.l_total = result.l_sup + cfg.unsup_weight * result.l_unsup +
                   cfg.fg_weight * result.l_fg + cfg.bg_weight * result.l_bg;
  if (!std::isfinite(result.l_total)) throw TrainingError("compute_objective: non-finite loss");
  return result;
}

// ---------------------------------------------------------------------------
// Adaptation loop.
// ---------------------------------------------------------------------------

struct AdaptResult {
  DetectorParams detector;
  ParamSet discriminator;
  MetricsTrace trace;
  EvalReport final_eval;  // full target-domain evaluation
};

inline AdaptResult adapt(const Dataset& source, const Dataset& target,
                         const DetectorParams& pretrained, MemoryContext* memory,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (target.scenes.empty()) throw ArgumentError("adapt: empty target dataset");
  if (source.scenes.empty()) throw ArgumentError("adapt: empty source dataset");
  bool alignment_on = (cfg.fg_enabled && cfg.fg_weight > 0) || (cfg.bg_enabled && cfg.bg_weight > 0);
  if (alignment_on && is_memory_mode(cfg.mode) && (!memory || !memory->bank))
    throw UsageError("adapt: built memory required for mode " + to_string(cfg.mode));

  AdaptResult result;
  result.detector = pretrained;
  RngStream root(cfg.seed);
  RngStream disc_rng = root.substream(stream_salt::kInit).substream(0xD15C);
  result.discriminator = init_discriminator(pretrained.cfg.embed_dim, disc_rng);
  if (memory && memory->bank) memory->bank->refresh_interval = cfg.refresh_interval;

  PrototypeState protos;
  int threads = resolve_threads(cfg.threads);

  for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
    if (memory && memory->bank && alignment_on && epoch > 0 && !memory->refresh_pool.empty())
      refresh(*memory->bank, memory->refresh_pool, result.detector, epoch, threads);

    RngStream shuffle_rng = root.substream(stream_salt::kShuffle);
    std::vector<size_t> target_order =
        detail::shuffled_indices(target.scenes.size(), shuffle_rng.substream(2 * static_cast<uint64_t>(epoch)));
    std::vector<size_t> source_order =
        detail::shuffled_indices(source.scenes.size(), shuffle_rng.substream(2 * static_cast<uint64_t>(epoch) + 1));

    EpochRecord rec;
    rec.epoch = epoch;
    long steps = 0;
    size_t src_cursor = 0;
    for (size_t start = 0; start < target_order.size();
         start += static_cast<size_t>(cfg.batch_target)) {
      Batch batch;
      for (size_t i = start; i < std::min(target_order.size(), start + static_cast<size_t>(cfg.batch_target)); ++i)
        batch.target.push_back(&target.scenes[target_order[i]]);
      for (int i = 0; i < cfg.batch_source; ++i) {
        batch.source.push_back(&source.scenes[source_order[src_cursor % source_order.size()]]);
        ++src_cursor;
      }
      RngStream step_rng = root.substream(stream_salt::kNegatives)
                               .substream(static_cast<uint64_t>(epoch))
                               .substream(static_cast<uint64_t>(steps));
      ObjectiveResult step = compute_objective(batch, memory, result.detector,
                                               result.discriminator, cfg, &protos, step_rng);
      sgd_step(result.detector.params, step.detector_grads, cfg.lr, cfg.momentum);
      // Heavy-ball momentum on both sides of a minimax amplifies the
      // adversarial oscillation; the discriminator runs momentum-free.
      sgd_step(result.discriminator, step.discriminator_grads, cfg.lr, 0.0f);

      rec.l_sup += step.l_sup;
      rec.l_unsup += step.l_unsup;
      rec.l_fg += step.l_fg;
      rec.l_bg += step.l_bg;
      rec.l_total += step.l_total;
      rec.fg_pairs += step.fg_pairs;
      rec.bg_pairs += step.bg_pairs;
      rec.skipped += step.skipped;
      ++steps;
    }
    if (steps > 0) {
      rec.l_sup /= steps;
      rec.l_unsup /= steps;
      rec.l_fg /= steps;
      rec.l_bg /= steps;
      rec.l_total /= steps;
    }
    EvalReport er = evaluate_detector(result.detector, detail::eval_subset(target, cfg.eval_stride),
                                      cfg.nms_iou, threads);
    rec.map = er.map;
    rec.accuracy = er.accuracy;
    result.trace.epochs.push_back(rec);
  }

  result.final_eval = evaluate_detector(result.detector, scene_ptrs(target), cfg.nms_iou, threads);
  return result;
}

}  // namespace simalign
