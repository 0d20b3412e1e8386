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
#include <optional>
#include <vector>

#include "simalign/detector.hpp"

namespace simalign {

inline constexpr float kEvalIou = 0.5f;
// Detections below this score never enter evaluation; AP depends only on
// ranks, so the exact floor is immaterial as long as recall saturates.
inline constexpr float kEvalScoreFloor = 0.05f;
// Score floor for the detection-accuracy count (the fraction of ground-truth
// boxes covered by a confident correct-class detection).
inline constexpr float kAccuracyScoreFloor = 0.5f;

struct EvalReport {
  std::vector<double> ap;         // per class, meaningful where defined
  std::vector<bool> ap_defined;   // false when the class has no gt and no detections
  double map = 0.0;
  double accuracy = 0.0;          // matched-gt fraction at IoU 0.5, correct class
  long tp = 0, fp = 0, fn = 0;
  long gt_count = 0;
};

/// Greedy per-image matching: detections in descending score order claim the
/// highest-IoU unmatched same-class ground-truth box at IoU >= thr.
inline std::vector<char> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<AnnotatedBox>& gts, float iou_thr) {
  std::vector<char> flags(dets.size(), 0);
  std::vector<char> claimed(gts.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].class_id != dets[i].class_id) continue;
      double overlap = iou(dets[i].box, gts[g].as_boxf());
      if (overlap >= iou_thr && overlap > best_iou) {
        best_iou = overlap;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      claimed[static_cast<size_t>(best_gt)] = 1;
      flags[i] = 1;
    }
  }
  return flags;
}

/// All-point interpolated area under the precision-recall curve. Flags must
/// be in descending score order. Undefined when there is nothing to rank
/// against (no ground truth and no detections).
inline std::optional<double> average_precision(const std::vector<char>& flags, long n_gt) {
  if (n_gt < 0) throw ArgumentError("average_precision: negative gt count");
  if (n_gt == 0 && flags.empty()) return std::nullopt;
  if (n_gt == 0) return 0.0;  // detections against no ground truth: all false positives
  // Precision at each rank, then the monotone envelope from the right.
  size_t n = flags.size();
  std::vector<double> precision(n), recall(n);
  long tp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

/// Arithmetic mean over defined-AP classes.
inline double mean_ap(const std::vector<double>& ap, const std::vector<bool>& defined) {
  double total = 0.0;
  int n = 0;
  for (size_t c = 0; c < ap.size(); ++c) {
    if (!defined[c]) continue;
    total += ap[c];
    ++n;
  }
  if (n == 0) throw ArgumentError("mean_ap: no class has a defined AP");
  return total / n;
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation.
// ---------------------------------------------------------------------------

struct ScoredFlag {
  float score;
  char tp;
  size_t image;  // deterministic tie-break
  size_t rank;   // in-image rank
};

/// Evaluates per-image detection lists against their ground truth and pools
/// them into per-class AP, mAP, and the detection-accuracy fraction.
inline EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& per_image_dets,
                                      const std::vector<const SceneSample*>& scenes,
                                      int num_classes) {
  if (per_image_dets.size() != scenes.size())
    throw ArgumentError("evaluate_detections: image count mismatch");
  EvalReport report;
  report.ap.assign(static_cast<size_t>(num_classes), 0.0);
  report.ap_defined.assign(static_cast<size_t>(num_classes), false);

  std::vector<std::vector<ScoredFlag>> per_class(static_cast<size_t>(num_classes));
  std::vector<long> gt_per_class(static_cast<size_t>(num_classes), 0);
  long matched_gt_confident = 0;

  for (size_t img = 0; img < scenes.size(); ++img) {
    const auto& gts = scenes[img]->boxes;
    for (const auto& g : gts) {
      if (g.class_id >= 0 && g.class_id < num_classes)
        ++gt_per_class[static_cast<size_t>(g.class_id)];
    }
    // Pooled AP flags over every retained detection.
    const auto& dets = per_image_dets[img];
    std::vector<char> flags = match_detections(dets, gts, kEvalIou);
    for (size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].class_id < 0 || dets[i].class_id >= num_classes) continue;
      per_class[static_cast<size_t>(dets[i].class_id)].push_back(
          ScoredFlag{dets[i].score, flags[i], img, i});
      if (flags[i])
        ++report.tp;
      else
        ++report.fp;
    }
    // Accuracy counts matches among confident detections only.
    std::vector<Detection> confident;
    for (const auto& det : dets)
      if (det.score >= kAccuracyScoreFloor) confident.push_back(det);
    std::vector<char> confident_flags = match_detections(confident, gts, kEvalIou);
    for (char f : confident_flags)
      if (f) ++matched_gt_confident;
  }

  for (int c = 0; c < num_classes; ++c) {
    auto& flags = per_class[static_cast<size_t>(c)];
    std::sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image != b.image) return a.image < b.image;
      return a.rank < b.rank;
    });
    std::vector<char> ordered;
    ordered.reserve(flags.size());
    for (const auto& f : flags) ordered.push_back(f.tp);
    auto ap = average_precision(ordered, gt_per_class[static_cast<size_t>(c)]);
    if (ap) {
      report.ap[static_cast<size_t>(c)] = *ap;
      report.ap_defined[static_cast<size_t>(c)] = true;
    }
  }
  report.map = mean_ap(report.ap, report.ap_defined);

  for (long g : gt_per_class) report.gt_count += g;
  report.fn = report.gt_count - report.tp;
  report.accuracy =
      report.gt_count > 0 ? static_cast<double>(matched_gt_confident) / report.gt_count : 0.0;
  return report;
}

/// Runs the detector over the scenes and evaluates the result.
inline EvalReport evaluate_detector(const DetectorParams& d,
                                    const std::vector<const SceneSample*>& scenes, float nms_iou,
                                    int threads = 1) {
  std::vector<std::vector<Detection>> dets(scenes.size());
  parallel_for(scenes.size(), threads, [&](size_t i) {
    dets[i] = propose_and_detect(scenes[i]->image, d, kEvalScoreFloor, nms_iou);
  });
  return evaluate_detections(dets, scenes, d.cfg.num_classes);
}

}  // namespace simalign
