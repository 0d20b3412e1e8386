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
#include <cmath>
#include <optional>
#include <vector>

#include "simalign/geometry.hpp"
#include "simalign/nn.hpp"
#include "simalign/synth.hpp"

namespace simalign {

/// Box that collapses to an empty region at feature scale.
struct DegenerateBoxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Toy detector: a learned patch-embedding extractor stands in for the
// backbone, dense anchor windows stand in for proposals (no box regression),
// and a small MLP head emits a D-dim instance embedding plus C+1 logits.
// ---------------------------------------------------------------------------

struct AnchorLevel {
  int stride = 8;
  int window = 16;
};

struct DetectorConfig {
  int num_classes = 3;   // C; the head has C+1 outputs (background last)
  int patch = 8;         // extractor patch size
  int stride = 4;        // extractor patch stride
  int feat_channels = 16;
  int ext_hidden = 32;
  int pool_size = 7;     // P
  int head_hidden = 128;
  int embed_dim = 64;    // D, the memory slot width
  std::vector<AnchorLevel> anchors = {{8, 16}, {16, 32}};

  int pooled_len() const { return pool_size * pool_size * feat_channels; }
  int background_class() const { return num_classes; }
};

struct DetectorParams {
  DetectorConfig cfg;
  ParamSet params;

  uint64_t content_hash() const { return params.content_hash(); }
};

inline DetectorParams init_detector(const DetectorConfig& cfg, RngStream& rng) {
  DetectorParams d;
  d.cfg = cfg;
  int patch_len = cfg.patch * cfg.patch * 3;
  auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  d.params.add("ext.w1", random_normal({patch_len, cfg.ext_hidden}, he(patch_len), rng));
  d.params.add("ext.b1", Tensor({cfg.ext_hidden}));
  d.params.add("ext.w2", random_normal({cfg.ext_hidden, cfg.feat_channels}, he(cfg.ext_hidden), rng));
  d.params.add("ext.b2", Tensor({cfg.feat_channels}));
  d.params.add("head.w1", random_normal({cfg.pooled_len(), cfg.head_hidden}, he(cfg.pooled_len()), rng));
  d.params.add("head.b1", Tensor({cfg.head_hidden}));
  d.params.add("head.w2", random_normal({cfg.head_hidden, cfg.embed_dim}, he(cfg.head_hidden), rng));
  d.params.add("head.b2", Tensor({cfg.embed_dim}));
  d.params.add("cls.w", random_normal({cfg.embed_dim, cfg.num_classes + 1},
                                      std::sqrt(1.0 / cfg.embed_dim), rng));
  d.params.add("cls.b", Tensor({cfg.num_classes + 1}));
  return d;
}

// ---------------------------------------------------------------------------
// Feature extraction. Cell (i, j) of the H'xW'xC_f map embeds the patch at
// image offset (i*stride, j*stride); its center in continuous cell space is
// (j + 0.5, i + 0.5).
// ---------------------------------------------------------------------------

struct FeatureMap {
  Tensor t;  // [H', W', C_f]
  int patch = 8;
  int stride = 4;

  int cells_y() const { return t.dim(0); }
  int cells_x() const { return t.dim(1); }
  int channels() const { return t.dim(2); }

  /// Image-pixel box -> continuous cell-space box, clamped to the map.
  BoxF to_cell_space(const BoxF& b) const {
    auto cx = [&](float v) {
      float u = (v - 0.5f * patch) / stride + 0.5f;
      return std::clamp(u, 0.0f, static_cast<float>(cells_x()));
    };
    auto cy = [&](float v) {
      float u = (v - 0.5f * patch) / stride + 0.5f;
      return std::clamp(u, 0.0f, static_cast<float>(cells_y()));
    };
    return BoxF{cx(b.x0), cy(b.y0), cx(b.x1), cy(b.y1)};
  }
};

struct ExtractCache {
  AffineCache a1;
  ReluCache r1;
  AffineCache a2;
  bool valid = false;
};

inline FeatureMap extract_features(const Tensor& image, const DetectorParams& d,
                                   ExtractCache* cache = nullptr) {
  if (image.ndim() != 3 || image.dim(2) != 3)
    throw ShapeError("extract_features: image must be [H,W,3]");
  const DetectorConfig& cfg = d.cfg;
  int h = image.dim(0), w = image.dim(1);
  if (h < cfg.patch || w < cfg.patch) throw ShapeError("extract_features: image below patch size");
  int cells_y = (h - cfg.patch) / cfg.stride + 1;
  int cells_x = (w - cfg.patch) / cfg.stride + 1;
  int patch_len = cfg.patch * cfg.patch * 3;

  Tensor patches({cells_y * cells_x, patch_len});
  for (int ci = 0; ci < cells_y; ++ci) {
    for (int cj = 0; cj < cells_x; ++cj) {
      float* row = patches.data.data() +
                   static_cast<size_t>(ci * cells_x + cj) * patch_len;
      int oy = ci * cfg.stride, ox = cj * cfg.stride;
      int k = 0;
      for (int py = 0; py < cfg.patch; ++py)
        for (int px = 0; px < cfg.patch; ++px)
          for (int c = 0; c < 3; ++c) row[k++] = image.at(oy + py, ox + px, c);
    }
  }

  ExtractCache local;
  ExtractCache& cc = cache ? *cache : local;
  Tensor h1 = relu(affine_forward(patches, d.params.value("ext.w1"), d.params.value("ext.b1"), &cc.a1),
                   &cc.r1);
  Tensor rows = affine_forward(h1, d.params.value("ext.w2"), d.params.value("ext.b2"), &cc.a2);
  if (cache) cache->valid = true;

  FeatureMap fm;
  fm.patch = cfg.patch;
  fm.stride = cfg.stride;
  fm.t = Tensor({cells_y, cells_x, cfg.feat_channels}, std::move(rows.data));
  return fm;
}

/// Accumulates extractor parameter gradients from a feature-map gradient.
inline void extract_backward(const Tensor& grad_fmap, ExtractCache& cache, GradMap& grads) {
  if (!cache.valid) throw UsageError("extract_backward: stale or missing cache");
  cache.valid = false;
  Tensor grad_rows({grad_fmap.dim(0) * grad_fmap.dim(1), grad_fmap.dim(2)}, grad_fmap.data);
  AffineGrads g2 = affine_backward(grad_rows, cache.a2);
  grads.accumulate("ext.w2", g2.w);
  grads.accumulate("ext.b2", g2.b);
  Tensor gh = relu_backward(g2.x, cache.r1);
  AffineGrads g1 = affine_backward(gh, cache.a1);
  grads.accumulate("ext.w1", g1.w);
  grads.accumulate("ext.b1", g1.b);
}

// ---------------------------------------------------------------------------
// Box pooling: bilinear resampling of a cell-space box onto a fixed PxP grid,
// one center sample per output cell, with replicate padding at the borders.
// ---------------------------------------------------------------------------

struct BoxPoolCache {
  struct Tap {
    int y0, x0, y1, x1;
    float w00, w01, w10, w11;
  };
  std::vector<Tap> taps;  // P*P entries
  int cells_y = 0, cells_x = 0, channels = 0, pool = 0;
  bool valid = false;
};

namespace detail {

struct BilinearTap {
  int lo, hi;
  float w_lo, w_hi;
};

inline BilinearTap bilinear_tap(float u, int n) {
  float s = u - 0.5f;
  int lo = static_cast<int>(std::floor(s));
  float frac = s - static_cast<float>(lo);
  int hi = lo + 1;
  lo = std::clamp(lo, 0, n - 1);
  hi = std::clamp(hi, 0, n - 1);
  return {lo, hi, 1.0f - frac, frac};
}

}  // namespace detail

inline Tensor box_pool(const Tensor& fmap, const BoxF& cell_box, int pool,
                       BoxPoolCache* cache = nullptr) {
  if (fmap.ndim() != 3) throw ShapeError("box_pool: feature map must be [H',W',C]");
  int cells_y = fmap.dim(0), cells_x = fmap.dim(1), channels = fmap.dim(2);
  float x0 = std::clamp(cell_box.x0, 0.0f, static_cast<float>(cells_x));
  float x1 = std::clamp(cell_box.x1, 0.0f, static_cast<float>(cells_x));
  float y0 = std::clamp(cell_box.y0, 0.0f, static_cast<float>(cells_y));
  float y1 = std::clamp(cell_box.y1, 0.0f, static_cast<float>(cells_y));
  if (x1 - x0 <= 1e-6f || y1 - y0 <= 1e-6f)
    throw DegenerateBoxError("box_pool: box degenerates at feature scale");

  Tensor out({pool, pool, channels});
  if (cache) {
    cache->taps.clear();
    cache->taps.reserve(static_cast<size_t>(pool) * pool);
    cache->cells_y = cells_y;
    cache->cells_x = cells_x;
    cache->channels = channels;
    cache->pool = pool;
  }
  float bw = (x1 - x0) / static_cast<float>(pool);
  float bh = (y1 - y0) / static_cast<float>(pool);
  for (int oy = 0; oy < pool; ++oy) {
    float v = y0 + (static_cast<float>(oy) + 0.5f) * bh;
    auto ty = detail::bilinear_tap(v, cells_y);
    for (int ox = 0; ox < pool; ++ox) {
      float u = x0 + (static_cast<float>(ox) + 0.5f) * bw;
      auto tx = detail::bilinear_tap(u, cells_x);
      const float* p00 = &fmap.at(ty.lo, tx.lo, 0);
      const float* p01 = &fmap.at(ty.lo, tx.hi, 0);
      const float* p10 = &fmap.at(ty.hi, tx.lo, 0);
      const float* p11 = &fmap.at(ty.hi, tx.hi, 0);
      float w00 = ty.w_lo * tx.w_lo, w01 = ty.w_lo * tx.w_hi;
      float w10 = ty.w_hi * tx.w_lo, w11 = ty.w_hi * tx.w_hi;
      float* dst = &out.at(oy, ox, 0);
      for (int c = 0; c < channels; ++c)
        dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      if (cache)
        cache->taps.push_back({ty.lo, tx.lo, ty.hi, tx.hi, w00, w01, w10, w11});
    }
  }
  if (cache) cache->valid = true;
  require_finite(out, "box_pool");
  return out;
}

/// Scatters the pooled gradient back into a feature-map gradient buffer.
inline void box_pool_backward(const Tensor& grad_pooled, BoxPoolCache& cache, Tensor& grad_fmap) {
  if (!cache.valid) throw UsageError("box_pool_backward: stale or missing cache");
  cache.valid = false;
  int channels = cache.channels, pool = cache.pool;
  if (grad_fmap.ndim() != 3 || grad_fmap.dim(0) != cache.cells_y ||
      grad_fmap.dim(1) != cache.cells_x || grad_fmap.dim(2) != channels)
    throw ShapeError("box_pool_backward: grad_fmap shape mismatch");
  for (int oy = 0; oy < pool; ++oy) {
    for (int ox = 0; ox < pool; ++ox) {
      const auto& tap = cache.taps[static_cast<size_t>(oy * pool + ox)];
      const float* g = &grad_pooled.at(oy, ox, 0);
      float* d00 = &grad_fmap.at(tap.y0, tap.x0, 0);
      float* d01 = &grad_fmap.at(tap.y0, tap.x1, 0);
      float* d10 = &grad_fmap.at(tap.y1, tap.x0, 0);
      float* d11 = &grad_fmap.at(tap.y1, tap.x1, 0);
      for (int c = 0; c < channels; ++c) {
        d00[c] += tap.w00 * g[c];
        d01[c] += tap.w01 * g[c];
        d10[c] += tap.w10 * g[c];
        d11[c] += tap.w11 * g[c];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Background masking: zero every cell whose center falls inside any box
// (set union, never double-counted), keep the rest bit-identical.
// ---------------------------------------------------------------------------

struct MaskCache {
  std::vector<uint8_t> keep;  // per cell
  bool valid = false;
};

inline Tensor mask_background(const Tensor& fmap, const std::vector<BoxF>& cell_boxes,
                              MaskCache* cache = nullptr) {
  if (fmap.ndim() != 3) throw ShapeError("mask_background: feature map must be [H',W',C]");
  int cells_y = fmap.dim(0), cells_x = fmap.dim(1), channels = fmap.dim(2);
  Tensor out = fmap;
  std::vector<uint8_t> keep(static_cast<size_t>(cells_y) * cells_x, 1);
  for (int i = 0; i < cells_y; ++i) {
    float cy = static_cast<float>(i) + 0.5f;
    for (int j = 0; j < cells_x; ++j) {
      float cx = static_cast<float>(j) + 0.5f;
      for (const auto& b : cell_boxes) {
        if (cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1) {
          keep[static_cast<size_t>(i) * cells_x + j] = 0;
          float* dst = &out.at(i, j, 0);
          for (int c = 0; c < channels; ++c) dst[c] = 0.0f;
          break;
        }
      }
    }
  }
  if (cache) {
    cache->keep = std::move(keep);
    cache->valid = true;
  }
  return out;
}

inline Tensor mask_background_backward(const Tensor& grad_masked, MaskCache& cache) {
  if (!cache.valid) throw UsageError("mask_background_backward: stale or missing cache");
  cache.valid = false;
  Tensor g = grad_masked;
  int channels = g.dim(2);
  for (size_t cell = 0; cell < cache.keep.size(); ++cell) {
    if (cache.keep[cell]) continue;
    float* dst = g.data.data() + cell * static_cast<size_t>(channels);
    for (int c = 0; c < channels; ++c) dst[c] = 0.0f;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adaptive average pooling over an even partition of the spatial extent.
// Output row k covers input rows [floor(k*H/out), floor((k+1)*H/out)).
// ---------------------------------------------------------------------------

struct AdaptivePoolCache {
  int in_y = 0, in_x = 0, channels = 0, out = 0;
  bool valid = false;
};

namespace detail {
inline int partition_start(int k, int n, int out) { return (k * n) / out; }
}  // namespace detail

inline Tensor adaptive_pool(const Tensor& fmap, int out, AdaptivePoolCache* cache = nullptr) {
  if (fmap.ndim() != 3) throw ShapeError("adaptive_pool: feature map must be [H',W',C]");
  int cells_y = fmap.dim(0), cells_x = fmap.dim(1), channels = fmap.dim(2);
  if (cells_y < out || cells_x < out)
    throw ShapeError("adaptive_pool: input smaller than output grid");
  Tensor pooled({out, out, channels});
  std::vector<double> acc(static_cast<size_t>(channels));
  for (int oy = 0; oy < out; ++oy) {
    int ys = detail::partition_start(oy, cells_y, out);
    int ye = detail::partition_start(oy + 1, cells_y, out);
    for (int ox = 0; ox < out; ++ox) {
      int xs = detail::partition_start(ox, cells_x, out);
      int xe = detail::partition_start(ox + 1, cells_x, out);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int y = ys; y < ye; ++y)
        for (int x = xs; x < xe; ++x) {
          const float* src = &fmap.at(y, x, 0);
          for (int c = 0; c < channels; ++c) acc[static_cast<size_t>(c)] += src[c];
        }
      double count = static_cast<double>(ye - ys) * (xe - xs);
      float* dst = &pooled.at(oy, ox, 0);
      for (int c = 0; c < channels; ++c) dst[c] = static_cast<float>(acc[static_cast<size_t>(c)] / count);
    }
  }
  if (cache) {
    cache->in_y = cells_y;
    cache->in_x = cells_x;
    cache->channels = channels;
    cache->out = out;
    cache->valid = true;
  }
  require_finite(pooled, "adaptive_pool");
  return pooled;
}

inline Tensor adaptive_pool_backward(const Tensor& grad_out, AdaptivePoolCache& cache) {
  if (!cache.valid) throw UsageError("adaptive_pool_backward: stale or missing cache");
  cache.valid = false;
  Tensor g({cache.in_y, cache.in_x, cache.channels});
  int out = cache.out;
  for (int oy = 0; oy < out; ++oy) {
    int ys = detail::partition_start(oy, cache.in_y, out);
    int ye = detail::partition_start(oy + 1, cache.in_y, out);
    for (int ox = 0; ox < out; ++ox) {
      int xs = detail::partition_start(ox, cache.in_x, out);
      int xe = detail::partition_start(ox + 1, cache.in_x, out);
      float inv = 1.0f / (static_cast<float>(ye - ys) * static_cast<float>(xe - xs));
      const float* src = &grad_out.at(oy, ox, 0);
      for (int y = ys; y < ye; ++y)
        for (int x = xs; x < xe; ++x) {
          float* dst = &g.at(y, x, 0);
          for (int c = 0; c < cache.channels; ++c) dst[c] += src[c] * inv;
        }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Detection head. g is the penultimate activation (the stored memory
// feature); the classification layer on top emits C+1 logits.
// ---------------------------------------------------------------------------

struct HeadOutput {
  Tensor g;       // [N, D]
  Tensor logits;  // [N, C+1]
};

struct DetHeadCache {
  AffineCache a1;
  ReluCache r1;
  AffineCache a2;
  ReluCache r2;
  AffineCache acls;
  bool valid = false;
};

inline HeadOutput det_head(const Tensor& pooled_rows, const DetectorParams& d,
                           DetHeadCache* cache = nullptr) {
  auto [n, f] = detail::rows_cols(pooled_rows);
  (void)n;
  if (f != d.cfg.pooled_len())
    throw ShapeError("det_head: pooled input has wrong width");
  DetHeadCache local;
  DetHeadCache& cc = cache ? *cache : local;
  Tensor h1 = relu(
      affine_forward(pooled_rows, d.params.value("head.w1"), d.params.value("head.b1"), &cc.a1),
      &cc.r1);
  Tensor g = relu(affine_forward(h1, d.params.value("head.w2"), d.params.value("head.b2"), &cc.a2),
                  &cc.r2);
  Tensor logits = affine_forward(g, d.params.value("cls.w"), d.params.value("cls.b"), &cc.acls);
  if (cache) cache->valid = true;
  return HeadOutput{std::move(g), std::move(logits)};
}

/// Backward through the head. Either gradient may be empty (zero); returns
/// the gradient w.r.t. the pooled rows and accumulates parameter gradients.
/// With `accumulate_params` false the gradient still flows through to the
/// input, but the head's own parameters receive nothing (used when a loss
/// should shape only what feeds the head).
inline Tensor det_head_backward(DetHeadCache& cache, const std::optional<Tensor>& grad_logits,
                                const std::optional<Tensor>& grad_g, const DetectorParams& d,
                                GradMap& grads, bool accumulate_params = true) {
  (void)d;
  if (!cache.valid) throw UsageError("det_head_backward: stale or missing cache");
  cache.valid = false;
  if (!grad_logits && !grad_g)
    throw UsageError("det_head_backward: no upstream gradient supplied");

  Tensor grad_g_total;
  if (grad_logits) {
    AffineGrads gc = affine_backward(*grad_logits, cache.acls);
    if (accumulate_params) {
      grads.accumulate("cls.w", gc.w);
      grads.accumulate("cls.b", gc.b);
    }
    grad_g_total = std::move(gc.x);
    if (grad_g) add_in_place(grad_g_total, *grad_g);
  } else {
    grad_g_total = *grad_g;
  }
  Tensor gpre2 = relu_backward(grad_g_total, cache.r2);
  AffineGrads g2 = affine_backward(gpre2, cache.a2);
  Tensor gpre1 = relu_backward(g2.x, cache.r1);
  AffineGrads g1 = affine_backward(gpre1, cache.a1);
  if (accumulate_params) {
    grads.accumulate("head.w2", g2.w);
    grads.accumulate("head.b2", g2.b);
    grads.accumulate("head.w1", g1.w);
    grads.accumulate("head.b1", g1.b);
  }
  return g1.x;
}

/// Flattens a [P,P,C] pooled block to a head input row.
inline Tensor pooled_to_row(const Tensor& pooled) {
  return Tensor({static_cast<int>(pooled.numel())}, pooled.data);
}

// ---------------------------------------------------------------------------
// Anchors, NMS, detection.
// ---------------------------------------------------------------------------

struct Detection {
  BoxF box;
  int class_id = 0;
  float score = 0.0f;
  int anchor_index = -1;  // grid index, kept for feature recomputation
};

inline std::vector<BoxF> anchor_grid(int image_h, int image_w, const std::vector<AnchorLevel>& levels) {
  std::vector<BoxF> anchors;
  for (const auto& lvl : levels) {
    for (int y = 0; y + lvl.window <= image_h; y += lvl.stride)
      for (int x = 0; x + lvl.window <= image_w; x += lvl.stride)
        anchors.push_back(BoxF{static_cast<float>(x), static_cast<float>(y),
                               static_cast<float>(x + lvl.window),
                               static_cast<float>(y + lvl.window)});
  }
  return anchors;
}

/// Greedy per-class suppression in descending score order; ties broken by
/// lower box coordinates, then insertion order. A detection is suppressed
/// when it overlaps an already-kept same-class detection at IoU >= threshold.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold) {
  if (!(iou_threshold >= 0.0f && iou_threshold <= 1.0f))
    throw ArgumentError("nms: iou_threshold must be in [0,1]");
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (!(dets[a].box == dets[b].box)) return box_coord_less(dets[a].box, dets[b].box);
    return a < b;
  });
  std::vector<Detection> kept;
  for (size_t idx : order) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id != cand.class_id) continue;
      if (iou(k.box, cand.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Scores every anchor window, drops background argmaxes, applies per-class
/// NMS, then keeps detections with score >= delta, sorted by descending
/// score. `bg_probs`, when given, receives every anchor's background
/// probability (used to pick trustworthy negatives on unlabeled images).
inline std::vector<Detection> propose_and_detect(const Tensor& image, const DetectorParams& d,
                                                 float delta, float nms_iou,
                                                 std::vector<float>* bg_probs = nullptr) {
  if (!(delta >= 0.0f && delta <= 1.0f))
    throw ArgumentError("propose_and_detect: delta must be in [0,1]");
  FeatureMap fm = extract_features(image, d);
  std::vector<BoxF> anchors = anchor_grid(image.dim(0), image.dim(1), d.cfg.anchors);
  if (anchors.empty()) return {};

  int flen = d.cfg.pooled_len();
  Tensor rows({static_cast<int>(anchors.size()), flen});
  for (size_t a = 0; a < anchors.size(); ++a) {
    Tensor pooled = box_pool(fm.t, fm.to_cell_space(anchors[a]), d.cfg.pool_size);
    std::copy(pooled.data.begin(), pooled.data.end(),
              rows.data.begin() + static_cast<long>(a) * flen);
  }
  HeadOutput out = det_head(rows, d);

  int n_logits = d.cfg.num_classes + 1;
  if (bg_probs) bg_probs->assign(anchors.size(), 0.0f);
  std::vector<Detection> candidates;
  for (size_t a = 0; a < anchors.size(); ++a) {
    auto probs = softmax_probs(out.logits.data.data() + static_cast<long>(a) * n_logits, n_logits);
    if (bg_probs)
      (*bg_probs)[a] = static_cast<float>(probs[static_cast<size_t>(d.cfg.background_class())]);
    int best = 0;
    for (int c = 1; c < n_logits; ++c)
      if (probs[static_cast<size_t>(c)] > probs[static_cast<size_t>(best)]) best = c;
    if (best == d.cfg.background_class()) continue;
    candidates.push_back(Detection{anchors[a], best, static_cast<float>(probs[static_cast<size_t>(best)]),
                                   static_cast<int>(a)});
  }
  std::vector<Detection> kept = nms(candidates, nms_iou);
  std::vector<Detection> final;
  for (const auto& k : kept)
    if (k.score >= delta) final.push_back(k);
  std::stable_sort(final.begin(), final.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (!(a.box == b.box)) return box_coord_less(a.box, b.box);
    return false;
  });
  return final;
}

}  // namespace simalign
