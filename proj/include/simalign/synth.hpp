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
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "simalign/geometry.hpp"
#include "simalign/rng.hpp"
#include "simalign/tensor.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Scene model: controlled two-domain synthetic scenes. Objects are flat
// colored shapes on a uniform background; the target domain is a fogged copy
// of the source. Every variant keeps a provenance link to its parent.
// ---------------------------------------------------------------------------

enum class ShapeKind { kRectCar = 0, kWedge = 1, kDisc = 2 };
enum class Orientation { kNormal = 0, kFlipped = 1 };
enum class Domain { kSource = 0, kTarget = 1 };
enum class VariantMode { kColor = 0, kRotation = 1, kColorRotation = 2 };

namespace provenance_tag {
inline constexpr uint32_t kColor = 1u << 0;
inline constexpr uint32_t kRotation = 1u << 1;
inline constexpr uint32_t kFog = 1u << 2;
}  // namespace provenance_tag

struct ObjectSpec {
  uint64_t uid = 0;
  int class_id = 0;
  ShapeKind shape = ShapeKind::kRectCar;
  std::array<float, 3> color = {1.0f, 0.0f, 0.0f};
  Orientation orientation = Orientation::kNormal;
  int x = 0, y = 0;  // top-left pixel
  int w = 0, h = 0;  // size in pixels, >= 4x4
};

struct AnnotatedBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int class_id = 0;
  uint64_t object_uid = 0;

  BoxF as_boxf() const {
    return BoxF{static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x1),
                static_cast<float>(y1)};
  }
};

struct Provenance {
  uint64_t parent_scene_uid = 0;
  uint32_t tags = 0;
};

struct SceneSample {
  Tensor image;  // [H, W, 3], values in [0, 1]
  std::vector<AnnotatedBox> boxes;
  Domain domain = Domain::kSource;
  uint64_t scene_uid = 0;
  std::optional<Provenance> provenance;

  // Generator-side metadata: present on freshly generated scenes, empty after
  // a dataset round-trip. Needed to re-render transform variants.
  std::vector<ObjectSpec> objects;
  float background_gray = 0.0f;

  int height() const { return image.dim(0); }
  int width() const { return image.dim(1); }
};

struct BackgroundParams {
  int height = 64;
  int width = 64;
  float gray = 0.45f;
};

/// Deterministic 64-bit avalanche mix, used to derive variant uids.
inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace uid_salt {
inline constexpr uint64_t kColor = 0xC0;
inline constexpr uint64_t kRotation = 0xD0;
inline constexpr uint64_t kColorRotation = 0xE0;
inline constexpr uint64_t kFog = 0xF0;

inline uint64_t for_mode(VariantMode m) {
  switch (m) {
    case VariantMode::kColor: return kColor;
    case VariantMode::kRotation: return kRotation;
    case VariantMode::kColorRotation: return kColorRotation;
  }
  throw ArgumentError("unknown variant mode");
}
}  // namespace uid_salt

// ---------------------------------------------------------------------------
// Color handling. The color transform is a hue rotation with a fixed table of
// shift angles keyed by object uid, so variants are visibly distinct and the
// expected pixel values can be recomputed exactly.
// ---------------------------------------------------------------------------

inline std::array<float, 3> rgb_to_hsv(const std::array<float, 3>& rgb) {
  float r = rgb[0], g = rgb[1], b = rgb[2];
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  float d = mx - mn;
  float h = 0.0f;
  if (d > 0.0f) {
    if (mx == r) h = 60.0f * std::fmod((g - b) / d + 6.0f, 6.0f);
    else if (mx == g) h = 60.0f * ((b - r) / d + 2.0f);
    else h = 60.0f * ((r - g) / d + 4.0f);
  }
  float s = mx > 0.0f ? d / mx : 0.0f;
  return {h, s, mx};
}

inline std::array<float, 3> hsv_to_rgb(const std::array<float, 3>& hsv) {
  float h = hsv[0], s = hsv[1], v = hsv[2];
  float c = v * s;
  float hp = h / 60.0f;
  float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  float m = v - c;
  return {r + m, g + m, b + m};
}

inline std::array<float, 3> rotate_hue(const std::array<float, 3>& rgb, float degrees) {
  auto hsv = rgb_to_hsv(rgb);
  hsv[0] = std::fmod(hsv[0] + degrees + 360.0f, 360.0f);
  return hsv_to_rgb(hsv);
}

/// Hue shift table keyed by object uid: one of {100, 160, 220} degrees.
inline float hue_shift_for_uid(uint64_t uid) {
  static constexpr float kShifts[3] = {100.0f, 160.0f, 220.0f};
  return kShifts[mix64(uid, 0xA11CE) % 3];
}

/// Saturated palette for object base colors.
inline const std::vector<std::array<float, 3>>& object_palette() {
  static const std::vector<std::array<float, 3>> kPalette = {
      {0.85f, 0.15f, 0.15f}, {0.15f, 0.65f, 0.20f}, {0.15f, 0.25f, 0.85f},
      {0.85f, 0.70f, 0.10f}, {0.70f, 0.15f, 0.75f}, {0.10f, 0.70f, 0.70f},
  };
  return kPalette;
}

// ---------------------------------------------------------------------------
// Rasterization. Each shape is horizontally asymmetric so the rotation
// (horizontal flip) variant is visibly distinct, and each shape touches all
// four edges of its box so the annotation is the tight bound of the painted
// pixels.
// ---------------------------------------------------------------------------

namespace detail {

// Paint decision in box-local pixel coords (lx, ly), before flipping.
// Returns false for background, true with the pixel color otherwise.
inline bool shape_pixel(const ObjectSpec& o, int lx, int ly, std::array<float, 3>* out) {
  const int w = o.w, h = o.h;
  switch (o.shape) {
    case ShapeKind::kRectCar: {
      int body_top = static_cast<int>(std::lround(0.45 * h));
      if (ly >= body_top) {
        *out = o.color;
        return true;
      }
      // Cab over the left 60% of the roof, darker shade of the body color.
      if (lx < static_cast<int>(std::lround(0.6 * w))) {
        *out = {0.65f * o.color[0], 0.65f * o.color[1], 0.65f * o.color[2]};
        return true;
      }
      return false;
    }
    case ShapeKind::kWedge: {
      // Upper-left right triangle; index-based fractions keep the extreme
      // rows/columns painted so the box bound stays tight.
      double fx = w > 1 ? static_cast<double>(lx) / (w - 1) : 0.0;
      double fy = h > 1 ? static_cast<double>(ly) / (h - 1) : 0.0;
      if (fx + fy <= 1.0 + 1e-9) {
        *out = o.color;
        return true;
      }
      return false;
    }
    case ShapeKind::kDisc: {
      double cx = 0.5 * w, cy = 0.5 * h;
      double nx = (lx + 0.5 - cx) / (0.5 * w);
      double ny = (ly + 0.5 - cy) / (0.5 * h);
      if (nx * nx + ny * ny > 1.0) return false;
      // Off-center eye in the complementary color.
      double ex = 0.30 * w, ey = 0.38 * h;
      double er = std::max(1.2, 0.14 * std::min(w, h));
      double dx = lx + 0.5 - ex, dy = ly + 0.5 - ey;
      if (dx * dx + dy * dy <= er * er) {
        *out = {1.0f - o.color[0], 1.0f - o.color[1], 1.0f - o.color[2]};
      } else {
        *out = o.color;
      }
      return true;
    }
  }
  return false;
}

inline void paint_object(Tensor& image, const ObjectSpec& o) {
  for (int ly = 0; ly < o.h; ++ly) {
    for (int lx = 0; lx < o.w; ++lx) {
      int sample_x = o.orientation == Orientation::kFlipped ? o.w - 1 - lx : lx;
      std::array<float, 3> color;
      if (!shape_pixel(o, sample_x, ly, &color)) continue;
      int px = o.x + lx, py = o.y + ly;
      image.at(py, px, 0) = color[0];
      image.at(py, px, 1) = color[1];
      image.at(py, px, 2) = color[2];
    }
  }
}

inline void validate_layout(const std::vector<ObjectSpec>& specs, const BackgroundParams& bg) {
  if (specs.size() > 8) throw ArgumentError("render_scene: more than 8 objects");
  for (const auto& o : specs) {
    if (o.w < 4 || o.h < 4) throw ArgumentError("render_scene: object smaller than 4x4");
    if (o.x < 0 || o.y < 0 || o.x + o.w > bg.width || o.y + o.h > bg.height)
      throw ArgumentError("render_scene: object exceeds image bounds");
  }
  for (size_t i = 0; i < specs.size(); ++i) {
    for (size_t j = i + 1; j < specs.size(); ++j) {
      BoxF a{static_cast<float>(specs[i].x), static_cast<float>(specs[i].y),
             static_cast<float>(specs[i].x + specs[i].w), static_cast<float>(specs[i].y + specs[i].h)};
      BoxF b{static_cast<float>(specs[j].x), static_cast<float>(specs[j].y),
             static_cast<float>(specs[j].x + specs[j].w), static_cast<float>(specs[j].y + specs[j].h)};
      if (iou(a, b) > 0.30 + 1e-9)
        throw LayoutError("render_scene: objects overlap beyond 30% IoU");
    }
  }
}

inline SceneSample render_core(const std::vector<ObjectSpec>& specs, const BackgroundParams& bg,
                               uint64_t scene_uid) {
  validate_layout(specs, bg);
  SceneSample s;
  s.image = Tensor::full({bg.height, bg.width, 3}, bg.gray);
  s.background_gray = bg.gray;
  s.scene_uid = scene_uid;
  s.domain = Domain::kSource;
  s.objects = specs;
  for (const auto& o : specs) {
    paint_object(s.image, o);
    s.boxes.push_back(AnnotatedBox{o.x, o.y, o.x + o.w, o.y + o.h, o.class_id, o.uid});
  }
  require_finite(s.image, "render_scene");
  return s;
}

}  // namespace detail

/// Rasterizes the object specs onto a uniform background. The rng supplies
/// the scene uid; the raster itself is a pure function of the specs.
inline SceneSample render_scene(const std::vector<ObjectSpec>& specs, const BackgroundParams& bg,
                                RngStream& rng) {
  return detail::render_core(specs, bg, rng.next_u64());
}

/// Applies the color / rotation / color+rotation transform by re-rendering the
/// scene with modified object specs. Positions and the background are
/// untouched; object and scene uids are derived deterministically from the
/// parent's, and provenance records the parent plus accumulated tags.
inline SceneSample transform_variant(const SceneSample& scene, VariantMode mode) {
  if (scene.domain != Domain::kSource)
    throw ArgumentError("transform_variant: scene must be source-domain");
  if (scene.boxes.empty())
    throw ArgumentError("transform_variant: background-only scene");
  if (scene.objects.size() != scene.boxes.size())
    throw UsageError("transform_variant: scene lacks generator object metadata");

  uint64_t salt = uid_salt::for_mode(mode);
  bool recolor = mode == VariantMode::kColor || mode == VariantMode::kColorRotation;
  bool flip = mode == VariantMode::kRotation || mode == VariantMode::kColorRotation;

  std::vector<ObjectSpec> specs = scene.objects;
  for (auto& o : specs) {
    if (recolor) o.color = rotate_hue(o.color, hue_shift_for_uid(o.uid));
    if (flip)
      o.orientation =
          o.orientation == Orientation::kNormal ? Orientation::kFlipped : Orientation::kNormal;
    o.uid = mix64(o.uid, salt);
  }

  BackgroundParams bg{scene.height(), scene.width(), scene.background_gray};
  SceneSample out = detail::render_core(specs, bg, mix64(scene.scene_uid, salt));
  uint32_t tags = scene.provenance ? scene.provenance->tags : 0;
  if (recolor) tags |= provenance_tag::kColor;
  if (flip) tags |= provenance_tag::kRotation;
  out.provenance = Provenance{scene.scene_uid, tags};
  return out;
}

inline constexpr std::array<float, 3> kFogColor = {0.9f, 0.9f, 0.9f};

/// Linear blend toward the fog color. Boxes and object uids are unchanged;
/// the result is a target-domain scene whose provenance gains the fog tag.
inline SceneSample apply_fog(const SceneSample& scene, float intensity) {
  if (!(intensity >= 0.0f && intensity <= 1.0f))
    throw ArgumentError("apply_fog: intensity must be in [0,1]");
  SceneSample out = scene;
  for (int y = 0; y < scene.height(); ++y) {
    for (int x = 0; x < scene.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = scene.image.at(y, x, c);
        out.image.at(y, x, c) = (1.0f - intensity) * v + intensity * kFogColor[static_cast<size_t>(c)];
      }
    }
  }
  out.domain = Domain::kTarget;
  out.scene_uid = mix64(scene.scene_uid, uid_salt::kFog);
  uint32_t tags = scene.provenance ? scene.provenance->tags : 0;
  out.provenance = Provenance{scene.scene_uid, tags | provenance_tag::kFog};
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark generation.
// ---------------------------------------------------------------------------

struct DataConfig {
  int scenes = 500;
  int classes = 3;  // 2 or 3; shapes are assigned per class
  int image_size = 64;
  float fog = 0.6f;
  int min_objects = 1;
  int max_objects = 4;
};

/// Per-uid sibling links: the exact source counterpart of a target scene or
/// object plus its color / rotation / color+rotation variants.
struct SiblingSet {
  uint64_t source = 0;
  uint64_t color = 0;
  uint64_t rotation = 0;
  uint64_t color_rotation = 0;

  uint64_t get(VariantMode mode) const {
    switch (mode) {
      case VariantMode::kColor: return color;
      case VariantMode::kRotation: return rotation;
      case VariantMode::kColorRotation: return color_rotation;
    }
    throw ArgumentError("unknown variant mode");
  }
};

struct ProvenanceIndex {
  std::map<uint64_t, SiblingSet> scenes;   // keyed by target scene uid
  std::map<uint64_t, SiblingSet> objects;  // keyed by target object uid

  const SiblingSet& resolve_scene(uint64_t target_scene_uid) const {
    auto it = scenes.find(target_scene_uid);
    if (it == scenes.end())
      throw ProvenanceError("provenance: unknown target scene uid " + hex64(target_scene_uid));
    return it->second;
  }
  const SiblingSet& resolve_object(uint64_t target_object_uid) const {
    auto it = objects.find(target_object_uid);
    if (it == objects.end())
      throw ProvenanceError("provenance: unknown target object uid " + hex64(target_object_uid));
    return it->second;
  }
};

struct Dataset {
  std::vector<SceneSample> scenes;

  size_t size() const { return scenes.size(); }
  size_t total_boxes() const {
    size_t n = 0;
    for (const auto& s : scenes) n += s.boxes.size();
    return n;
  }
  const SceneSample* find(uint64_t scene_uid) const {
    for (const auto& s : scenes)
      if (s.scene_uid == scene_uid) return &s;
    return nullptr;
  }
};

struct Benchmark {
  Dataset source;
  Dataset target;
  Dataset variants;  // 3 per source scene, for provenance-driven alignment
  ProvenanceIndex provenance;
  DataConfig config;
  uint64_t seed = 0;
};

namespace detail {

inline ShapeKind shape_for_class(int class_id) {
  switch (class_id % 3) {
    case 0: return ShapeKind::kRectCar;
    case 1: return ShapeKind::kWedge;
    default: return ShapeKind::kDisc;
  }
}

// Two size bins matched to the anchor windows. Positions snap to the bin's
// grid so every object is covered by an anchor at IoU >= 0.5 (the toy
// detector has no box regression): sizes in [14,22] on the 8-px grid pair
// with 16-px windows, sizes in [23,32] on the 16-px grid with 32-px windows.
struct SizeBin {
  int min_size, max_size, grid;
};
inline constexpr SizeBin kSmallObjects{14, 22, 8};
inline constexpr SizeBin kLargeObjects{23, 32, 16};

/// Samples a non-degenerate layout of object specs; overlapping placements
/// are resampled with bounded retries and dropped if space cannot be found.
inline std::vector<ObjectSpec> sample_specs(const DataConfig& cfg, RngStream& rng) {
  int count = cfg.min_objects +
              static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
  std::vector<ObjectSpec> specs;
  const auto& palette = object_palette();
  for (int k = 0; k < count; ++k) {
    ObjectSpec o;
    o.uid = rng.next_u64();
    o.class_id = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.classes)));
    o.shape = shape_for_class(o.class_id);
    o.color = palette[rng.uniform_int(palette.size())];
    o.orientation = Orientation::kNormal;
    const SizeBin& bin = rng.uniform() < 0.6 ? kSmallObjects : kLargeObjects;
    auto dim = [&]() {
      return bin.min_size +
             static_cast<int>(rng.uniform_int(static_cast<uint64_t>(bin.max_size - bin.min_size + 1)));
    };
    o.w = dim();
    o.h = dim();
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      int slots_x = (cfg.image_size - o.w) / bin.grid + 1;
      int slots_y = (cfg.image_size - o.h) / bin.grid + 1;
      o.x = bin.grid * static_cast<int>(rng.uniform_int(static_cast<uint64_t>(slots_x)));
      o.y = bin.grid * static_cast<int>(rng.uniform_int(static_cast<uint64_t>(slots_y)));
      BoxF cand{static_cast<float>(o.x), static_cast<float>(o.y), static_cast<float>(o.x + o.w),
                static_cast<float>(o.y + o.h)};
      placed = true;
      for (const auto& other : specs) {
        BoxF ob{static_cast<float>(other.x), static_cast<float>(other.y),
                static_cast<float>(other.x + other.w), static_cast<float>(other.y + other.h)};
        if (iou(cand, ob) > 0.30) {
          placed = false;
          break;
        }
      }
    }
    if (placed) specs.push_back(o);
  }
  return specs;
}

}  // namespace detail

/// Builds the paired benchmark: N source scenes (one quarter replaced by a
/// random transform variant), their fogged copies as the target set, the
/// three materialized transform siblings of every source scene, and the
/// provenance index linking them.
inline Benchmark generate_benchmark(const DataConfig& cfg, uint64_t seed, int threads = 1) {
  if (cfg.scenes <= 0) throw ArgumentError("generate_benchmark: scenes must be positive");
  if (cfg.classes < 1) throw ArgumentError("generate_benchmark: classes must be >= 1");
  if (!(cfg.fog >= 0.0f && cfg.fog <= 1.0f))
    throw ArgumentError("generate_benchmark: fog must be in [0,1]");
  if (cfg.image_size < 40) throw ArgumentError("generate_benchmark: image size too small");

  Benchmark bench;
  bench.config = cfg;
  bench.seed = seed;

  RngStream root(seed);

  // Exactly floor(N/4) scenes are replaced by a random variant of themselves.
  RngStream replace_rng = root.substream(0x7E91);
  std::vector<int> order(static_cast<size_t>(cfg.scenes));
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = replace_rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<int> replace_mode(static_cast<size_t>(cfg.scenes), -1);
  for (int r = 0; r < cfg.scenes / 4; ++r)
    replace_mode[static_cast<size_t>(order[static_cast<size_t>(r)])] =
        static_cast<int>(replace_rng.uniform_int(3));

  RngStream data_root = root.substream(stream_salt::kData);

  struct SceneFamily {
    SceneSample source;
    SceneSample target;
    SceneSample color;
    SceneSample rotation;
    SceneSample color_rotation;
  };
  std::vector<SceneFamily> families(static_cast<size_t>(cfg.scenes));

  parallel_for(static_cast<size_t>(cfg.scenes), threads, [&](size_t i) {
    RngStream rng = data_root.substream(i);
    BackgroundParams bg{cfg.image_size, cfg.image_size,
                        static_cast<float>(0.35 + 0.20 * rng.uniform())};
    std::vector<ObjectSpec> specs = detail::sample_specs(cfg, rng);
    SceneSample base = render_scene(specs, bg, rng);
    SceneFamily& fam = families[i];
    int mode = replace_mode[i];
    fam.source = mode < 0 ? std::move(base)
                          : transform_variant(base, static_cast<VariantMode>(mode));
    fam.color = transform_variant(fam.source, VariantMode::kColor);
    fam.rotation = transform_variant(fam.source, VariantMode::kRotation);
    fam.color_rotation = transform_variant(fam.source, VariantMode::kColorRotation);
    fam.target = apply_fog(fam.source, cfg.fog);
  });

  for (auto& fam : families) {
    SiblingSet scene_links{fam.source.scene_uid, fam.color.scene_uid, fam.rotation.scene_uid,
                           fam.color_rotation.scene_uid};
    bench.provenance.scenes.emplace(fam.target.scene_uid, scene_links);
    for (size_t k = 0; k < fam.target.boxes.size(); ++k) {
      SiblingSet object_links{fam.source.boxes[k].object_uid, fam.color.boxes[k].object_uid,
                              fam.rotation.boxes[k].object_uid,
                              fam.color_rotation.boxes[k].object_uid};
      bench.provenance.objects.emplace(fam.target.boxes[k].object_uid, object_links);
    }
    bench.source.scenes.push_back(std::move(fam.source));
    bench.target.scenes.push_back(std::move(fam.target));
    bench.variants.scenes.push_back(std::move(fam.color));
    bench.variants.scenes.push_back(std::move(fam.rotation));
    bench.variants.scenes.push_back(std::move(fam.color_rotation));
  }
  return bench;
}

}  // namespace simalign
