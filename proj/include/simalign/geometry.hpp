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
#include <cstdint>

#include "simalign/common.hpp"

namespace simalign {

/// Axis-aligned box with x0 < x1, y0 < y1 in pixel coordinates.
struct BoxF {
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return static_cast<double>(x1) - x0; }
  double height() const { return static_cast<double>(y1) - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 > x0 && y1 > y0; }

  bool operator==(const BoxF& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

inline double intersection_area(const BoxF& a, const BoxF& b) {
  double w = std::min<double>(a.x1, b.x1) - std::max<double>(a.x0, b.x0);
  double h = std::min<double>(a.y1, b.y1) - std::max<double>(a.y0, b.y0);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union in [0, 1].
inline double iou(const BoxF& a, const BoxF& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Lexicographic order on (x0, y0, x1, y1), the deterministic tie-breaker.
inline bool box_coord_less(const BoxF& a, const BoxF& b) {
  if (a.x0 != b.x0) return a.x0 < b.x0;
  if (a.y0 != b.y0) return a.y0 < b.y0;
  if (a.x1 != b.x1) return a.x1 < b.x1;
  return a.y1 < b.y1;
}

}  // namespace simalign
