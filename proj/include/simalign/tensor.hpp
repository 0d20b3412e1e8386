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
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "simalign/common.hpp"

namespace simalign {

/// Dense row-major float32 tensor. Reductions accumulate in double.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0f) {}
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != data.size())
      throw ShapeError("tensor: shape/data size mismatch");
  }

  static size_t checked_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeError("tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  float& at(int i) { return data[static_cast<size_t>(i)]; }
  const float& at(int i) const { return data[static_cast<size_t>(i)]; }
  float& at(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
  const float& at(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }
  float& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  const float& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline bool all_finite(const Tensor& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void require_finite(const Tensor& t, const char* where) {
  if (!all_finite(t)) throw NumericalError(std::string(where) + ": non-finite values");
}

inline double sum64(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data) acc += v;
  return acc;
}

inline double dot64(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("dot: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    acc += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return acc;
}

inline double norm64(const Tensor& t) { return std::sqrt(dot64(t, t)); }

/// Squared Euclidean distance, accumulated in double.
inline double squared_distance(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("squared_distance: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return acc;
}

/// Scales v to unit L2 norm. The zero vector is a degenerate input.
inline Tensor l2_normalize(const Tensor& v) {
  double n = norm64(v);
  if (n <= 0.0) throw ArgumentError("l2_normalize: zero vector");
  Tensor out = v;
  for (float& x : out.data) x = static_cast<float>(x / n);
  require_finite(out, "l2_normalize");
  return out;
}

/// Cosine similarity in [-1, 1]. Both vectors must be nonzero.
inline double cosine_similarity(const Tensor& a, const Tensor& b) {
  double na = norm64(a);
  double nb = norm64(b);
  if (na <= 0.0 || nb <= 0.0) throw ArgumentError("cosine_similarity: zero vector");
  double c = dot64(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

inline Tensor scaled(const Tensor& t, float s) {
  Tensor out = t;
  for (float& v : out.data) v *= s;
  return out;
}

inline void add_in_place(Tensor& dst, const Tensor& src, float scale = 1.0f) {
  if (!dst.same_shape(src)) throw ShapeError("add_in_place: shape mismatch");
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

inline uint64_t tensor_hash(const Tensor& t, uint64_t h = kFnvOffset) {
  for (int d : t.shape) h = fnv1a(&d, sizeof(d), h);
  if (!t.data.empty()) h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
  return h;
}

}  // namespace simalign
