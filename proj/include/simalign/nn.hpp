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
#include <utility>
#include <vector>

#include "simalign/rng.hpp"
#include "simalign/tensor.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Affine layer: y = xW + b. x is [N,I] (a bare [I] vector is treated as one
// row), W is [I,O], b is [O]. Output accumulates in double.
// ---------------------------------------------------------------------------

struct AffineCache {
  Tensor x;
  Tensor w;
  bool valid = false;
};

struct AffineGrads {
  Tensor x;
  Tensor w;
  Tensor b;
};

namespace detail {
inline std::pair<int, int> rows_cols(const Tensor& x) {
  if (x.ndim() == 1) return {1, x.dim(0)};
  if (x.ndim() == 2) return {x.dim(0), x.dim(1)};
  throw ShapeError("affine: input must be 1-D or 2-D, got " + x.shape_str());
}
}  // namespace detail

inline Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                             AffineCache* cache = nullptr) {
  auto [n, in_dim] = detail::rows_cols(x);
  if (w.ndim() != 2 || w.dim(0) != in_dim)
    throw ShapeError("affine_forward: x " + x.shape_str() + " incompatible with w " + w.shape_str());
  int out_dim = w.dim(1);
  if (b.ndim() != 1 || b.dim(0) != out_dim)
    throw ShapeError("affine_forward: bias " + b.shape_str() + " incompatible with w " + w.shape_str());

  Tensor y(x.ndim() == 1 ? std::vector<int>{out_dim} : std::vector<int>{n, out_dim});
  std::vector<double> acc(static_cast<size_t>(out_dim));
  for (int r = 0; r < n; ++r) {
    for (int o = 0; o < out_dim; ++o) acc[static_cast<size_t>(o)] = b.data[static_cast<size_t>(o)];
    const float* xr = x.data.data() + static_cast<size_t>(r) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      double xv = xr[i];
      const float* wr = w.data.data() + static_cast<size_t>(i) * out_dim;
      for (int o = 0; o < out_dim; ++o) acc[static_cast<size_t>(o)] += xv * wr[o];
    }
    float* yr = y.data.data() + static_cast<size_t>(r) * out_dim;
    for (int o = 0; o < out_dim; ++o) yr[o] = static_cast<float>(acc[static_cast<size_t>(o)]);
  }
  require_finite(y, "affine_forward");
  if (cache) {
    cache->x = x;
    cache->w = w;
    cache->valid = true;
  }
  return y;
}

/// Analytic gradients of the affine map. Consumes the cache.
inline AffineGrads affine_backward(const Tensor& grad_y, AffineCache& cache) {
  if (!cache.valid) throw UsageError("affine_backward: stale or missing cache");
  cache.valid = false;
  const Tensor& x = cache.x;
  const Tensor& w = cache.w;
  auto [n, in_dim] = detail::rows_cols(x);
  int out_dim = w.dim(1);
  auto [gn, gout] = detail::rows_cols(grad_y);
  if (gn != n || gout != out_dim)
    throw ShapeError("affine_backward: grad shape " + grad_y.shape_str() + " mismatch");

  AffineGrads g;
  g.x = Tensor(x.shape);
  g.w = Tensor(w.shape);
  g.b = Tensor({out_dim});

  std::vector<double> gw(static_cast<size_t>(in_dim) * out_dim, 0.0);
  std::vector<double> gb(static_cast<size_t>(out_dim), 0.0);
  for (int r = 0; r < n; ++r) {
    const float* gyr = grad_y.data.data() + static_cast<size_t>(r) * out_dim;
    const float* xr = x.data.data() + static_cast<size_t>(r) * in_dim;
    float* gxr = g.x.data.data() + static_cast<size_t>(r) * in_dim;
    for (int o = 0; o < out_dim; ++o) gb[static_cast<size_t>(o)] += gyr[o];
    for (int i = 0; i < in_dim; ++i) {
      const float* wr = w.data.data() + static_cast<size_t>(i) * out_dim;
      double* gwr = gw.data() + static_cast<size_t>(i) * out_dim;
      double acc = 0.0;
      double xv = xr[i];
      for (int o = 0; o < out_dim; ++o) {
        acc += static_cast<double>(gyr[o]) * wr[o];
        gwr[o] += xv * gyr[o];
      }
      gxr[i] = static_cast<float>(acc);
    }
  }
  for (size_t i = 0; i < gw.size(); ++i) g.w.data[i] = static_cast<float>(gw[i]);
  for (size_t i = 0; i < gb.size(); ++i) g.b.data[i] = static_cast<float>(gb[i]);
  require_finite(g.x, "affine_backward");
  return g;
}

// ---------------------------------------------------------------------------
// ReLU.
// ---------------------------------------------------------------------------

struct ReluCache {
  Tensor x;
  bool valid = false;
};

inline Tensor relu(const Tensor& x, ReluCache* cache = nullptr) {
  Tensor y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  if (cache) {
    cache->x = x;
    cache->valid = true;
  }
  return y;
}

/// Backward masks gradients where the forward input was <= 0.
inline Tensor relu_backward(const Tensor& grad_y, ReluCache& cache) {
  if (!cache.valid) throw UsageError("relu_backward: stale or missing cache");
  cache.valid = false;
  if (!grad_y.same_shape(cache.x)) throw ShapeError("relu_backward: grad shape mismatch");
  Tensor g = grad_y;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (cache.x.data[i] <= 0.0f) g.data[i] = 0.0f;
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over a single logit row.
// ---------------------------------------------------------------------------

struct SoftmaxResult {
  double loss = 0.0;
  Tensor grad_logits;      // softmax(logits) - onehot(label)
  std::vector<double> probs;
};

inline SoftmaxResult softmax_cross_entropy(const Tensor& logits, int label) {
  if (logits.ndim() != 1) throw ShapeError("softmax_cross_entropy: logits must be 1-D");
  int c = logits.dim(0);
  if (label < 0 || label >= c)
    throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) +
                        " out of range [0," + std::to_string(c) + ")");
  double max_logit = logits.data[0];
  for (float v : logits.data) max_logit = std::max<double>(max_logit, v);
  double denom = 0.0;
  std::vector<double> e(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    e[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits.data[static_cast<size_t>(i)]) - max_logit);
    denom += e[static_cast<size_t>(i)];
  }
  SoftmaxResult r;
  r.probs.resize(static_cast<size_t>(c));
  r.grad_logits = Tensor({c});
  for (int i = 0; i < c; ++i) {
    double p = e[static_cast<size_t>(i)] / denom;
    r.probs[static_cast<size_t>(i)] = p;
    r.grad_logits.data[static_cast<size_t>(i)] = static_cast<float>(p - (i == label ? 1.0 : 0.0));
  }
  r.loss = -(static_cast<double>(logits.data[static_cast<size_t>(label)]) - max_logit - std::log(denom));
  if (!std::isfinite(r.loss)) throw NumericalError("softmax_cross_entropy: non-finite loss");
  return r;
}

/// Softmax probabilities of one row, computed in double.
inline std::vector<double> softmax_probs(const float* logits, int c) {
  double max_logit = logits[0];
  for (int i = 1; i < c; ++i) max_logit = std::max<double>(max_logit, logits[i]);
  std::vector<double> p(static_cast<size_t>(c));
  double denom = 0.0;
  for (int i = 0; i < c; ++i) {
    p[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits[i]) - max_logit);
    denom += p[static_cast<size_t>(i)];
  }
  for (double& v : p) v /= denom;
  return p;
}

// ---------------------------------------------------------------------------
// Parameter sets and SGD with classic (heavy-ball) momentum:
//   v <- momentum * v + grad;  p <- p - lr * v
// ---------------------------------------------------------------------------

struct Param {
  Tensor value;
  Tensor momentum;
};

struct ParamSet {
  std::map<std::string, Param> params;

  void add(const std::string& name, Tensor value) {
    if (params.count(name)) throw UsageError("ParamSet: duplicate name " + name);
    Param p;
    p.momentum = Tensor(value.shape);
    p.value = std::move(value);
    params.emplace(name, std::move(p));
  }

  Tensor& value(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("ParamSet: unknown name " + name);
    return it->second.value;
  }
  const Tensor& value(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("ParamSet: unknown name " + name);
    return it->second.value;
  }

  uint64_t content_hash() const {
    uint64_t h = kFnvOffset;
    for (const auto& [name, p] : params) {
      h = fnv1a(name, h);
      h = tensor_hash(p.value, h);
    }
    return h;
  }
};

/// Named gradients; accumulating twice under one name sums the tensors.
struct GradMap {
  std::map<std::string, Tensor> grads;

  void accumulate(const std::string& name, const Tensor& g, float scale = 1.0f) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, scale == 1.0f ? g : scaled(g, scale));
    } else {
      add_in_place(it->second, g, scale);
    }
  }

  void accumulate_all(const GradMap& other, float scale = 1.0f) {
    for (const auto& [name, g] : other.grads) accumulate(name, g, scale);
  }

  /// Zero-initialized gradient for every parameter in the set.
  static GradMap zeros_like(const ParamSet& ps) {
    GradMap gm;
    for (const auto& [name, p] : ps.params) gm.grads.emplace(name, Tensor(p.value.shape));
    return gm;
  }
};

inline void sgd_step(ParamSet& params, const GradMap& grads, float lr, float momentum) {
  if (grads.grads.size() != params.params.size())
    throw UsageError("sgd_step: gradient names do not cover the parameter set");
  auto pit = params.params.begin();
  auto git = grads.grads.begin();
  for (; pit != params.params.end(); ++pit, ++git) {
    if (pit->first != git->first)
      throw UsageError("sgd_step: gradient name mismatch at " + pit->first);
    Param& p = pit->second;
    const Tensor& g = git->second;
    if (!p.value.same_shape(g))
      throw ShapeError("sgd_step: gradient shape mismatch at " + pit->first);
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      float v = momentum * p.momentum.data[i] + g.data[i];
      p.momentum.data[i] = v;
      p.value.data[i] -= lr * v;
    }
    require_finite(p.value, "sgd_step");
  }
}

// ---------------------------------------------------------------------------
// Central-difference gradient oracle:
//   (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
// ---------------------------------------------------------------------------

inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps) {
  if (eps <= 0.0) throw ArgumentError("finite_diff_grad: eps must be positive");
  Tensor grad(x.shape);
  Tensor probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    float orig = probe.data[i];
    probe.data[i] = static_cast<float>(orig + eps);
    double plus = f(probe);
    probe.data[i] = static_cast<float>(orig - eps);
    double minus = f(probe);
    probe.data[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericalError("finite_diff_grad: non-finite evaluation");
    grad.data[i] = static_cast<float>((plus - minus) / (2.0 * eps));
  }
  return grad;
}

/// Fills a tensor with normal(0, scale) draws from the stream.
inline Tensor random_normal(std::vector<int> shape, double scale, RngStream& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

}  // namespace simalign
