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
#include <string>
#include <vector>

#include "simalign/nn.hpp"

namespace simalign {

// ---------------------------------------------------------------------------
// Foreground alignment: similarity-weighted triplet loss
//   L = (1/N) sum_i w_i * [ ||t - p||^2 - min_j ||t - n_j||^2 + margin ]_+
// with w = cosine(t, p) clamped to [0,1] and treated as a constant. An empty
// negative set degenerates to pure weighted attraction, w * [||t - p||^2]_+.
// ---------------------------------------------------------------------------

struct AlignmentPair {
  Tensor target;                  // anchor feature from the target domain
  Tensor positive;                // retrieved source feature (constant)
  std::vector<Tensor> negatives;  // cross-category source features (constants)
  double similarity = 0.0;        // raw cosine(target, positive), in [-1, 1]
  std::string strategy_tag;
  int target_index = -1;          // caller-side routing key
};

struct FgLossReport {
  double value = 0.0;
  std::vector<Tensor> pair_grads;  // d loss / d target, one per pair
  size_t pair_count = 0;
};

inline FgLossReport loss_fg(const std::vector<AlignmentPair>& pairs, float margin) {
  FgLossReport report;
  report.pair_count = pairs.size();
  if (pairs.empty()) return report;  // absent pairs: zero loss, zero gradients

  double n = static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& pair : pairs) {
    double w = std::clamp(pair.similarity, 0.0, 1.0);
    double d_pos = squared_distance(pair.target, pair.positive);
    const Tensor* nearest_neg = nullptr;
    double d_neg = 0.0;
    for (const auto& neg : pair.negatives) {
      double dist = squared_distance(pair.target, neg);
      if (!nearest_neg || dist < d_neg) {
        nearest_neg = &neg;
        d_neg = dist;
      }
    }
    double hinge = nearest_neg ? d_pos - d_neg + margin : d_pos;

    Tensor grad(pair.target.shape);
    if (hinge > 0.0 && w > 0.0) {
      total += w * hinge;
      float scale = static_cast<float>(2.0 * w / n);
      for (size_t i = 0; i < grad.data.size(); ++i) {
        float pull = pair.target.data[i] - pair.positive.data[i];
        float push = nearest_neg ? pair.target.data[i] - nearest_neg->data[i] : 0.0f;
        grad.data[i] = scale * (pull - push);
      }
    }
    require_finite(grad, "loss_fg");
    report.pair_grads.push_back(std::move(grad));
  }
  report.value = total / n;
  if (!std::isfinite(report.value)) throw NumericalError("loss_fg: non-finite loss");
  return report;
}

// ---------------------------------------------------------------------------
// Domain discriminator: D -> hidden -> 1 with a clamped logistic output,
//   p = eps + (1 - 2 eps) * sigmoid(z),   eps = 1e-6,
// so the probability stays strictly inside (0, 1) without killing gradients.
// ---------------------------------------------------------------------------

inline constexpr double kLogisticEps = 1e-6;
inline constexpr int kDiscriminatorHidden = 32;

inline ParamSet init_discriminator(int dim, RngStream& rng, int hidden = kDiscriminatorHidden) {
  ParamSet d;
  d.add("disc.w1", random_normal({dim, hidden}, std::sqrt(2.0 / dim), rng));
  d.add("disc.b1", Tensor({hidden}));
  d.add("disc.w2", random_normal({hidden, 1}, std::sqrt(1.0 / hidden), rng));
  d.add("disc.b2", Tensor({1}));
  return d;
}

struct DiscriminatorCache {
  AffineCache a1;
  ReluCache r1;
  AffineCache a2;
  double sigmoid = 0.5;
  bool valid = false;
};

inline double discriminator_forward(const Tensor& v, const ParamSet& disc,
                                    DiscriminatorCache* cache = nullptr) {
  require_finite(v, "discriminator_forward");
  DiscriminatorCache local;
  DiscriminatorCache& cc = cache ? *cache : local;
  Tensor h = relu(affine_forward(v, disc.value("disc.w1"), disc.value("disc.b1"), &cc.a1), &cc.r1);
  Tensor z = affine_forward(h, disc.value("disc.w2"), disc.value("disc.b2"), &cc.a2);
  double s = 1.0 / (1.0 + std::exp(-static_cast<double>(z.data[0])));
  cc.sigmoid = s;
  if (cache) cache->valid = true;
  return kLogisticEps + (1.0 - 2.0 * kLogisticEps) * s;
}

namespace detail {

/// Backward of d(p)/dz through the clamped logistic, the hidden layer, and
/// into both the discriminator parameters and the input feature.
inline Tensor discriminator_backward(double grad_p, DiscriminatorCache& cache, GradMap& grads) {
  if (!cache.valid) throw UsageError("discriminator_backward: stale or missing cache");
  cache.valid = false;
  double s = cache.sigmoid;
  double grad_z = grad_p * (1.0 - 2.0 * kLogisticEps) * s * (1.0 - s);
  Tensor gz({1}, {static_cast<float>(grad_z)});
  AffineGrads g2 = affine_backward(gz, cache.a2);
  grads.accumulate("disc.w2", g2.w);
  grads.accumulate("disc.b2", g2.b);
  Tensor gh = relu_backward(g2.x, cache.r1);
  AffineGrads g1 = affine_backward(gh, cache.a1);
  grads.accumulate("disc.w1", g1.w);
  grads.accumulate("disc.b1", g1.b);
  return g1.x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Background alignment: binary cross-entropy with source labeled 1 and
// target labeled 0,
//   L = -mean_s log d(bg_s) - mean_t log(1 - d(bg_t)).
// The discriminator descends on L; target features receive the reversed
// gradient (-grl_lambda * dL/dt). Source features come from memory and stay
// constant.
// ---------------------------------------------------------------------------

struct BgLossReport {
  double value = 0.0;
  GradMap disc_grads;
  std::vector<Tensor> target_grads;  // per target feature, reversal applied
  bool skipped = false;
  size_t n_source = 0;
  size_t n_target = 0;
};

inline BgLossReport loss_bg(const std::vector<Tensor>& source_bgs,
                            const std::vector<Tensor>& target_bgs, const ParamSet& disc,
                            float grl_lambda) {
  BgLossReport report;
  report.n_source = source_bgs.size();
  report.n_target = target_bgs.size();
  if (source_bgs.empty() || target_bgs.empty()) {
    report.skipped = true;
    return report;
  }

  double loss = 0.0;
  double inv_s = 1.0 / static_cast<double>(source_bgs.size());
  double inv_t = 1.0 / static_cast<double>(target_bgs.size());

  for (const auto& v : source_bgs) {
    DiscriminatorCache cache;
    double p = discriminator_forward(v, disc, &cache);
    loss -= inv_s * std::log(p);
    detail::discriminator_backward(-inv_s / p, cache, report.disc_grads);
  }
  for (const auto& v : target_bgs) {
    DiscriminatorCache cache;
    double p = discriminator_forward(v, disc, &cache);
    loss -= inv_t * std::log(1.0 - p);
    Tensor grad_v = detail::discriminator_backward(inv_t / (1.0 - p), cache, report.disc_grads);
    report.target_grads.push_back(scaled(grad_v, -grl_lambda));
  }
  report.value = loss;
  if (!std::isfinite(loss)) throw NumericalError("loss_bg: non-finite loss");
  return report;
}

/// Gradient reversal: identity forward, -lambda * grad backward.
inline Tensor grad_reverse(const Tensor& grad, float lambda) { return scaled(grad, -lambda); }

}  // namespace simalign
