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

#include "simalign/common.hpp"

namespace simalign {

/// Deterministic pseudorandom stream backed by splitmix64.
///
/// Identical seed + identical draw sequence gives bit-identical integer and
/// uniform-float outputs on every platform (pure integer arithmetic plus a
/// fixed power-of-two scaling). Substreams derive an independent stream from
/// (seed, salt) so per-scene work can run in parallel without sharing state.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : seed_(seed), state_(seed) {}

  static constexpr const char* kAlgorithm = "splitmix64";

  uint64_t seed() const { return seed_; }
  uint64_t draws() const { return draws_; }

  uint64_t next_u64() {
    ++draws_;
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform float in [0, 1) with 24 random bits.
  float uniform_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n), unbiased via rejection sampling.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw ArgumentError("uniform_int: n must be positive");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform value in [lo, hi).
  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (consumes two draws per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Independent stream derived from (seed, salt). Does not advance *this.
  RngStream substream(uint64_t salt) const {
    uint64_t s = seed_ ^ (0x9e3779b97f4a7c15ull + (salt << 1));
    s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ull;
    s = (s ^ (s >> 27)) * 0x94d049bb133111ebull;
    return RngStream(s ^ (s >> 31));
  }

 private:
  uint64_t seed_;
  uint64_t state_;
  uint64_t draws_ = 0;
};

// Stream salts, one per concern, so ablations differ only in the intended
// factor (changing negative sampling never perturbs data generation).
namespace stream_salt {
inline constexpr uint64_t kData = 0x01;
inline constexpr uint64_t kInit = 0x02;
inline constexpr uint64_t kNegatives = 0x03;
inline constexpr uint64_t kShuffle = 0x04;
inline constexpr uint64_t kSubsample = 0x05;
}  // namespace stream_salt

}  // namespace simalign
