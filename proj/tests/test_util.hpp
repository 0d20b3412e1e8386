// Shared helpers for the test suites.
#pragma once

#include <cmath>
#include <cstdint>

#include "simalign/nn.hpp"
#include "simalign/tensor.hpp"

namespace simalign::testutil {

inline Tensor random_tensor(std::vector<int> shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * scale);
  return t;
}

/// Relative error between an analytic gradient and its oracle, measured as
/// ||a - b|| / ||b|| with an absolute fallback for near-zero oracles.
inline double rel_error(const Tensor& analytic, const Tensor& oracle) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < oracle.data.size(); ++i) {
    double d = static_cast<double>(analytic.data[i]) - oracle.data[i];
    num += d * d;
    den += static_cast<double>(oracle.data[i]) * oracle.data[i];
  }
  num = std::sqrt(num);
  den = std::sqrt(den);
  if (den < 1e-8) return num < 1e-6 ? 0.0 : 1.0;
  return num / den;
}

}  // namespace simalign::testutil
