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

#include <catch2/catch_amalgamated.hpp>

#include "simalign/nn.hpp"
#include "simalign/rng.hpp"
#include "simalign/tensor.hpp"
#include "test_util.hpp"

using namespace simalign;
using testutil::random_tensor;
using testutil::rel_error;

TEST_CASE("affine_forward identity and bias pass-through") {
  Tensor x({2}, {1.0f, 0.0f});
  Tensor w({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor b({2}, {0.0f, 0.0f});
  Tensor y = affine_forward(x, w, b);
  CHECK(y.data[0] == 1.0f);
  CHECK(y.data[1] == 0.0f);

  Tensor x0({2}, {0.0f, 0.0f});
  Tensor w2({2, 2}, {4.0f, -2.0f, 7.0f, 0.5f});
  Tensor b2({2}, {3.0f, -1.0f});
  Tensor y2 = affine_forward(x0, w2, b2);
  CHECK(y2.data[0] == 3.0f);
  CHECK(y2.data[1] == -1.0f);
}

TEST_CASE("affine_forward matches brute-force matmul") {
  RngStream rng(11);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5}, rng);
  Tensor y = affine_forward(x, w, b);
  for (int r = 0; r < 3; ++r) {
    for (int o = 0; o < 5; ++o) {
      double acc = b.at(o);
      for (int i = 0; i < 4; ++i) acc += static_cast<double>(x.at(r, i)) * w.at(i, o);
      CHECK(y.at(r, o) == Catch::Approx(acc).margin(1e-6));
    }
  }
}

TEST_CASE("affine_forward rejects shape mismatch") {
  Tensor x({3}, {1, 2, 3});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor b({2}, {0, 0});
  CHECK_THROWS_AS(affine_forward(x, w, b), ShapeError);
}

TEST_CASE("affine_backward zero upstream gives zero gradients") {
  RngStream rng(12);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  AffineCache cache;
  affine_forward(x, w, b, &cache);
  AffineGrads g = affine_backward(Tensor({2, 2}), cache);
  for (float v : g.x.data) CHECK(v == 0.0f);
  for (float v : g.w.data) CHECK(v == 0.0f);
  for (float v : g.b.data) CHECK(v == 0.0f);
}

TEST_CASE("affine_backward scalar chain rule") {
  Tensor x({1}, {3.0f});
  Tensor w({1, 1}, {2.0f});
  Tensor b({1}, {0.0f});
  AffineCache cache;
  affine_forward(x, w, b, &cache);
  Tensor gy({1}, {5.0f});
  AffineGrads g = affine_backward(gy, cache);
  CHECK(g.w.data[0] == Catch::Approx(5.0f * 3.0f));
  CHECK(g.x.data[0] == Catch::Approx(5.0f * 2.0f));
  CHECK(g.b.data[0] == Catch::Approx(5.0f));
}

TEST_CASE("affine_backward requires a live cache") {
  AffineCache cache;
  CHECK_THROWS_AS(affine_backward(Tensor({1, 1}), cache), UsageError);
  Tensor x({1}, {1.0f});
  Tensor w({1, 1}, {1.0f});
  Tensor b({1}, {0.0f});
  affine_forward(x, w, b, &cache);
  affine_backward(Tensor({1}), cache);
  CHECK_THROWS_AS(affine_backward(Tensor({1}), cache), UsageError);
}

TEST_CASE("affine gradients match finite differences on 10 random instances") {
  RngStream rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    // Scalar objective: weighted sum of outputs to exercise all gradients.
    Tensor weights = random_tensor({2, 4}, rng);
    auto loss_of = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
      Tensor y = affine_forward(xx, ww, bb);
      return dot64(y, weights);
    };
    AffineCache cache;
    affine_forward(x, w, b, &cache);
    AffineGrads g = affine_backward(weights, cache);
    Tensor fd_x = finite_diff_grad([&](const Tensor& t) { return loss_of(t, w, b); }, x, 1e-3);
    Tensor fd_w = finite_diff_grad([&](const Tensor& t) { return loss_of(x, t, b); }, w, 1e-3);
    Tensor fd_b = finite_diff_grad([&](const Tensor& t) { return loss_of(x, w, t); }, b, 1e-3);
    CHECK(rel_error(g.x, fd_x) < 1e-3);
    CHECK(rel_error(g.w, fd_w) < 1e-3);
    CHECK(rel_error(g.b, fd_b) < 1e-3);
  }
}

TEST_CASE("relu clamps negatives and masks gradients") {
  Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  ReluCache cache;
  Tensor y = relu(x, &cache);
  CHECK(y.data[0] == 0.0f);
  CHECK(y.data[1] == 0.0f);
  CHECK(y.data[2] == 2.0f);
  Tensor gy({3}, {1.0f, 1.0f, 1.0f});
  Tensor gx = relu_backward(gy, cache);
  CHECK(gx.data[0] == 0.0f);
  CHECK(gx.data[1] == 0.0f);
  CHECK(gx.data[2] == 1.0f);

  Tensor all_neg({4}, {-3.0f, -0.5f, -2.0f, -1e-3f});
  ReluCache c2;
  Tensor y2 = relu(all_neg, &c2);
  for (float v : y2.data) CHECK(v == 0.0f);
  Tensor g2 = relu_backward(Tensor::full({4}, 1.0f), c2);
  for (float v : g2.data) CHECK(v == 0.0f);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  RngStream rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({8}, rng);
    for (float& v : x.data)
      if (std::fabs(v) < 1e-2f) v += (v >= 0 ? 0.05f : -0.05f);  // keep clear of the kink
    Tensor weights = random_tensor({8}, rng);
    ReluCache cache;
    relu(x, &cache);
    Tensor analytic = relu_backward(weights, cache);
    Tensor fd = finite_diff_grad(
        [&](const Tensor& t) { return dot64(relu(t), weights); }, x, 1e-3);
    CHECK(rel_error(analytic, fd) < 1e-3);
  }
}

TEST_CASE("softmax cross-entropy on uniform logits equals ln C") {
  for (int c : {2, 3, 7}) {
    Tensor logits = Tensor::full({c}, 0.37f);
    SoftmaxResult r = softmax_cross_entropy(logits, 0);
    CHECK(r.loss == Catch::Approx(std::log(static_cast<double>(c))).epsilon(1e-6));
  }
}

TEST_CASE("softmax cross-entropy saturates to zero at large margin") {
  Tensor logits({3}, {50.0f, 0.0f, 0.0f});
  SoftmaxResult r = softmax_cross_entropy(logits, 0);
  CHECK(r.loss < 1e-12);
  CHECK(r.loss >= 0.0);
}

TEST_CASE("softmax cross-entropy matches explicit formula and finite differences") {
  RngStream rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = random_tensor({3}, rng, 2.0);
    int label = static_cast<int>(rng.uniform_int(3));
    SoftmaxResult r = softmax_cross_entropy(logits, label);

    double denom = 0.0;
    for (float v : logits.data) denom += std::exp(static_cast<double>(v));
    double direct = -std::log(std::exp(static_cast<double>(logits.data[label])) / denom);
    CHECK(r.loss == Catch::Approx(direct).epsilon(1e-9));

    Tensor fd = finite_diff_grad(
        [&](const Tensor& t) { return softmax_cross_entropy(t, label).loss; }, logits, 1e-3);
    CHECK(rel_error(r.grad_logits, fd) < 1e-3);
  }
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
  Tensor logits({3}, {0.0f, 0.0f, 0.0f});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, 3), ArgumentError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, -1), ArgumentError);
}

TEST_CASE("l2_normalize basics") {
  Tensor v({2}, {3.0f, 4.0f});
  Tensor n = l2_normalize(v);
  CHECK(n.data[0] == Catch::Approx(0.6f));
  CHECK(n.data[1] == Catch::Approx(0.8f));

  Tensor unit({3}, {0.0f, 1.0f, 0.0f});
  Tensor same = l2_normalize(unit);
  CHECK(same.data[1] == Catch::Approx(1.0f));

  RngStream rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r = random_tensor({17}, rng, 10.0);
    if (norm64(r) == 0.0) continue;
    CHECK(std::fabs(norm64(l2_normalize(r)) - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(l2_normalize(Tensor({4})), ArgumentError);
}

TEST_CASE("cosine_similarity basics and invariances") {
  Tensor a({3}, {1.0f, 2.0f, -1.0f});
  CHECK(cosine_similarity(a, a) == Catch::Approx(1.0));
  Tensor e1({2}, {1.0f, 0.0f});
  Tensor e2({2}, {0.0f, 1.0f});
  CHECK(cosine_similarity(e1, e2) == Catch::Approx(0.0).margin(1e-12));
  CHECK(cosine_similarity(a, scaled(a, -1.0f)) == Catch::Approx(-1.0));
  CHECK_THROWS_AS(cosine_similarity(a, Tensor({3})), ArgumentError);

  RngStream rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor u = random_tensor({9}, rng);
    Tensor v = random_tensor({9}, rng);
    if (norm64(u) == 0.0 || norm64(v) == 0.0) continue;
    double c = cosine_similarity(u, v);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(cosine_similarity(v, u) == Catch::Approx(c).margin(1e-9));
    float s = 0.25f + 3.0f * static_cast<float>(rng.uniform());
    float t = 0.25f + 3.0f * static_cast<float>(rng.uniform());
    CHECK(cosine_similarity(scaled(u, s), scaled(v, t)) == Catch::Approx(c).margin(1e-6));
  }
}

TEST_CASE("sgd_step momentum recurrence") {
  ParamSet ps;
  ps.add("p", Tensor({2}, {1.0f, -2.0f}));

  SECTION("zero gradients leave parameters unchanged") {
    GradMap gm = GradMap::zeros_like(ps);
    sgd_step(ps, gm, 0.1f, 0.9f);
    CHECK(ps.value("p").data[0] == 1.0f);
    CHECK(ps.value("p").data[1] == -2.0f);
  }

  SECTION("momentum zero is vanilla SGD") {
    GradMap gm;
    gm.grads.emplace("p", Tensor({2}, {0.5f, -1.0f}));
    sgd_step(ps, gm, 0.1f, 0.0f);
    CHECK(ps.value("p").data[0] == Catch::Approx(1.0f - 0.1f * 0.5f));
    CHECK(ps.value("p").data[1] == Catch::Approx(-2.0f + 0.1f * 1.0f));
  }

  SECTION("two steps with constant gradient accumulate lr*(g + 1.9g)") {
    GradMap gm;
    gm.grads.emplace("p", Tensor({2}, {1.0f, 2.0f}));
    sgd_step(ps, gm, 0.1f, 0.9f);
    sgd_step(ps, gm, 0.1f, 0.9f);
    CHECK(ps.value("p").data[0] == Catch::Approx(1.0f - 0.1f * (1.0f + 1.9f) * 1.0f));
    CHECK(ps.value("p").data[1] == Catch::Approx(-2.0f - 0.1f * (1.0f + 1.9f) * 2.0f));
  }

  SECTION("zero learning rate never changes parameters") {
    GradMap gm;
    gm.grads.emplace("p", Tensor({2}, {123.0f, -7.0f}));
    sgd_step(ps, gm, 0.0f, 0.9f);
    CHECK(ps.value("p").data[0] == 1.0f);
    CHECK(ps.value("p").data[1] == -2.0f);
  }

  SECTION("name mismatch is a usage error") {
    GradMap gm;
    gm.grads.emplace("q", Tensor({2}));
    CHECK_THROWS_AS(sgd_step(ps, gm, 0.1f, 0.9f), UsageError);
  }
}

TEST_CASE("finite_diff_grad on closed forms") {
  Tensor x({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  Tensor g_sum = finite_diff_grad([](const Tensor& t) { return sum64(t); }, x, 1e-3);
  for (float v : g_sum.data) CHECK(v == Catch::Approx(1.0f).margin(1e-4));

  Tensor g_sq = finite_diff_grad([](const Tensor& t) { return dot64(t, t); }, x, 1e-3);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(g_sq.data[i] == Catch::Approx(2.0f * x.data[i]).margin(1e-4));

  CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), ArgumentError);
}

TEST_CASE("rng stream determinism and substreams") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.uniform_float() == b.uniform_float());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(97) == b.uniform_int(97));
  }
  CHECK(a.draws() == b.draws());

  // Substreams are independent of the parent's position and of each other.
  RngStream parent(7);
  RngStream s1 = parent.substream(1);
  parent.next_u64();
  RngStream s1_again = parent.substream(1);
  CHECK(s1.next_u64() == s1_again.next_u64());
  RngStream s2 = parent.substream(2);
  CHECK(s1.next_u64() != s2.next_u64());
}

TEST_CASE("uniform_int stays in range") {
  RngStream rng(5);
  for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_int(7) < 7);
  CHECK_THROWS_AS(rng.uniform_int(0), ArgumentError);
}
