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

#include "simalign/eval.hpp"
#include "test_util.hpp"

using namespace simalign;

namespace {

AnnotatedBox gt(int x0, int y0, int x1, int y1, int cls, uint64_t uid) {
  return AnnotatedBox{x0, y0, x1, y1, cls, uid};
}

Detection det(float x0, float y0, float x1, float y1, int cls, float score) {
  return Detection{BoxF{x0, y0, x1, y1}, cls, score, -1};
}

/// Brute-force mAP recomputation: quadratic matching plus direct PR summing.
double brute_force_map(const std::vector<std::vector<Detection>>& dets,
                       const std::vector<const SceneSample*>& scenes, int classes) {
  double total = 0.0;
  int defined = 0;
  for (int c = 0; c < classes; ++c) {
    struct Row {
      float score;
      char tp;
    };
    std::vector<Row> rows;
    long n_gt = 0;
    for (size_t img = 0; img < scenes.size(); ++img) {
      std::vector<char> claimed(scenes[img]->boxes.size(), 0);
      for (const auto& b : scenes[img]->boxes)
        if (b.class_id == c) ++n_gt;
      // Detections are already score-sorted per image.
      for (const auto& d : dets[img]) {
        if (d.class_id != c) continue;
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < scenes[img]->boxes.size(); ++g) {
          const auto& box = scenes[img]->boxes[g];
          if (claimed[g] || box.class_id != c) continue;
          double overlap = iou(d.box, box.as_boxf());
          if (overlap >= 0.5 && overlap > best) {
            best = overlap;
            best_g = static_cast<int>(g);
          }
        }
        if (best_g >= 0) claimed[static_cast<size_t>(best_g)] = 1;
        rows.push_back({d.score, static_cast<char>(best_g >= 0 ? 1 : 0)});
      }
    }
    if (n_gt == 0 && rows.empty()) continue;
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.score > b.score; });
    double ap = 0.0;
    if (n_gt > 0) {
      long tp = 0;
      double prev_recall = 0.0;
      for (size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].tp) continue;
        ++tp;
        double recall = static_cast<double>(tp) / n_gt;
        // All-point interpolation: precision envelope to the right.
        double best_prec = 0.0;
        long tp2 = 0;
        for (size_t j = 0; j < rows.size(); ++j) {
          if (rows[j].tp) ++tp2;
          if (j >= i) best_prec = std::max(best_prec, static_cast<double>(tp2) / (j + 1));
        }
        ap += (recall - prev_recall) * best_prec;
        prev_recall = recall;
      }
    }
    total += ap;
    ++defined;
  }
  return total / defined;
}

}  // namespace

TEST_CASE("iou on hand geometry") {
  BoxF a{0, 0, 1, 1};
  CHECK(iou(a, a) == Catch::Approx(1.0));
  CHECK(iou(a, BoxF{5, 5, 6, 6}) == 0.0);
  CHECK(iou(a, BoxF{0.5f, 0, 1.5f, 1}) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("match_detections greedy protocol") {
  std::vector<AnnotatedBox> gts = {gt(0, 0, 10, 10, 0, 1), gt(20, 20, 30, 30, 1, 2)};

  SECTION("perfect predictions are all true positives") {
    std::vector<Detection> dets = {det(0, 0, 10, 10, 0, 0.9f), det(20, 20, 30, 30, 1, 0.8f)};
    auto flags = match_detections(dets, gts, 0.5f);
    CHECK(flags == std::vector<char>{1, 1});
  }

  SECTION("duplicate detections of one gt give one TP and one FP") {
    std::vector<Detection> dets = {det(0, 0, 10, 10, 0, 0.9f), det(0, 0, 10, 10, 0, 0.7f)};
    auto flags = match_detections(dets, gts, 0.5f);
    CHECK(flags == std::vector<char>{1, 0});
  }

  SECTION("class mismatch never matches") {
    std::vector<Detection> dets = {det(0, 0, 10, 10, 1, 0.9f)};
    CHECK(match_detections(dets, gts, 0.5f) == std::vector<char>{0});
  }

  SECTION("random boxes match an exhaustive assignment check") {
    RngStream rng(81);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<AnnotatedBox> gts2 = {gt(0, 0, 12, 12, 0, 1), gt(15, 15, 28, 28, 0, 2)};
      std::vector<Detection> dets;
      for (int i = 0; i < 4; ++i) {
        float x0 = static_cast<float>(rng.uniform_in(0, 20));
        float y0 = static_cast<float>(rng.uniform_in(0, 20));
        dets.push_back(det(x0, y0, x0 + static_cast<float>(rng.uniform_in(6, 14)),
                           y0 + static_cast<float>(rng.uniform_in(6, 14)), 0,
                           static_cast<float>(1.0 - 0.1 * i)));
      }
      auto flags = match_detections(dets, gts2, 0.5f);
      // Oracle: walk detections in order, each claiming its best unmatched gt.
      std::vector<char> claimed(gts2.size(), 0), expected(dets.size(), 0);
      for (size_t i = 0; i < dets.size(); ++i) {
        double best = 0.5 - 1e-12;
        int pick = -1;
        for (size_t g = 0; g < gts2.size(); ++g) {
          if (claimed[g]) continue;
          double o = iou(dets[i].box, gts2[g].as_boxf());
          if (o > best) {
            best = o;
            pick = static_cast<int>(g);
          }
        }
        if (pick >= 0) {
          claimed[static_cast<size_t>(pick)] = 1;
          expected[i] = 1;
        }
      }
      CHECK(flags == expected);
    }
  }
}

TEST_CASE("average_precision hand cases") {
  CHECK(*average_precision({1}, 1) == Catch::Approx(1.0));           // single TP, one gt
  CHECK(*average_precision({1, 0}, 1) == Catch::Approx(1.0));        // [TP,FP]
  CHECK(*average_precision({0, 1}, 1) == Catch::Approx(0.5));        // [FP,TP]
  CHECK(*average_precision({1, 1}, 2) == Catch::Approx(1.0));
  CHECK(*average_precision({1, 0, 1}, 2) == Catch::Approx(1.0 / 2.0 + (2.0 / 3.0) / 2.0));
  CHECK_FALSE(average_precision({}, 0).has_value());                 // undefined
  CHECK(*average_precision({0, 0}, 0) == 0.0);                       // dets, no gt
  CHECK(*average_precision({}, 3) == 0.0);                           // gt, no dets

  // Rank-only dependence and the FP-appending property.
  std::vector<char> flags = {1, 0, 1, 0};
  double base = *average_precision(flags, 3);
  std::vector<char> more = flags;
  more.push_back(0);
  CHECK(*average_precision(more, 3) <= base);
}

TEST_CASE("mean_ap and detection accuracy") {
  CHECK(mean_ap({0.7}, {true}) == Catch::Approx(0.7));
  CHECK(mean_ap({1.0, 0.0}, {true, true}) == Catch::Approx(0.5));
  CHECK(mean_ap({1.0, 0.25}, {false, true}) == Catch::Approx(0.25));
  CHECK_THROWS_AS(mean_ap({0.5}, {false}), ArgumentError);
}

TEST_CASE("evaluate_detections on perfect and random cases") {
  BackgroundParams bg{64, 64, 0.5f};
  RngStream rng(82);
  ObjectSpec o1;
  o1.uid = 1;
  o1.class_id = 0;
  o1.shape = ShapeKind::kRectCar;
  o1.x = 4;
  o1.y = 4;
  o1.w = 14;
  o1.h = 14;
  ObjectSpec o2 = o1;
  o2.uid = 2;
  o2.class_id = 1;
  o2.shape = ShapeKind::kWedge;
  o2.x = 30;
  o2.y = 30;
  o2.w = 16;
  o2.h = 18;
  auto scene = render_scene({o1, o2}, bg, rng);
  std::vector<const SceneSample*> scenes = {&scene};

  SECTION("perfect predictions give accuracy and mAP 1.0") {
    std::vector<std::vector<Detection>> dets = {
        {det(4, 4, 18, 18, 0, 0.95f), det(30, 30, 46, 48, 1, 0.9f)}};
    auto report = evaluate_detections(dets, scenes, 2);
    CHECK(report.map == Catch::Approx(1.0));
    CHECK(report.accuracy == Catch::Approx(1.0));
    CHECK(report.tp == 2);
    CHECK(report.fp == 0);
    CHECK(report.fn == 0);
    CHECK(report.tp + report.fn == report.gt_count);
  }

  SECTION("score rescaling leaves AP unchanged") {
    std::vector<std::vector<Detection>> dets = {
        {det(4, 4, 18, 18, 0, 0.9f), det(5, 5, 19, 19, 0, 0.6f), det(40, 40, 50, 50, 1, 0.7f)}};
    auto a = evaluate_detections(dets, scenes, 2);
    for (auto& image : dets)
      for (auto& d : image) d.score *= 0.5f;
    auto b = evaluate_detections(dets, scenes, 2);
    CHECK(a.ap[0] == Catch::Approx(b.ap[0]));
    CHECK(a.ap[1] == Catch::Approx(b.ap[1]));
  }

  SECTION("random small cases match brute-force recomputation exactly") {
    RngStream r2(83);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::vector<Detection>> dets(1);
      int n = 1 + static_cast<int>(r2.uniform_int(9));
      for (int i = 0; i < n; ++i) {
        float x0 = static_cast<float>(r2.uniform_in(0, 40));
        float y0 = static_cast<float>(r2.uniform_in(0, 40));
        dets[0].push_back(det(x0, y0, x0 + static_cast<float>(r2.uniform_in(8, 20)),
                              y0 + static_cast<float>(r2.uniform_in(8, 20)),
                              static_cast<int>(r2.uniform_int(2)),
                              static_cast<float>(r2.uniform())));
      }
      std::stable_sort(dets[0].begin(), dets[0].end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });
      auto report = evaluate_detections(dets, scenes, 2);
      CHECK(report.map == Catch::Approx(brute_force_map(dets, scenes, 2)).margin(1e-9));
    }
  }
}
