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
#include <map>

#include "simalign/retrieval.hpp"
#include "test_util.hpp"

using namespace simalign;
using testutil::random_tensor;

namespace {

MemoryBank make_bank(int classes) {
  MemoryBank bank;
  bank.fg.resize(static_cast<size_t>(classes));
  return bank;
}

void add_fg(MemoryBank& bank, int class_id, uint64_t uid, Tensor g) {
  bank.fg[static_cast<size_t>(class_id)].push_back(
      ForegroundEntry{std::move(g), class_id, uid, uid});
}

}  // namespace

TEST_CASE("retrieve_fg_positive exact matches and orthogonal distractors") {
  MemoryBank bank = make_bank(2);
  Tensor g_t({3}, {1.0f, 0.5f, -0.25f});
  add_fg(bank, 0, 10, g_t);
  add_fg(bank, 0, 11, Tensor({3}, {-0.5f, 1.0f, 0.0f}));

  auto hit = retrieve_fg_positive(g_t, 0, bank);
  CHECK(hit.entry->object_uid == 10);
  CHECK(hit.similarity == Catch::Approx(1.0));

  MemoryBank pair = make_bank(1);
  add_fg(pair, 0, 1, Tensor({2}, {2.0f, 0.0f}));   // aligned with query
  add_fg(pair, 0, 2, Tensor({2}, {0.0f, 3.0f}));   // orthogonal
  auto aligned = retrieve_fg_positive(Tensor({2}, {1.0f, 0.0f}), 0, pair);
  CHECK(aligned.entry->object_uid == 1);

  CHECK_THROWS_AS(retrieve_fg_positive(g_t, 1, bank), ClassUnavailableError);
  CHECK_THROWS_AS(retrieve_fg_positive(g_t, 7, bank), ClassUnavailableError);
}

TEST_CASE("retrieval equals the exhaustive-scan reference on random banks") {
  RngStream rng(61);
  for (int trial = 0; trial < 30; ++trial) {
    MemoryBank bank = make_bank(3);
    int n = 50;
    for (int i = 0; i < n; ++i)
      add_fg(bank, static_cast<int>(rng.uniform_int(3)), static_cast<uint64_t>(i) + 1,
             random_tensor({8}, rng));
    Tensor q = random_tensor({8}, rng);
    for (int c = 0; c < 3; ++c) {
      if (bank.fg[static_cast<size_t>(c)].empty()) continue;
      auto got = retrieve_fg_positive(q, c, bank);
      const ForegroundEntry* best = nullptr;
      double best_sim = -2.0;
      for (const auto& e : bank.fg[static_cast<size_t>(c)]) {
        double s = cosine_similarity(q, e.g);
        if (s > best_sim) {
          best_sim = s;
          best = &e;
        }
      }
      CHECK(got.entry == best);
      CHECK(got.similarity == Catch::Approx(best_sim));

      // Scale invariance of the argmax in the query.
      for (float s : {0.25f, 3.0f, 40.0f})
        CHECK(retrieve_fg_positive(scaled(q, s), c, bank).entry == got.entry);
    }
  }
}

TEST_CASE("retrieve_bg_positive mirrors the foreground scan") {
  RngStream rng(62);
  MemoryBank bank = make_bank(1);
  for (int i = 0; i < 40; ++i)
    bank.bg.push_back(BackgroundEntry{random_tensor({6}, rng), static_cast<uint64_t>(i) + 1});
  Tensor q = random_tensor({6}, rng);
  auto got = retrieve_bg_positive(q, bank);
  const BackgroundEntry* best = nullptr;
  double best_sim = -2.0;
  for (const auto& e : bank.bg) {
    double s = cosine_similarity(q, e.bg);
    if (s > best_sim) {
      best_sim = s;
      best = &e;
    }
  }
  CHECK(got.entry == best);

  MemoryBank empty = make_bank(1);
  CHECK_THROWS_AS(retrieve_bg_positive(q, empty), ClassUnavailableError);

  // Zero vectors are skipped rather than breaking the cosine.
  MemoryBank degenerate = make_bank(1);
  degenerate.bg.push_back(BackgroundEntry{Tensor({6}), 1});
  degenerate.bg.push_back(BackgroundEntry{q, 2});
  CHECK(retrieve_bg_positive(q, degenerate).entry->scene_uid == 2);
}

TEST_CASE("retrieve_fg_positive breaks ties by lowest uid") {
  MemoryBank bank = make_bank(1);
  Tensor v({2}, {1.0f, 1.0f});
  add_fg(bank, 0, 9, v);
  add_fg(bank, 0, 3, v);
  add_fg(bank, 0, 5, scaled(v, 2.0f));  // same cosine
  CHECK(retrieve_fg_positive(v, 0, bank).entry->object_uid == 3);
}

TEST_CASE("sample_negative draws uniformly from other classes") {
  RngStream rng(63);
  MemoryBank bank = make_bank(3);
  add_fg(bank, 0, 1, random_tensor({4}, rng));
  add_fg(bank, 1, 2, random_tensor({4}, rng));
  add_fg(bank, 1, 3, random_tensor({4}, rng));
  add_fg(bank, 2, 4, random_tensor({4}, rng));

  std::map<uint64_t, int> counts;
  for (int i = 0; i < 10000; ++i) {
    const ForegroundEntry* e = sample_negative(0, bank, rng);
    CHECK(e->class_id != 0);
    counts[e->object_uid]++;
  }
  // Three other-class entries; uniform within 5% of the expected frequency.
  for (uint64_t uid : {2ull, 3ull, 4ull}) {
    double freq = counts[uid] / 10000.0;
    CHECK(std::fabs(freq - 1.0 / 3.0) < 0.05 / 3.0 + 0.0167);
    CHECK(std::fabs(freq - 1.0 / 3.0) / (1.0 / 3.0) < 0.05);
  }

  MemoryBank single = make_bank(1);
  add_fg(single, 0, 1, random_tensor({4}, rng));
  CHECK_THROWS_AS(sample_negative(0, single, rng), NegativeUnavailableError);
}

TEST_CASE("retrieve_topk ordering and consistency") {
  RngStream rng(64);
  MemoryBank bank = make_bank(2);
  for (int i = 0; i < 20; ++i)
    add_fg(bank, 0, static_cast<uint64_t>(i) + 1, random_tensor({6}, rng));
  Tensor q = random_tensor({6}, rng);

  auto top1 = retrieve_topk(q, 0, bank, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].entry == retrieve_fg_positive(q, 0, bank).entry);

  auto all = retrieve_topk(q, 0, bank, 100);
  CHECK(all.size() == 20);
  for (size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].similarity >= all[i].similarity);

  auto top5 = retrieve_topk(q, 0, bank, 5);
  REQUIRE(top5.size() == 5);
  // Brute-force oracle: sort the full scan and truncate.
  std::vector<std::pair<double, uint64_t>> scan;
  for (const auto& e : bank.fg[0]) scan.push_back({cosine_similarity(q, e.g), e.object_uid});
  std::sort(scan.begin(), scan.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (size_t i = 0; i < 5; ++i) {
    CHECK(top5[i].entry->object_uid == scan[i].second);
    CHECK(top5[i].similarity == Catch::Approx(scan[i].first));
  }

  CHECK_THROWS_AS(retrieve_topk(q, 0, bank, 0), ArgumentError);
  CHECK_THROWS_AS(retrieve_topk(q, 1, bank, 3), ClassUnavailableError);
}

TEST_CASE("retrieve_by_strategy resolves provenance siblings") {
  DataConfig cfg;
  cfg.scenes = 8;
  cfg.classes = 3;
  auto bench = generate_benchmark(cfg, 321);

  DetectorConfig dcfg;
  dcfg.num_classes = 3;
  dcfg.patch = 4;
  dcfg.stride = 2;
  dcfg.feat_channels = 4;
  dcfg.ext_hidden = 6;
  dcfg.pool_size = 3;
  dcfg.head_hidden = 12;
  dcfg.embed_dim = 16;
  RngStream rng(65);
  DetectorParams d = init_detector(dcfg, rng);

  auto pool = scene_ptrs(bench.source);
  for (const auto* p : scene_ptrs(bench.variants)) pool.push_back(p);
  MemoryBank bank = build_memory_bank(pool, d);

  int checked = 0;
  for (const auto& t : bench.target.scenes) {
    for (const auto& box : t.boxes) {
      const SiblingSet& sib = bench.provenance.resolve_object(box.object_uid);
      const ForegroundEntry* src =
          retrieve_by_strategy(box.object_uid, bench.provenance, bank, StrategyMode::kDomainOnly);
      CHECK(src->object_uid == sib.source);

      const ForegroundEntry* rot1 =
          retrieve_by_strategy(box.object_uid, bench.provenance, bank, StrategyMode::kRotation);
      const ForegroundEntry* rot2 =
          retrieve_by_strategy(box.object_uid, bench.provenance, bank, StrategyMode::kRotation);
      CHECK(rot1 == rot2);

      const ForegroundEntry* col =
          retrieve_by_strategy(box.object_uid, bench.provenance, bank, StrategyMode::kColor);
      const SceneSample* col_scene = bench.variants.find(col->scene_uid);
      REQUIRE(col_scene != nullptr);
      REQUIRE(col_scene->provenance.has_value());
      // Audit on an unreplaced source: the color sibling carries the color
      // tag and no rotation tag.
      const SceneSample* counterpart =
          bench.source.find(bench.provenance.resolve_scene(t.scene_uid).source);
      REQUIRE(counterpart != nullptr);
      if (!counterpart->provenance.has_value()) {
        CHECK((col_scene->provenance->tags & provenance_tag::kColor) != 0);
        CHECK((col_scene->provenance->tags & provenance_tag::kRotation) == 0);
      }
      ++checked;
    }
  }
  CHECK(checked > 0);

  CHECK_THROWS_AS(retrieve_by_strategy(0xdeadbeef, bench.provenance, bank, StrategyMode::kColor),
                  ProvenanceError);
}
