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

#include "simalign/trainer.hpp"

using namespace simalign;

namespace {

struct Pipeline {
  Benchmark bench;
  DetectorParams detector;
  ParamSet disc;
  MemoryBank bank;
  MemoryContext memory;
};

TrainConfig fast_config() {
  TrainConfig cfg;
  cfg.pretrain_epochs = 4;
  cfg.adapt_epochs = 2;
  cfg.eval_stride = 8;
  cfg.threads = 2;
  cfg.seed = 7;
  return cfg;
}

DataConfig small_data() {
  DataConfig dc;
  dc.scenes = 12;
  dc.classes = 3;
  dc.image_size = 48;
  return dc;
}

Pipeline& pipeline() {
  static Pipeline p = [] {
    Pipeline pl;
    pl.bench = generate_benchmark(small_data(), 99, 2);
    TrainConfig cfg = fast_config();
    DetectorConfig dcfg;
    PretrainResult pre = pretrain_source(pl.bench.source, dcfg, cfg);
    pl.detector = pre.detector;
    RngStream disc_rng(55);
    pl.disc = init_discriminator(dcfg.embed_dim, disc_rng);
    pl.bank = build_memory_bank(scene_ptrs(pl.bench.source), pl.detector, 0, 2);
    pl.memory.bank = &pl.bank;
    pl.memory.provenance = &pl.bench.provenance;
    pl.memory.refresh_pool = scene_ptrs(pl.bench.source);
    return pl;
  }();
  return p;
}

Batch make_batch(const Pipeline& pl) {
  Batch b;
  b.source = {&pl.bench.source.scenes[0], &pl.bench.source.scenes[1]};
  b.target = {&pl.bench.target.scenes[0], &pl.bench.target.scenes[1]};
  return b;
}

}  // namespace

TEST_CASE("pseudo_label thresholds") {
  Pipeline& pl = pipeline();
  const SceneSample& scene = pl.bench.target.scenes[2];

  CHECK(pseudo_label(scene, pl.detector, 1.0f).empty());

  auto all = pseudo_label(scene, pl.detector, 0.0f);
  auto post_nms = propose_and_detect(scene.image, pl.detector, 0.0f, 0.5f);
  CHECK(all.size() == post_nms.size());

  // Pseudo-label count is non-increasing in the confidence threshold.
  size_t prev = all.size();
  for (float delta : {0.2f, 0.4f, 0.6f, 0.8f, 0.9f}) {
    size_t count = pseudo_label(scene, pl.detector, delta).size();
    CHECK(count <= prev);
    prev = count;
  }
}

TEST_CASE("compute_objective degenerate weights reduce to the supervised loss") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  cfg.unsup_weight = 0.0f;
  cfg.fg_weight = 0.0f;
  cfg.bg_weight = 0.0f;
  PrototypeState protos;
  ObjectiveResult r = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc, cfg,
                                        &protos, RngStream(3));
  CHECK(r.l_total == r.l_sup);
  CHECK(r.l_unsup == 0.0);
  CHECK(r.l_fg == 0.0);
  CHECK(r.l_bg == 0.0);
  for (const auto& [name, g] : r.discriminator_grads.grads)
    for (float v : g.data) CHECK(v == 0.0f);
}

TEST_CASE("compute_objective components recombine and scale linearly") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  PrototypeState protos;
  ObjectiveResult base = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc, cfg,
                                           &protos, RngStream(3));
  CHECK(base.l_total == Catch::Approx(base.l_sup + cfg.unsup_weight * base.l_unsup +
                                      cfg.fg_weight * base.l_fg + cfg.bg_weight * base.l_bg)
                            .margin(1e-6));

  // Doubling the foreground weight doubles its contribution, same pairs.
  TrainConfig doubled = cfg;
  doubled.fg_weight = 2.0f * cfg.fg_weight;
  PrototypeState protos2;
  ObjectiveResult twice = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc,
                                            doubled, &protos2, RngStream(3));
  CHECK(twice.l_fg == Catch::Approx(base.l_fg).margin(1e-12));
  CHECK(twice.l_total - base.l_total ==
        Catch::Approx(static_cast<double>(cfg.fg_weight) * base.l_fg).margin(1e-9));
}

TEST_CASE("disabling fg and bg zeroes their components and gradients") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  cfg.fg_enabled = false;
  cfg.bg_enabled = false;
  PrototypeState protos;
  ObjectiveResult r = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc, cfg,
                                        &protos, RngStream(3));
  CHECK(r.l_fg == 0.0);
  CHECK(r.l_bg == 0.0);
  CHECK(r.fg_pairs == 0);
  CHECK(r.bg_pairs == 0);
  for (const auto& [name, g] : r.discriminator_grads.grads)
    for (float v : g.data) CHECK(v == 0.0f);
}

TEST_CASE("compute_objective is thread-count invariant") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  cfg.threads = 1;
  PrototypeState p1;
  ObjectiveResult serial = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc,
                                             cfg, &p1, RngStream(3));
  cfg.threads = 2;
  PrototypeState p2;
  ObjectiveResult parallel = compute_objective(make_batch(pl), &pl.memory, pl.detector, pl.disc,
                                               cfg, &p2, RngStream(3));
  CHECK(serial.l_total == parallel.l_total);
  for (const auto& [name, g] : serial.detector_grads.grads)
    CHECK(g.data == parallel.detector_grads.grads.at(name).data);
}

TEST_CASE("non-memory modes run without a bank") {
  Pipeline& pl = pipeline();
  for (auto mode : {AlignmentMode::kBatchC2C, AlignmentMode::kCategoryAgnostic,
                    AlignmentMode::kPrototype}) {
    TrainConfig cfg = fast_config();
    cfg.mode = mode;
    PrototypeState protos;
    ObjectiveResult r = compute_objective(make_batch(pl), nullptr, pl.detector, pl.disc, cfg,
                                          &protos, RngStream(3));
    CHECK(std::isfinite(r.l_total));
    // Prototype needs one update round before positives exist; run again.
    ObjectiveResult r2 = compute_objective(make_batch(pl), nullptr, pl.detector, pl.disc, cfg,
                                           &protos, RngStream(4));
    CHECK(std::isfinite(r2.l_total));
  }
}

TEST_CASE("pretraining is deterministic and reduces the loss") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  DetectorConfig dcfg;
  PretrainResult a = pretrain_source(pl.bench.source, dcfg, cfg);
  PretrainResult b = pretrain_source(pl.bench.source, dcfg, cfg);
  CHECK(a.detector.content_hash() == b.detector.content_hash());
  REQUIRE(a.trace.epochs.size() == b.trace.epochs.size());
  for (size_t i = 0; i < a.trace.epochs.size(); ++i) {
    CHECK(a.trace.epochs[i].l_sup == b.trace.epochs[i].l_sup);
    CHECK(a.trace.epochs[i].map == b.trace.epochs[i].map);
  }
  CHECK(a.trace.epochs.back().l_sup < a.trace.epochs.front().l_sup);
}

TEST_CASE("adapt produces identical traces for identical seeds") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  cfg.adapt_epochs = 2;

  MemoryBank bank_a = pl.bank;
  MemoryContext mem_a{&bank_a, &pl.bench.provenance, scene_ptrs(pl.bench.source)};
  AdaptResult a = adapt(pl.bench.source, pl.bench.target, pl.detector, &mem_a, cfg);

  MemoryBank bank_b = pl.bank;
  MemoryContext mem_b{&bank_b, &pl.bench.provenance, scene_ptrs(pl.bench.source)};
  AdaptResult b = adapt(pl.bench.source, pl.bench.target, pl.detector, &mem_b, cfg);

  CHECK(a.detector.content_hash() == b.detector.content_hash());
  REQUIRE(a.trace.epochs.size() == b.trace.epochs.size());
  for (size_t i = 0; i < a.trace.epochs.size(); ++i) {
    CHECK(a.trace.epochs[i].l_total == b.trace.epochs[i].l_total);
    CHECK(a.trace.epochs[i].l_fg == b.trace.epochs[i].l_fg);
    CHECK(a.trace.epochs[i].l_bg == b.trace.epochs[i].l_bg);
    CHECK(a.trace.epochs[i].map == b.trace.epochs[i].map);
    CHECK(a.trace.epochs[i].fg_pairs == b.trace.epochs[i].fg_pairs);
  }
  CHECK(a.final_eval.map == b.final_eval.map);

  // Disabling both alignment losses yields identically-zero components.
  TrainConfig off = cfg;
  off.fg_enabled = false;
  off.bg_enabled = false;
  MemoryBank bank_c = pl.bank;
  MemoryContext mem_c{&bank_c, &pl.bench.provenance, scene_ptrs(pl.bench.source)};
  AdaptResult c = adapt(pl.bench.source, pl.bench.target, pl.detector, &mem_c, off);
  for (const auto& rec : c.trace.epochs) {
    CHECK(rec.l_fg == 0.0);
    CHECK(rec.l_bg == 0.0);
  }
}

TEST_CASE("adapt rejects memory modes without a bank") {
  Pipeline& pl = pipeline();
  TrainConfig cfg = fast_config();
  CHECK_THROWS_AS(adapt(pl.bench.source, pl.bench.target, pl.detector, nullptr, cfg), UsageError);
}

TEST_CASE("config json round-trip and schema validation") {
  ExperimentConfig cfg;
  cfg.train.fg_weight = 0.07f;
  cfg.train.mode = AlignmentMode::kProvenanceColor;
  cfg.train.subsample = SubsampleMethod::kCoreset;
  cfg.data.scenes = 123;
  json j = experiment_config_to_json(cfg);
  ExperimentConfig back = experiment_config_from_json(j);
  CHECK(back.train.fg_weight == cfg.train.fg_weight);
  CHECK(back.train.mode == cfg.train.mode);
  CHECK(back.data.scenes == 123);
  CHECK(config_hash(back) == config_hash(cfg));

  json bad = j;
  bad["train"]["typo_key"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ValidationError);
  json bad2 = j;
  bad2["train"]["confidence_threshold"] = 1.5;
  CHECK_THROWS_AS(experiment_config_from_json(bad2), ValidationError);
  json bad3 = j;
  bad3.erase("schema_version");
  CHECK_THROWS_AS(experiment_config_from_json(bad3), ValidationError);
}
