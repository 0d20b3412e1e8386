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

#include <unistd.h>

#include <chrono>
#include <cstring>
#include <string>

#include "simalign/config.hpp"
#include "simalign/detector.hpp"
#include "simalign/eval.hpp"
#include "simalign/memory_bank.hpp"
#include "simalign/trainer.hpp"

namespace simalign {

inline constexpr int kArtifactSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Deterministic number formatting for CSV artifacts (%.9g, C locale).
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Detector parameters: params.json (names, shapes, offsets) + params.f32.
// ---------------------------------------------------------------------------

inline json detector_config_to_json(const DetectorConfig& c) {
  json anchors = json::array();
  for (const auto& a : c.anchors) anchors.push_back(json{{"stride", a.stride}, {"window", a.window}});
  return json{{"num_classes", c.num_classes}, {"patch", c.patch},
              {"stride", c.stride},           {"feat_channels", c.feat_channels},
              {"ext_hidden", c.ext_hidden},   {"pool_size", c.pool_size},
              {"head_hidden", c.head_hidden}, {"embed_dim", c.embed_dim},
              {"anchors", anchors}};
}

inline DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.patch = j.at("patch").get<int>();
  c.stride = j.at("stride").get<int>();
  c.feat_channels = j.at("feat_channels").get<int>();
  c.ext_hidden = j.at("ext_hidden").get<int>();
  c.pool_size = j.at("pool_size").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.anchors.clear();
  for (const auto& a : j.at("anchors"))
    c.anchors.push_back(AnchorLevel{a.at("stride").get<int>(), a.at("window").get<int>()});
  return c;
}

inline void save_detector(const DetectorParams& d, const fs::path& dir) {
  fs::create_directories(dir);
  std::string blob;
  json tensors = json::array();
  for (const auto& [name, p] : d.params.params) {
    tensors.push_back(json{{"name", name}, {"shape", p.value.shape}, {"offset", blob.size() / sizeof(float)}});
    size_t old = blob.size();
    blob.resize(old + p.value.data.size() * sizeof(float));
    std::memcpy(blob.data() + old, p.value.data.data(), p.value.data.size() * sizeof(float));
  }
  json header{{"schema_version", kArtifactSchemaVersion},
              {"detector", detector_config_to_json(d.cfg)},
              {"tensors", tensors},
              {"blob_hash", hex64(fnv1a(blob.data(), blob.size()))},
              {"params_hash", hex64(d.content_hash())}};
  write_file_bytes(dir / "params.f32", blob.data(), blob.size());
  write_file_text(dir / "params.json", header.dump(2) + "\n");
}

inline DetectorParams load_detector(const fs::path& dir) {
  if (!fs::exists(dir / "params.json"))
    throw IoError("model not found: missing " + (dir / "params.json").string());
  json header = read_json_file(dir / "params.json");
  if (header.at("schema_version").get<int>() != kArtifactSchemaVersion)
    throw ValidationError("model schema version mismatch in " + dir.string());
  auto blob = read_file_bytes(dir / "params.f32");
  if (hex64(fnv1a(blob.data(), blob.size())) != header.at("blob_hash").get<std::string>())
    throw IoError("model integrity failure: " + (dir / "params.f32").string());

  DetectorParams d;
  d.cfg = detector_config_from_json(header.at("detector"));
  for (const auto& t : header.at("tensors")) {
    std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    Tensor value(shape);
    size_t offset = t.at("offset").get<size_t>() * sizeof(float);
    if (offset + value.data.size() * sizeof(float) > blob.size())
      throw IoError("model blob too short: " + dir.string());
    std::memcpy(value.data.data(), blob.data() + offset, value.data.size() * sizeof(float));
    d.params.add(t.at("name").get<std::string>(), std::move(value));
  }
  if (hex64(d.content_hash()) != header.at("params_hash").get<std::string>())
    throw IoError("model integrity failure: parameter hash mismatch in " + dir.string());
  return d;
}

// ---------------------------------------------------------------------------
// Memory snapshot: memory.json (dim, counts, class index, extractor hash)
// plus memory.f32 with all vectors concatenated in header order (foreground
// partitions by class, then background).
// ---------------------------------------------------------------------------

inline void save_memory(const MemoryBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  std::string blob;
  auto append = [&](const Tensor& t) {
    size_t old = blob.size();
    blob.resize(old + t.data.size() * sizeof(float));
    std::memcpy(blob.data() + old, t.data.data(), t.data.size() * sizeof(float));
  };
  int dim = -1;
  json fg_index = json::array();
  for (size_t c = 0; c < bank.fg.size(); ++c) {
    for (const auto& e : bank.fg[c]) {
      if (dim < 0) dim = static_cast<int>(e.g.numel());
      fg_index.push_back(json{{"class", e.class_id},
                              {"scene_uid", hex64(e.scene_uid)},
                              {"object_uid", hex64(e.object_uid)}});
      append(e.g);
    }
  }
  json bg_index = json::array();
  for (const auto& e : bank.bg) {
    if (dim < 0) dim = static_cast<int>(e.bg.numel());
    bg_index.push_back(json{{"scene_uid", hex64(e.scene_uid)}});
    append(e.bg);
  }
  json header{{"schema_version", kArtifactSchemaVersion},
              {"dim", dim},
              {"classes", bank.fg.size()},
              {"built_at", bank.built_at},
              {"refresh_interval", bank.refresh_interval},
              {"skipped", bank.skipped},
              {"extractor_hash", hex64(bank.extractor_hash)},
              {"fg", fg_index},
              {"bg", bg_index},
              {"blob_hash", hex64(fnv1a(blob.data(), blob.size()))}};
  write_file_bytes(dir / "memory.f32", blob.data(), blob.size());
  write_file_text(dir / "memory.json", header.dump(2) + "\n");
}

inline MemoryBank load_memory(const fs::path& dir) {
  if (!fs::exists(dir / "memory.json"))
    throw IoError("memory not found: missing " + (dir / "memory.json").string());
  json header = read_json_file(dir / "memory.json");
  if (header.at("schema_version").get<int>() != kArtifactSchemaVersion)
    throw ValidationError("memory schema version mismatch in " + dir.string());
  auto blob = read_file_bytes(dir / "memory.f32");
  if (hex64(fnv1a(blob.data(), blob.size())) != header.at("blob_hash").get<std::string>())
    throw IoError("memory integrity failure: " + (dir / "memory.f32").string());

  MemoryBank bank;
  bank.fg.resize(header.at("classes").get<size_t>());
  bank.built_at = header.at("built_at").get<int64_t>();
  bank.refresh_interval = header.at("refresh_interval").get<int>();
  bank.skipped = header.at("skipped").get<int>();
  bank.extractor_hash = detail::parse_hex64(header.at("extractor_hash").get<std::string>());
  int dim = header.at("dim").get<int>();
  size_t offset = 0;
  auto take = [&]() {
    Tensor t({dim});
    if (offset + t.data.size() * sizeof(float) > blob.size())
      throw IoError("memory blob too short: " + dir.string());
    std::memcpy(t.data.data(), blob.data() + offset, t.data.size() * sizeof(float));
    offset += t.data.size() * sizeof(float);
    return t;
  };
  for (const auto& e : header.at("fg")) {
    ForegroundEntry entry;
    entry.class_id = e.at("class").get<int>();
    entry.scene_uid = detail::parse_hex64(e.at("scene_uid").get<std::string>());
    entry.object_uid = detail::parse_hex64(e.at("object_uid").get<std::string>());
    entry.g = take();
    if (entry.class_id < 0 || entry.class_id >= static_cast<int>(bank.fg.size()))
      throw IoError("memory index has out-of-range class in " + dir.string());
    bank.fg[static_cast<size_t>(entry.class_id)].push_back(std::move(entry));
  }
  for (const auto& e : header.at("bg")) {
    BackgroundEntry entry;
    entry.scene_uid = detail::parse_hex64(e.at("scene_uid").get<std::string>());
    entry.bg = take();
    bank.bg.push_back(std::move(entry));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Metrics and evaluation CSV, fixed column order.
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const MetricsTrace& trace) {
  std::string out = "epoch,l_sup,l_unsup,l_fg,l_bg,l_total,map,accuracy,fg_pairs,bg_pairs,skipped\n";
  for (const auto& r : trace.epochs) {
    out += std::to_string(r.epoch) + "," + format_double(r.l_sup) + "," + format_double(r.l_unsup) +
           "," + format_double(r.l_fg) + "," + format_double(r.l_bg) + "," +
           format_double(r.l_total) + "," + format_double(r.map) + "," +
           format_double(r.accuracy) + "," + std::to_string(r.fg_pairs) + "," +
           std::to_string(r.bg_pairs) + "," + std::to_string(r.skipped) + "\n";
  }
  return out;
}

inline std::string eval_csv(const EvalReport& report) {
  std::string out = "key,value\n";
  out += "map," + format_double(report.map) + "\n";
  out += "accuracy," + format_double(report.accuracy) + "\n";
  out += "tp," + std::to_string(report.tp) + "\n";
  out += "fp," + std::to_string(report.fp) + "\n";
  out += "fn," + std::to_string(report.fn) + "\n";
  out += "gt," + std::to_string(report.gt_count) + "\n";
  for (size_t c = 0; c < report.ap.size(); ++c)
    out += "ap_" + std::to_string(c) + "," +
           (report.ap_defined[c] ? format_double(report.ap[c]) : std::string("na")) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Experiment record: the one artifact that may carry wall-clock metadata.
// ---------------------------------------------------------------------------

inline uint64_t binary_content_hash() {
  try {
    auto bytes = read_file_bytes("/proc/self/exe");
    return fnv1a(bytes.data(), bytes.size());
  } catch (const IoError&) {
    return 0;
  }
}

struct ExperimentRecord {
  std::string command;
  ExperimentConfig config;
  uint64_t seed = 0;
  double duration_seconds = 0.0;
  std::vector<std::string> outputs;
  json extra = json::object();
};

inline void write_experiment_record(const ExperimentRecord& rec, const fs::path& dir) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  json j{{"schema_version", kArtifactSchemaVersion},
         {"command", rec.command},
         {"config", experiment_config_to_json(rec.config)},
         {"config_hash", hex64(config_hash(rec.config))},
         {"seed", rec.seed},
         {"binary_hash", hex64(binary_content_hash())},
         {"duration_seconds", rec.duration_seconds},
         {"unix_time", std::chrono::duration_cast<std::chrono::seconds>(now).count()},
         {"outputs", rec.outputs},
         {"extra", rec.extra}};
  fs::create_directories(dir);
  write_file_text(dir / "experiment.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Advisory lock: concurrent runs on one output directory are unsupported.
// ---------------------------------------------------------------------------

class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".simalign.lock") {
    fs::create_directories(dir);
    if (fs::exists(path_))
      throw ValidationError("output directory is locked by another run (remove " + path_.string() +
                            " if that run is gone)");
    write_file_text(path_, std::to_string(static_cast<long>(::getpid())) + "\n");
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

}  // namespace simalign
