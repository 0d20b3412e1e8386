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

#include <bit>
#include <cinttypes>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simalign/synth.hpp"

namespace simalign {

static_assert(std::endian::native == std::endian::little,
              "dataset blobs are little-endian; big-endian hosts are unsupported");

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kDatasetSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Low-level file helpers.
// ---------------------------------------------------------------------------

inline std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const fs::path& path, const void* data, size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write: " + path.string());
}

inline void write_file_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

inline json read_json_file(const fs::path& path) {
  auto bytes = read_file_bytes(path);
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw IoError("malformed JSON: " + path.string());
  return j;
}

// ---------------------------------------------------------------------------
// Scene blob format: scenes/<uid>.img holds three little-endian int32 values
// (H, W, channels) followed by H*W*channels little-endian float32 values;
// scenes/<uid>.ann holds one "x0 y0 x1 y1 class uid" line per box.
// ---------------------------------------------------------------------------

inline std::string encode_image_blob(const Tensor& image) {
  if (image.ndim() != 3) throw ShapeError("image blob: expected [H,W,C]");
  int32_t header[3] = {image.dim(0), image.dim(1), image.dim(2)};
  std::string out(sizeof(header) + image.data.size() * sizeof(float), '\0');
  std::memcpy(out.data(), header, sizeof(header));
  std::memcpy(out.data() + sizeof(header), image.data.data(), image.data.size() * sizeof(float));
  return out;
}

inline Tensor decode_image_blob(const std::vector<char>& bytes, const std::string& origin) {
  if (bytes.size() < 12) throw IoError("image blob too short: " + origin);
  int32_t header[3];
  std::memcpy(header, bytes.data(), sizeof(header));
  if (header[0] <= 0 || header[1] <= 0 || header[2] <= 0)
    throw IoError("image blob has invalid header: " + origin);
  size_t expected = 12 + static_cast<size_t>(header[0]) * header[1] * header[2] * sizeof(float);
  if (bytes.size() != expected) throw IoError("image blob size mismatch: " + origin);
  Tensor t({header[0], header[1], header[2]});
  std::memcpy(t.data.data(), bytes.data() + 12, t.data.size() * sizeof(float));
  return t;
}

inline std::string encode_annotations(const std::vector<AnnotatedBox>& boxes) {
  std::string out;
  char line[128];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof(line), "%d %d %d %d %d %" PRIu64 "\n", b.x0, b.y0, b.x1, b.y1,
                  b.class_id, b.object_uid);
    out += line;
  }
  return out;
}

inline std::vector<AnnotatedBox> decode_annotations(const std::string& text,
                                                    const std::string& origin) {
  std::vector<AnnotatedBox> boxes;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    AnnotatedBox b;
    std::istringstream ls(line);
    if (!(ls >> b.x0 >> b.y0 >> b.x1 >> b.y1 >> b.class_id >> b.object_uid))
      throw IoError("malformed annotation line in " + origin + ": '" + line + "'");
    boxes.push_back(b);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Dataset directory.
// ---------------------------------------------------------------------------

inline json data_config_to_json(const DataConfig& c) {
  return json{{"scenes", c.scenes},           {"classes", c.classes},
              {"image_size", c.image_size},   {"fog", c.fog},
              {"min_objects", c.min_objects}, {"max_objects", c.max_objects}};
}

inline DataConfig data_config_from_json(const json& j) {
  DataConfig c;
  c.scenes = j.at("scenes").get<int>();
  c.classes = j.at("classes").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.fog = j.at("fog").get<float>();
  c.min_objects = j.at("min_objects").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  return c;
}

inline uint64_t data_config_hash(const DataConfig& c, uint64_t seed) {
  std::string dump = data_config_to_json(c).dump();
  return fnv1a(dump, fnv1a(&seed, sizeof(seed)));
}

namespace detail {

inline const char* group_name(int g) {
  switch (g) {
    case 0: return "source";
    case 1: return "target";
    default: return "variant";
  }
}

inline json sibling_to_json(const SiblingSet& s) {
  return json{{"source", hex64(s.source)},
              {"color", hex64(s.color)},
              {"rotation", hex64(s.rotation)},
              {"color_rotation", hex64(s.color_rotation)}};
}

inline uint64_t parse_hex64(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

inline SiblingSet sibling_from_json(const json& j) {
  SiblingSet s;
  s.source = parse_hex64(j.at("source").get<std::string>());
  s.color = parse_hex64(j.at("color").get<std::string>());
  s.rotation = parse_hex64(j.at("rotation").get<std::string>());
  s.color_rotation = parse_hex64(j.at("color_rotation").get<std::string>());
  return s;
}

}  // namespace detail

/// Writes the benchmark to `dir`: manifest.json, provenance.json and one
/// .img/.ann pair per scene under scenes/. The manifest records a content
/// hash per file plus the generator config hash, so loads are verifiable.
inline void save_dataset(const Benchmark& bench, const fs::path& dir) {
  fs::create_directories(dir / "scenes");

  json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["seed"] = bench.seed;
  manifest["config"] = data_config_to_json(bench.config);
  manifest["config_hash"] = hex64(data_config_hash(bench.config, bench.seed));

  json scene_records = json::array();
  json links = json::array();
  const Dataset* groups[3] = {&bench.source, &bench.target, &bench.variants};
  for (int g = 0; g < 3; ++g) {
    for (const auto& scene : groups[g]->scenes) {
      std::string uid = hex64(scene.scene_uid);
      std::string img_rel = "scenes/" + uid + ".img";
      std::string ann_rel = "scenes/" + uid + ".ann";
      std::string img_blob = encode_image_blob(scene.image);
      std::string ann_text = encode_annotations(scene.boxes);
      write_file_bytes(dir / img_rel, img_blob.data(), img_blob.size());
      write_file_text(dir / ann_rel, ann_text);
      scene_records.push_back(json{{"uid", uid},
                                   {"group", detail::group_name(g)},
                                   {"img", img_rel},
                                   {"ann", ann_rel},
                                   {"boxes", scene.boxes.size()},
                                   {"img_hash", hex64(fnv1a(img_blob))},
                                   {"ann_hash", hex64(fnv1a(ann_text))}});
      if (scene.provenance) {
        links.push_back(json{{"uid", uid},
                             {"parent", hex64(scene.provenance->parent_scene_uid)},
                             {"tags", scene.provenance->tags}});
      }
    }
  }
  manifest["scenes"] = scene_records;
  manifest["counts"] = json{{"source", bench.source.size()},
                            {"target", bench.target.size()},
                            {"variant", bench.variants.size()}};

  json prov;
  prov["links"] = links;
  json prov_scenes = json::object();
  for (const auto& [uid, sib] : bench.provenance.scenes)
    prov_scenes[hex64(uid)] = detail::sibling_to_json(sib);
  json prov_objects = json::object();
  for (const auto& [uid, sib] : bench.provenance.objects)
    prov_objects[hex64(uid)] = detail::sibling_to_json(sib);
  prov["scenes"] = prov_scenes;
  prov["objects"] = prov_objects;

  write_file_text(dir / "provenance.json", prov.dump(2) + "\n");
  write_file_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset directory, verifying every file hash against the manifest.
inline Benchmark load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw IoError("dataset not found: missing " + (dir / "manifest.json").string());
  json manifest = read_json_file(dir / "manifest.json");
  if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
    throw ValidationError("dataset schema version mismatch in " + dir.string());

  Benchmark bench;
  bench.seed = manifest.at("seed").get<uint64_t>();
  bench.config = data_config_from_json(manifest.at("config"));
  if (manifest.at("config_hash").get<std::string>() !=
      hex64(data_config_hash(bench.config, bench.seed)))
    throw IoError("dataset integrity failure: config hash mismatch in " + dir.string());

  std::map<uint64_t, Provenance> link_map;
  json prov = read_json_file(dir / "provenance.json");
  for (const auto& l : prov.at("links")) {
    Provenance p{detail::parse_hex64(l.at("parent").get<std::string>()),
                 l.at("tags").get<uint32_t>()};
    link_map.emplace(detail::parse_hex64(l.at("uid").get<std::string>()), p);
  }
  for (auto it = prov.at("scenes").begin(); it != prov.at("scenes").end(); ++it)
    bench.provenance.scenes.emplace(detail::parse_hex64(it.key()),
                                    detail::sibling_from_json(it.value()));
  for (auto it = prov.at("objects").begin(); it != prov.at("objects").end(); ++it)
    bench.provenance.objects.emplace(detail::parse_hex64(it.key()),
                                     detail::sibling_from_json(it.value()));

  for (const auto& rec : manifest.at("scenes")) {
    fs::path img_path = dir / rec.at("img").get<std::string>();
    fs::path ann_path = dir / rec.at("ann").get<std::string>();
    auto img_bytes = read_file_bytes(img_path);
    auto ann_bytes = read_file_bytes(ann_path);
    if (hex64(fnv1a(img_bytes.data(), img_bytes.size())) != rec.at("img_hash").get<std::string>())
      throw IoError("dataset integrity failure: " + img_path.string());
    if (hex64(fnv1a(ann_bytes.data(), ann_bytes.size())) != rec.at("ann_hash").get<std::string>())
      throw IoError("dataset integrity failure: " + ann_path.string());

    SceneSample scene;
    scene.scene_uid = detail::parse_hex64(rec.at("uid").get<std::string>());
    scene.image = decode_image_blob(img_bytes, img_path.string());
    scene.boxes = decode_annotations(std::string(ann_bytes.begin(), ann_bytes.end()),
                                     ann_path.string());
    if (scene.boxes.size() != rec.at("boxes").get<size_t>())
      throw IoError("dataset integrity failure: box count mismatch in " + ann_path.string());
    auto link = link_map.find(scene.scene_uid);
    if (link != link_map.end()) scene.provenance = link->second;

    std::string group = rec.at("group").get<std::string>();
    if (group == "source") {
      scene.domain = Domain::kSource;
      bench.source.scenes.push_back(std::move(scene));
    } else if (group == "target") {
      scene.domain = Domain::kTarget;
      bench.target.scenes.push_back(std::move(scene));
    } else if (group == "variant") {
      scene.domain = Domain::kSource;
      bench.variants.scenes.push_back(std::move(scene));
    } else {
      throw IoError("dataset manifest has unknown group '" + group + "'");
    }
  }
  return bench;
}

}  // namespace simalign
