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

#include <chrono>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "simalign/simalign.hpp"

using namespace simalign;

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

ExperimentConfig load_config_file(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return experiment_config_from_json(read_json_file(path));
}

DetectorConfig detector_config_for(const DataConfig& data) {
  DetectorConfig d;
  d.num_classes = data.classes;
  return d;
}

/// Memory context wired from a loaded benchmark + bank. The refresh pool
/// spans source and variant scenes; refresh touches only the uids the bank
/// actually references.
MemoryContext make_memory_context(const Benchmark& bench, MemoryBank& bank) {
  MemoryContext ctx;
  ctx.bank = &bank;
  ctx.provenance = &bench.provenance;
  ctx.refresh_pool = scene_ptrs(bench.source);
  for (const auto* p : scene_ptrs(bench.variants)) ctx.refresh_pool.push_back(p);
  return ctx;
}

int run_gen_data(const std::string& out, ExperimentConfig cfg, bool force) {
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force)
      throw ValidationError("output directory " + out + " is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  Benchmark bench =
      generate_benchmark(cfg.data, cfg.train.seed, resolve_threads(cfg.train.threads));
  save_dataset(bench, out);
  std::printf("source=%zu target=%zu variants=%zu boxes=%zu\n", bench.source.size(),
              bench.target.size(), bench.variants.size(), bench.source.total_boxes());
  ExperimentRecord rec{"gen-data", cfg, cfg.train.seed, watch.seconds(), {out}, {}};
  write_experiment_record(rec, out);
  return 0;
}

int run_pretrain(const std::string& data, const std::string& out, ExperimentConfig cfg) {
  Benchmark bench = load_dataset(data);
  cfg.data = bench.config;
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  PretrainResult result = pretrain_source(bench.source, detector_config_for(bench.config), cfg.train);
  save_detector(result.detector, out);
  write_file_text(fs::path(out) / "metrics.csv", metrics_csv(result.trace));
  write_file_text(fs::path(out) / "eval.csv", eval_csv(result.final_eval));
  std::printf("pretrain done: source mAP=%.4f accuracy=%.4f\n", result.final_eval.map,
              result.final_eval.accuracy);
  ExperimentRecord rec{"pretrain", cfg, cfg.train.seed, watch.seconds(),
                       {out + "/params.json", out + "/metrics.csv", out + "/eval.csv"}, {}};
  rec.extra["source_map"] = result.final_eval.map;
  write_experiment_record(rec, out);
  return 0;
}

int run_build_memory(const std::string& data, const std::string& model, const std::string& out,
                     bool with_variants, ExperimentConfig cfg) {
  Benchmark bench = load_dataset(data);
  cfg.data = bench.config;
  DetectorParams detector = load_detector(model);
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  std::vector<const SceneSample*> pool = scene_ptrs(bench.source);
  if (with_variants)
    for (const auto* p : scene_ptrs(bench.variants)) pool.push_back(p);
  MemoryBank bank = build_memory_bank(pool, detector, 0, resolve_threads(cfg.train.threads));
  bank.refresh_interval = cfg.train.refresh_interval;
  save_memory(bank, out);
  std::printf("memory built: fg=%zu bg=%zu skipped=%d\n", bank.fg_count(), bank.bg.size(),
              bank.skipped);
  ExperimentRecord rec{"build-memory", cfg, cfg.train.seed, watch.seconds(),
                       {out + "/memory.json"}, {}};
  rec.extra["fg_entries"] = bank.fg_count();
  rec.extra["bg_entries"] = bank.bg.size();
  rec.extra["with_variants"] = with_variants;
  write_experiment_record(rec, out);
  return 0;
}

int run_subsample(const std::string& memory_dir, const std::string& method, double keep_fg,
                  double keep_bg, const std::string& out, uint64_t seed) {
  MemoryBank bank = load_memory(memory_dir);
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  RngStream rng = RngStream(seed).substream(stream_salt::kSubsample);
  MemoryBank small = subsample_bank(bank, subsample_method_from(method),
                                    static_cast<float>(keep_fg), static_cast<float>(keep_bg), rng);
  save_memory(small, out);
  std::printf("subsampled: fg %zu -> %zu, bg %zu -> %zu\n", bank.fg_count(), small.fg_count(),
              bank.bg.size(), small.bg.size());
  ExperimentConfig cfg;
  cfg.train.seed = seed;
  cfg.train.subsample = subsample_method_from(method);
  cfg.train.keep_fg = static_cast<float>(keep_fg);
  cfg.train.keep_bg = static_cast<float>(keep_bg);
  ExperimentRecord rec{"subsample", cfg, seed, watch.seconds(), {out + "/memory.json"}, {}};
  write_experiment_record(rec, out);
  return 0;
}

int run_adapt(const std::string& data, const std::string& model, const std::string& memory_dir,
              const std::string& out, ExperimentConfig cfg) {
  Benchmark bench = load_dataset(data);
  cfg.data = bench.config;
  DetectorParams detector = load_detector(model);
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;

  MemoryBank bank;
  MemoryContext memory;
  bool has_memory = !memory_dir.empty();
  if (has_memory) {
    bank = load_memory(memory_dir);
    memory = make_memory_context(bench, bank);
  } else if (is_memory_mode(cfg.train.mode)) {
    throw ValidationError("adapt: mode " + to_string(cfg.train.mode) + " requires --memory");
  }
  AdaptResult result = adapt(bench.source, bench.target, detector,
                             has_memory ? &memory : nullptr, cfg.train);
  save_detector(result.detector, out);
  write_file_text(fs::path(out) / "metrics.csv", metrics_csv(result.trace));
  write_file_text(fs::path(out) / "eval.csv", eval_csv(result.final_eval));
  std::printf("adapt done: target mAP=%.4f accuracy=%.4f\n", result.final_eval.map,
              result.final_eval.accuracy);
  ExperimentRecord rec{"adapt", cfg, cfg.train.seed, watch.seconds(),
                       {out + "/params.json", out + "/metrics.csv", out + "/eval.csv"}, {}};
  rec.extra["target_map"] = result.final_eval.map;
  rec.extra["target_accuracy"] = result.final_eval.accuracy;
  write_experiment_record(rec, out);
  return 0;
}

int run_eval(const std::string& data, const std::string& model, const std::string& out,
             const std::string& split, ExperimentConfig cfg) {
  Benchmark bench = load_dataset(data);
  cfg.data = bench.config;
  DetectorParams detector = load_detector(model);
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  const Dataset* ds = nullptr;
  if (split == "source") ds = &bench.source;
  else if (split == "target") ds = &bench.target;
  else throw ValidationError("eval: --split must be source or target");
  EvalReport report = evaluate_detector(detector, scene_ptrs(*ds), cfg.train.nms_iou,
                                        resolve_threads(cfg.train.threads));
  write_file_text(fs::path(out) / "eval.csv", eval_csv(report));
  std::printf("eval (%s): mAP=%.4f accuracy=%.4f tp=%ld fp=%ld fn=%ld\n", split.c_str(),
              report.map, report.accuracy, report.tp, report.fp, report.fn);
  ExperimentRecord rec{"eval", cfg, cfg.train.seed, watch.seconds(), {out + "/eval.csv"}, {}};
  rec.extra["split"] = split;
  rec.extra["map"] = report.map;
  write_experiment_record(rec, out);
  return 0;
}

int run_ablate(const std::string& suite, int seeds, const std::string& out, ExperimentConfig cfg) {
  fs::create_directories(out);
  DirectoryLock lock(out);
  Stopwatch watch;
  AblationTable table = run_ablation(suite, cfg, seeds, detector_config_for(cfg.data),
                                     [](const AblationCell& cell) {
                                       log_info("cell %s seed=%llu map=%.4f acc=%.4f%s",
                                                cell.label.c_str(),
                                                static_cast<unsigned long long>(cell.seed),
                                                cell.map, cell.accuracy,
                                                cell.failed ? " FAILED" : "");
                                     });
  write_file_text(fs::path(out) / (suite + "_cells.csv"), ablation_cells_csv(table));
  write_file_text(fs::path(out) / (suite + "_summary.csv"), ablation_summary_csv(table));
  std::printf("%s", ablation_summary_csv(table).c_str());
  ExperimentRecord rec{"ablate", cfg, cfg.train.seed, watch.seconds(),
                       {out + "/" + suite + "_cells.csv", out + "/" + suite + "_summary.csv"}, {}};
  rec.extra["suite"] = suite;
  rec.extra["seeds"] = seeds;
  write_experiment_record(rec, out);
  return 0;
}

int run_report(const std::string& in, const std::string& format, const std::string& out) {
  auto bytes = read_file_bytes(in);
  AblationTable table = parse_summary_csv(std::string(bytes.begin(), bytes.end()));
  fs::create_directories(out);
  if (format == "csv") {
    write_file_text(fs::path(out) / (table.suite + "_summary.csv"), ablation_summary_csv(table));
  } else if (format == "svg") {
    write_file_text(fs::path(out) / (table.suite + "_map.svg"),
                    render_ablation_svg(table, "map"));
    write_file_text(fs::path(out) / (table.suite + "_accuracy.svg"),
                    render_ablation_svg(table, "accuracy"));
  } else {
    throw ValidationError("report: --format must be csv or svg");
  }
  std::printf("report written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simalign: memory-based visually-similar pair alignment for cross-domain detection"};
  app.require_subcommand(1);

  std::string config_path, data_dir, model_dir, memory_dir, out_dir, split = "target";
  std::string suite, method = "coreset", report_in, report_format = "csv";
  bool force = false, with_variants = false;
  int seeds = 5;
  double keep_fg = 0.5, keep_bg = 0.3;

  // Overridable config knobs; only flags the user passes take effect.
  uint64_t seed = 1;
  int threads = 0, scenes = 500, classes = 3, epochs = -1, top_k = 1;
  double fog = 0.6, delta = 0.8, fg_weight = 0.05, bg_weight = 0.05, unsup_weight = 1.0, grl_lambda_cli = 0.25, lr_cli = 0.01;
  std::string mode = "memory_similar";
  int image_size = 64;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--threads", threads, "worker threads (0 = hardware)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the two-domain synthetic benchmark");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--scenes", scenes, "scenes per domain");
  gen->add_option("--classes", classes, "object classes (1-3)");
  gen->add_option("--fog", fog, "target-domain fog intensity in [0,1]");
  gen->add_option("--image-size", image_size, "square image size in pixels");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  add_common(gen);

  CLI::App* pre = app.add_subcommand("pretrain", "train the detector on the source domain");
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_option("--out", out_dir, "output model directory")->required();
  pre->add_option("--epochs", epochs, "pretrain epochs");
  add_common(pre);

  CLI::App* mem = app.add_subcommand("build-memory", "build the source feature memory");
  mem->add_option("--data", data_dir, "dataset directory")->required();
  mem->add_option("--model", model_dir, "pretrained model directory")->required();
  mem->add_option("--out", out_dir, "output memory directory")->required();
  mem->add_flag("--with-variants", with_variants,
                "include transform-variant scenes (needed for provenance modes)");
  add_common(mem);

  CLI::App* sub = app.add_subcommand("subsample", "subsample a memory snapshot");
  sub->add_option("--memory", memory_dir, "input memory directory")->required();
  sub->add_option("--method", method, "coreset or random")->required();
  sub->add_option("--keep-fg", keep_fg, "foreground keep ratio");
  sub->add_option("--keep-bg", keep_bg, "background keep ratio");
  sub->add_option("--out", out_dir, "output memory directory")->required();
  sub->add_option("--seed", seed, "seed for random subsampling");

  CLI::App* ada = app.add_subcommand("adapt", "run domain adaptation");
  ada->add_option("--data", data_dir, "dataset directory")->required();
  ada->add_option("--model", model_dir, "pretrained model directory")->required();
  ada->add_option("--memory", memory_dir, "memory directory (memory modes)");
  ada->add_option("--out", out_dir, "output directory")->required();
  ada->add_option("--mode", mode, "alignment mode");
  ada->add_option("--epochs", epochs, "adaptation epochs");
  ada->add_option("--delta", delta, "confidence threshold");
  ada->add_option("--top-k", top_k, "retrieved positives per instance");
  ada->add_option("--fg-weight", fg_weight, "foreground loss weight");
  ada->add_option("--bg-weight", bg_weight, "background loss weight");
  ada->add_option("--unsup-weight", unsup_weight, "pseudo-label loss weight");
  ada->add_option("--grl", grl_lambda_cli, "gradient reversal scale");
  ada->add_option("--lr", lr_cli, "learning rate");
  add_common(ada);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a model on one split");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_dir, "model directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--split", split, "source or target");
  add_common(ev);

  CLI::App* abl = app.add_subcommand("ablate", "run an ablation suite");
  abl->add_option("--suite", suite, "suite name")->required();
  abl->add_option("--seeds", seeds, "number of seeds");
  abl->add_option("--out", out_dir, "output directory")->required();
  abl->add_option("--scenes", scenes, "scenes per domain");
  abl->add_option("--epochs", epochs, "adapt epochs (and pretrain epochs)");
  add_common(abl);

  CLI::App* rep = app.add_subcommand("report", "render CSV/SVG from a summary CSV");
  rep->add_option("--in", report_in, "summary CSV path")->required();
  rep->add_option("--format", report_format, "csv or svg");
  rep->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load_config_file(config_path);
    auto passed = [&](CLI::App* cmd, const std::string& flag) {
      return cmd->count(flag) > 0;
    };

    if (gen->parsed()) {
      if (passed(gen, "--scenes")) cfg.data.scenes = scenes;
      if (passed(gen, "--classes")) cfg.data.classes = classes;
      if (passed(gen, "--fog")) cfg.data.fog = static_cast<float>(fog);
      if (passed(gen, "--image-size")) cfg.data.image_size = image_size;
      if (passed(gen, "--seed")) cfg.train.seed = seed;
      if (passed(gen, "--threads")) cfg.train.threads = threads;
      return run_gen_data(out_dir, cfg, force);
    }
    if (pre->parsed()) {
      if (passed(pre, "--seed")) cfg.train.seed = seed;
      if (passed(pre, "--threads")) cfg.train.threads = threads;
      if (passed(pre, "--epochs")) cfg.train.pretrain_epochs = epochs;
      return run_pretrain(data_dir, out_dir, cfg);
    }
    if (mem->parsed()) {
      if (passed(mem, "--seed")) cfg.train.seed = seed;
      if (passed(mem, "--threads")) cfg.train.threads = threads;
      return run_build_memory(data_dir, model_dir, out_dir, with_variants, cfg);
    }
    if (sub->parsed()) return run_subsample(memory_dir, method, keep_fg, keep_bg, out_dir, seed);
    if (ada->parsed()) {
      if (passed(ada, "--seed")) cfg.train.seed = seed;
      if (passed(ada, "--threads")) cfg.train.threads = threads;
      if (passed(ada, "--epochs")) cfg.train.adapt_epochs = epochs;
      if (passed(ada, "--mode")) cfg.train.mode = alignment_mode_from(mode);
      if (passed(ada, "--delta")) cfg.train.confidence_threshold = static_cast<float>(delta);
      if (passed(ada, "--top-k")) cfg.train.top_k = top_k;
      if (passed(ada, "--fg-weight")) cfg.train.fg_weight = static_cast<float>(fg_weight);
      if (passed(ada, "--bg-weight")) cfg.train.bg_weight = static_cast<float>(bg_weight);
      if (passed(ada, "--unsup-weight")) cfg.train.unsup_weight = static_cast<float>(unsup_weight);
      if (passed(ada, "--grl")) cfg.train.grl_lambda = static_cast<float>(grl_lambda_cli);
      if (passed(ada, "--lr")) cfg.train.lr = static_cast<float>(lr_cli);
      cfg.train.validate();
      return run_adapt(data_dir, model_dir, memory_dir, out_dir, cfg);
    }
    if (ev->parsed()) {
      if (passed(ev, "--threads")) cfg.train.threads = threads;
      return run_eval(data_dir, model_dir, out_dir, split, cfg);
    }
    if (abl->parsed()) {
      if (passed(abl, "--seed")) cfg.train.seed = seed;
      if (passed(abl, "--threads")) cfg.train.threads = threads;
      if (passed(abl, "--scenes")) cfg.data.scenes = scenes;
      if (passed(abl, "--epochs")) {
        cfg.train.adapt_epochs = epochs;
        cfg.train.pretrain_epochs = epochs;
      }
      return run_ablate(suite, seeds, out_dir, cfg);
    }
    if (rep->parsed()) return run_report(report_in, report_format, out_dir);
    std::fprintf(stderr, "no subcommand\n");
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
