#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "deground/app/evaluate.hpp"
#include "deground/app/gradcheck_suite.hpp"
#include "deground/app/heatmap.hpp"
#include "deground/app/trainer.hpp"

// The five command-line operations as plain functions. Each writes its files
// and returns what it wrote; errors surface as deground::Error.

namespace deground::app {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error("cannot create output directory '" + dir.string() + "'");
  }
}

/// Writes `text` to `path`, creating missing parent directories.
inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline std::string scene_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu.json", i);
  return buf;
}

/// Seed of scene i in a generated set.
inline std::uint64_t scene_seed(std::uint64_t seed, std::size_t i) { return Rng::mix(seed, 0x5ce0 + i); }

/// Generates cfg.scene_count scenes (with their instructions) into `dir`.
inline std::vector<fs::path> cmd_gen(const RunConfig& cfg, const fs::path& dir) {
  cfg.validate();
  ensure_dir(dir);
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < cfg.scene_count; ++i) {
    const auto seed = scene_seed(cfg.seed, i);
    SceneFile f{generate_scene(cfg.scene, seed), {}};
    f.instructions = make_instructions(f.scene, seed);
    out.push_back(dir / scene_file_name(i));
    save_scene_file(out.back(), f);
  }
  return out;
}

/// Expands directories to their *.json files; files pass through. Sorted
/// within each directory so order never depends on the filesystem.
inline std::vector<fs::path> expand_scene_paths(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw Error("no such scene file or directory '" + in + "'");
    }
  }
  if (out.empty()) throw Error("no scene files given");
  return out;
}

inline std::vector<PreparedScene> load_scenes(const std::vector<fs::path>& paths,
                                              const RunConfig& cfg,
                                              std::vector<std::string>* warnings = nullptr) {
  const auto stub = StubEmbeddings::make(cfg.model.word_dim, cfg.model.view_channels);
  std::vector<PreparedScene> out;
  for (const auto& p : paths) {
    out.push_back(prepare_scene(load_scene_file(p, warnings), cfg, stub, p.stem().string()));
  }
  return out;
}

struct TrainResult {
  std::vector<StepRecord> log;
  ParamStore params;
};

/// Trains from fresh parameters and saves the checkpoint to `ckpt` and the
/// per-step loss log (JSON lines) to `log_path`.
inline TrainResult cmd_train(const RunConfig& cfg, const std::vector<PreparedScene>& scenes,
                             const fs::path& ckpt, const fs::path& log_path,
                             const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  TrainResult r{{}, init_params(cfg)};
  r.log = train(cfg, r.params, scenes, on_step);
  std::string lines;
  for (const auto& rec : r.log) lines += to_json(rec).dump() + '\n';
  if (!ckpt.parent_path().empty()) ensure_dir(ckpt.parent_path());
  save_checkpoint(ckpt, r.params, checkpoint_meta(cfg, r.log.size()));
  write_text(log_path, lines);
  return r;
}

/// Evaluates a checkpoint and writes report.json and report.txt into `dir`.
inline Evaluation cmd_eval(const fs::path& ckpt, const std::vector<fs::path>& scene_paths,
                           const std::vector<double>& thresholds, const fs::path& dir) {
  auto [params, cfg] = load_model(ckpt);
  const auto scenes = load_scenes(scene_paths, cfg);
  auto ev = evaluate(cfg, params, scenes, thresholds);
  ensure_dir(dir);
  write_text(dir / "report.json", evaluation_json(ev).dump(2) + '\n');
  write_text(dir / "report.txt", report_table(ev.grounding, ev.detection));
  return ev;
}

/// Plain-text table of a gradient suite run, one row per parameter group.
inline std::string grad_table(const GradSuiteReport& rep, double tol) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %8s %14s %6s\n", "group", "params", "max_rel_err", "ok");
  out += line;
  for (const auto& g : rep.groups) {
    std::snprintf(line, sizeof line, "%-20s %8zu %14.3e %6s\n", g.group.c_str(), g.params,
                  g.max_rel_err, g.pass ? "pass" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "overall max rel-err %.3e (tol %.1e) on %zu voxels: %s\n",
                rep.max_rel_err, tol, rep.voxels, rep.pass ? "PASS" : "FAIL");
  out += line;
  return out;
}

struct HeatmapFiles {
  fs::path image, csv;
  std::vector<double> scores;
};

/// Renders sigmoid relevance of one instruction onto one camera view as
/// `<prefix>.ppm` plus `<prefix>.csv`.
inline HeatmapFiles cmd_heatmap(const fs::path& ckpt, const fs::path& scene_path,
                                std::size_t view, std::size_t instruction,
                                const fs::path& prefix) {
  auto [params, cfg] = load_model(ckpt);
  if (!cfg.use_rag) throw Error("heatmap: checkpoint was trained with RAG disabled");
  const auto file = load_scene_file(scene_path);
  if (view >= file.scene.cameras.size()) {
    throw Error("heatmap: view " + std::to_string(view) + " out of range (scene has " +
                std::to_string(file.scene.cameras.size()) + " views)");
  }
  if (instruction >= file.instructions.size()) {
    throw Error("heatmap: instruction " + std::to_string(instruction) + " out of range (scene has " +
                std::to_string(file.instructions.size()) + ")");
  }
  const auto scenes = load_scenes({scene_path}, cfg);
  const auto pred = predict_scene(cfg, params, scenes[0]);
  const auto& rel = pred.relevance.at(instruction);
  HeatmapFiles out{fs::path(prefix.string() + ".ppm"), fs::path(prefix.string() + ".csv"),
                   std::vector<double>(rel.data().begin(), rel.data().end())};
  if (!prefix.parent_path().empty()) ensure_dir(prefix.parent_path());
  const auto& cam = file.scene.cameras[view];
  write_ppm(out.image, render_heatmap(scenes[0].input.voxels, out.scores, cam.intrinsics, cam.pose));
  write_scores_csv(out.csv, scenes[0].input.voxels, out.scores);
  return out;
}

}  // namespace deground::app
