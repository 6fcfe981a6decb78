#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "deground/groundingnet.hpp"
#include "deground/matchinglosses.hpp"
#include "deground/optim.hpp"
#include "deground/synthscene.hpp"

namespace deground::app {

/// Every knob of a run. JSON keys mirror the field names; a config file may
/// give any subset and the rest keep their defaults.
struct RunConfig {
  ModelConfig model;
  double voxel_size = 0.15;
  LossWeights weights;
  double lambda_score = 1.0;  // auxiliary scoring-head objective
  OptimizerConfig optimizer{OptimizerKind::kAdam, 2e-3};
  std::size_t steps = 500;
  std::uint64_t seed = 7;
  bool use_rag = true;
  bool use_qim = true;
  SceneConfig scene;
  std::size_t scene_count = 3;
  double depth_scale = 10.0;  // meters mapped to 1.0 in the stub image features

  void validate() const {
    model.validate();
    scene.validate();
    if (!(voxel_size > 0.0)) throw Error("config: voxel_size must be > 0");
    if (!(optimizer.lr > 0.0)) throw Error("config: optimizer.lr must be > 0");
    if (!(lambda_score >= 0.0)) throw Error("config: lambda_score must be >= 0");
    for (double w : {weights.cls, weights.box, weights.ground, weights.spatial}) {
      if (!(w >= 0.0)) throw Error("config: loss weights must be >= 0");
    }
    if (!(depth_scale > 0.0)) throw Error("config: depth_scale must be > 0");
    if (model.num_classes != scene.num_classes) {
      throw Error("config: model.num_classes must equal scene.num_classes");
    }
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& s = c.scene;
  return {
      {"model",
       {{"dim", m.dim},
        {"layers", m.layers},
        {"heads", m.heads},
        {"ffn", m.ffn},
        {"head_hidden", m.head_hidden},
        {"num_classes", m.num_classes},
        {"word_dim", m.word_dim},
        {"voxel_in", m.voxel_in},
        {"view_channels", m.view_channels},
        {"k_det", m.k_det},
        {"k_grd", m.k_grd}}},
      {"voxel_size", c.voxel_size},
      {"weights",
       {{"cls", c.weights.cls},
        {"box", c.weights.box},
        {"ground", c.weights.ground},
        {"spatial", c.weights.spatial}}},
      {"lambda_score", c.lambda_score},
      {"optimizer",
       {{"kind", c.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd"},
        {"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"schedule", c.optimizer.schedule == LrSchedule::kCosine ? "cosine" : "constant"}}},
      {"steps", c.steps},
      {"seed", c.seed},
      {"use_rag", c.use_rag},
      {"use_qim", c.use_qim},
      {"scene",
       {{"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"num_classes", s.num_classes},
        {"room", {s.room.x(), s.room.y(), s.room.z()}},
        {"cameras", s.cameras},
        {"image_width", s.image_width},
        {"image_height", s.image_height},
        {"focal", s.focal},
        {"require_duplicate", s.require_duplicate},
        {"max_tries", s.max_tries}}},
      {"scene_count", c.scene_count},
      {"depth_scale", c.depth_scale},
  };
}

namespace detail {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("config: bad value for '" + path + key + "'");
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  if (!j.is_object()) throw Error("config: expected a JSON object");
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    auto& o = c.model;
    read(m, "dim", o.dim, "model.");
    read(m, "layers", o.layers, "model.");
    read(m, "heads", o.heads, "model.");
    read(m, "ffn", o.ffn, "model.");
    read(m, "head_hidden", o.head_hidden, "model.");
    read(m, "num_classes", o.num_classes, "model.");
    read(m, "word_dim", o.word_dim, "model.");
    read(m, "voxel_in", o.voxel_in, "model.");
    read(m, "view_channels", o.view_channels, "model.");
    read(m, "k_det", o.k_det, "model.");
    read(m, "k_grd", o.k_grd, "model.");
  }
  read(j, "voxel_size", c.voxel_size, "");
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    read(w, "cls", c.weights.cls, "weights.");
    read(w, "box", c.weights.box, "weights.");
    read(w, "ground", c.weights.ground, "weights.");
    read(w, "spatial", c.weights.spatial, "weights.");
  }
  read(j, "lambda_score", c.lambda_score, "");
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    std::string kind = c.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd";
    read(o, "kind", kind, "optimizer.");
    if (kind != "adam" && kind != "sgd") throw Error("config: optimizer.kind must be adam or sgd");
    c.optimizer.kind = kind == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
    read(o, "lr", c.optimizer.lr, "optimizer.");
    read(o, "beta1", c.optimizer.beta1, "optimizer.");
    read(o, "beta2", c.optimizer.beta2, "optimizer.");
    read(o, "eps", c.optimizer.eps, "optimizer.");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer.");
    std::string schedule = c.optimizer.schedule == LrSchedule::kCosine ? "cosine" : "constant";
    read(o, "schedule", schedule, "optimizer.");
    if (schedule != "constant" && schedule != "cosine") {
      throw Error("config: optimizer.schedule must be constant or cosine");
    }
    c.optimizer.schedule = schedule == "cosine" ? LrSchedule::kCosine : LrSchedule::kConstant;
  }
  read(j, "steps", c.steps, "");
  read(j, "seed", c.seed, "");
  read(j, "use_rag", c.use_rag, "");
  read(j, "use_qim", c.use_qim, "");
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    auto& o = c.scene;
    read(s, "min_objects", o.min_objects, "scene.");
    read(s, "max_objects", o.max_objects, "scene.");
    read(s, "num_classes", o.num_classes, "scene.");
    if (s.contains("room")) {
      std::vector<double> r;
      read(s, "room", r, "scene.");
      if (r.size() != 3) throw Error("config: scene.room needs 3 numbers");
      o.room = Vec3(r[0], r[1], r[2]);
    }
    read(s, "cameras", o.cameras, "scene.");
    read(s, "image_width", o.image_width, "scene.");
    read(s, "image_height", o.image_height, "scene.");
    read(s, "focal", o.focal, "scene.");
    read(s, "require_duplicate", o.require_duplicate, "scene.");
    read(s, "max_tries", o.max_tries, "scene.");
  }
  read(j, "scene_count", c.scene_count, "");
  read(j, "depth_scale", c.depth_scale, "");
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot read '" + path.string() + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace deground::app
