#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deground/app/config.hpp"
#include "deground/groundingnet.hpp"
#include "deground/matchinglosses.hpp"
#include "deground/synthscene.hpp"

// Scene preparation (render, back-project, voxelize, sample views) and the
// joint training objective shared by training, evaluation and gradient checks.

namespace deground::app {

struct PreparedInstruction {
  Instruction instruction;
  Tensor words;          // T x word_dim
  Tensor inside;         // N x 1 relevance labels for the target box
  GtBox target;
};

struct PreparedScene {
  std::string name;
  Scene scene;
  SceneInput input;
  std::vector<GtBox> objects;
  Tensor class_labels;  // N x classes, 1 where the voxel lies in a box of that class
  std::vector<PreparedInstruction> instructions;
};

/// Per-point input feature: sinusoidal encoding of the world position.
inline Tensor point_features(const std::vector<Vec3>& points, std::size_t width) {
  std::vector<double> xyz;
  for (const auto& p : points) xyz.insert(xyz.end(), {p.x(), p.y(), p.z()});
  return nn::sinusoidal_encoding(Tensor::matrix(points.size(), 3, std::move(xyz)), width);
}

inline PreparedScene prepare_scene(const SceneFile& file, const RunConfig& cfg,
                                   const StubEmbeddings& stub, std::string name = "") {
  PreparedScene ps;
  ps.name = std::move(name);
  ps.scene = file.scene;
  std::vector<Vec3> points;
  std::vector<ViewFeatureMap> views;
  for (std::size_t v = 0; v < file.scene.cameras.size(); ++v) {
    const auto r = render_view(file.scene, v);
    views.push_back(stub_view_features(file.scene, v, r, stub, cfg.depth_scale));
    if (std::find(r.depth.valid.begin(), r.depth.valid.end(), 1) == r.depth.valid.end()) continue;
    const auto& cam = file.scene.cameras[v];
    const auto pts = backproject_depth(r.depth, cam.intrinsics, cam.pose);
    points.insert(points.end(), pts.begin(), pts.end());
  }
  if (points.empty()) throw Error("prepare_scene: no camera sees any object in '" + ps.name + "'");
  const auto feats = point_features(points, cfg.model.voxel_in);
  ps.input.voxels = voxelize(points, &feats, cfg.voxel_size);
  ps.input.sampled2d = sample_multiview(ps.input.voxels, views);

  const std::size_t n = ps.input.voxels.size(), nc = cfg.model.num_classes;
  std::vector<double> labels(n * nc, 0.0);
  for (const auto& o : file.scene.objects) {
    if (o.label >= nc) throw Error("prepare_scene: class id exceeds model classes");
    ps.objects.push_back({o.box, o.label});
    for (std::size_t i = 0; i < n; ++i) {
      if (contains_point(o.box, ps.input.voxels.center(i))) labels[i * nc + o.label] = 1.0;
    }
  }
  ps.class_labels = Tensor::matrix(n, nc, std::move(labels));
  for (const auto& ins : file.instructions) {
    const auto& target = file.scene.objects.at(ins.target);
    ps.instructions.push_back({ins, stub.word_vectors(ins.tokens),
                               inside_labels(ps.input.voxels, target.box),
                               {target.box, target.label}});
  }
  return ps;
}

/// Non-differentiable choices of one forward pass, replayable so finite
/// differences see a fixed selection and matching.
struct FrozenChoices {
  std::vector<std::size_t> det_selection, grd_selection;
  Assignment det_assignment, grd_assignment;
};

struct Objective {
  LossBreakdown detection;
  std::optional<LossBreakdown> grounding;
  double aux = 0.0;   // scoring-head objective
  double total = 0.0;
  Var total_var;
  FrozenChoices choices;
};

/// Joint objective on one scene: detection total + grounding total for
/// `instruction` (if any) + lambda_score * scoring-head BCE.
inline Objective joint_objective(Tape& tape, const RunConfig& cfg, const PreparedScene& ps,
                                 const PreparedInstruction* instruction,
                                 const FrozenChoices* frozen = nullptr) {
  Objective obj;
  const auto& coords = ps.input.voxels.coords;
  auto visual = encode_visual(tape, ps.input);
  ForwardOptions opt{cfg.use_rag, cfg.use_qim};
  if (frozen) {
    opt.fixed_det = &frozen->det_selection;
    opt.fixed_grd = &frozen->grd_selection;
  }
  auto det = detect(tape, cfg.model, visual, coords, opt);
  obj.detection = total_loss(det.out, ps.objects, Task::kDetection, cfg.weights, nullptr, nullptr,
                             frozen ? &frozen->det_assignment : nullptr);
  obj.choices.det_selection = det.selection.queries.voxel;
  obj.choices.det_assignment = obj.detection.assignment;
  auto aux = bce_with_logits_mean(det.selection.voxel_logits, ps.class_labels);
  Var total = obj.detection.total_var;

  if (instruction) {
    auto text = embed_text(tape, instruction->words);
    auto grd = ground(tape, cfg.model, visual, coords, text, opt);
    const Var* rel = grd.rag ? &grd.rag->relevance : nullptr;
    obj.grounding = total_loss(grd.out, {instruction->target}, Task::kGrounding, cfg.weights, rel,
                               &instruction->inside, frozen ? &frozen->grd_assignment : nullptr);
    obj.choices.grd_selection = grd.selection.queries.voxel;
    obj.choices.grd_assignment = obj.grounding->assignment;
    aux = add(aux, bce_with_logits_mean(grd.selection.voxel_logits, instruction->inside));
    total = add(total, obj.grounding->total_var);
  }
  obj.aux = aux.value().item();
  obj.total_var = add(total, scale(aux, cfg.lambda_score));
  obj.total = obj.total_var.value().item();
  return obj;
}

}  // namespace deground::app
