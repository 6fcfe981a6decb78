#pragma once

#include <string>
#include <vector>

#include "deground/app/pipeline.hpp"
#include "deground/evalharness.hpp"

namespace deground::app {

struct ScenePredictions {
  std::vector<DetectionPrediction> detection;
  std::vector<std::vector<ScoredBox>> grounding;  // per instruction, all K queries
  std::vector<Tensor> relevance;                  // per instruction, N x 1 sigmoid (RAG on)
};

/// Forward pass without training: detection queries labelled by their best
/// class, grounding queries scored by sigmoid of the grounding logit.
inline ScenePredictions predict_scene(const RunConfig& cfg, ParamStore& params,
                                      const PreparedScene& ps) {
  ScenePredictions out;
  Tape tape(params);
  const auto& coords = ps.input.voxels.coords;
  auto visual = encode_visual(tape, ps.input);
  ForwardOptions opt{cfg.use_rag, cfg.use_qim};
  auto det = detect(tape, cfg.model, visual, coords, opt);
  const auto& L = det.out.logits.value();
  for (std::size_t k = 0; k < det.out.boxes.size(); ++k) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < L.cols(); ++c) {
      if (L.at(k, c) > L.at(k, best)) best = c;
    }
    out.detection.push_back({det.out.boxes[k], best, deground::detail::stable_sigmoid(L.at(k, best))});
  }
  for (const auto& ins : ps.instructions) {
    auto text = embed_text(tape, ins.words);
    auto grd = ground(tape, cfg.model, visual, coords, text, opt);
    std::vector<ScoredBox> preds;
    const auto& G = grd.out.logits.value();
    for (std::size_t k = 0; k < grd.out.boxes.size(); ++k) {
      preds.push_back({grd.out.boxes[k], deground::detail::stable_sigmoid(G.at(k, 0))});
    }
    out.grounding.push_back(std::move(preds));
    if (grd.rag) {
      const auto& R = grd.rag->relevance.value();
      std::vector<double> s(R.size());
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = deground::detail::stable_sigmoid(R[i]);
      out.relevance.push_back(Tensor(R.shape(), std::move(s)));
    }
  }
  return out;
}

struct Evaluation {
  std::vector<EvalReport> grounding;       // one per threshold
  std::vector<DetectionReport> detection;  // one per threshold
};

inline Evaluation evaluate(const RunConfig& cfg, ParamStore& params,
                           const std::vector<PreparedScene>& scenes,
                           const std::vector<double>& thresholds) {
  std::vector<GroundingResult> results;
  std::vector<DetectionScene> det_scenes;
  for (const auto& ps : scenes) {
    auto pred = predict_scene(cfg, params, ps);
    DetectionScene ds{pred.detection, {}, {}};
    for (const auto& o : ps.objects) {
      ds.gt_boxes.push_back(o.box);
      ds.gt_labels.push_back(o.label);
    }
    det_scenes.push_back(std::move(ds));
    for (std::size_t i = 0; i < ps.instructions.size(); ++i) {
      const auto& ins = ps.instructions[i].instruction;
      results.push_back({pred.grounding[i], ps.instructions[i].target.box, ins.hard, ins.view_dep,
                         ps.name + "#" + std::to_string(i)});
    }
  }
  Evaluation ev;
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw Error("evaluate: IoU threshold must be in (0, 1]");
    ev.grounding.push_back(bucket_report(results, t));
    ev.detection.push_back(detection_report(det_scenes, t));
  }
  return ev;
}

inline nlohmann::json evaluation_json(const Evaluation& ev) {
  nlohmann::json g = nlohmann::json::array(), d = nlohmann::json::array();
  for (const auto& r : ev.grounding) g.push_back(report_json(r));
  for (const auto& r : ev.detection) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [c, ap] : r.per_class) per[kClassNames.at(c)] = ap;
    d.push_back({{"iou_thresh", r.iou_thresh}, {"map", r.map}, {"per_class", per}});
  }
  return {{"grounding", g}, {"detection", d}};
}

}  // namespace deground::app
