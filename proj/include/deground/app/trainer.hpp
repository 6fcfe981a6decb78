#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "deground/app/pipeline.hpp"
#include "deground/checkpoint.hpp"
#include "deground/optim.hpp"

namespace deground::app {

struct StepRecord {
  std::size_t step = 0;
  std::size_t scene = 0;
  std::size_t instruction = 0;
  double total = 0.0;
  double det_total = 0.0, det_cls = 0.0, det_box = 0.0;
  double grd_total = 0.0, grd_focal = 0.0, grd_box = 0.0, grd_spatial = 0.0;
  double aux = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},           {"scene", r.scene},         {"instruction", r.instruction},
          {"total", r.total},         {"det_total", r.det_total}, {"det_cls", r.det_cls},
          {"det_box", r.det_box},     {"grd_total", r.grd_total}, {"grd_focal", r.grd_focal},
          {"grd_box", r.grd_box},     {"grd_spatial", r.grd_spatial}, {"aux", r.aux}};
}

/// Fresh parameters for `cfg`, seeded from cfg.seed.
inline ParamStore init_params(const RunConfig& cfg) {
  ParamStore p;
  Rng rng(Rng::mix(cfg.seed, 0x1417));
  init_model(p, cfg.model, rng);
  return p;
}

inline StepRecord record_of(const Objective& obj, std::size_t step, std::size_t scene,
                            std::size_t ins) {
  StepRecord r{step, scene, ins, obj.total};
  r.det_total = obj.detection.total;
  r.det_cls = obj.detection.cls;
  r.det_box = obj.detection.box;
  if (obj.grounding) {
    r.grd_total = obj.grounding->total;
    r.grd_focal = obj.grounding->cls;
    r.grd_box = obj.grounding->box;
    r.grd_spatial = obj.grounding->spatial;
  }
  r.aux = obj.aux;
  return r;
}

/// Objective of (scene, instruction) without updating anything.
inline Objective evaluate_objective(const RunConfig& cfg, ParamStore& params,
                                    const PreparedScene& ps, std::size_t instruction) {
  Tape tape(params);
  const PreparedInstruction* ins =
      ps.instructions.empty() ? nullptr : &ps.instructions.at(instruction);
  return joint_objective(tape, cfg, ps, ins);
}

/// Step s trains scene s mod S on that scene's instructions in turn. Each
/// step records the losses before its update.
inline std::vector<StepRecord> train(const RunConfig& cfg, ParamStore& params,
                                     const std::vector<PreparedScene>& scenes,
                                     const std::function<void(const StepRecord&)>& on_step = {}) {
  if (scenes.empty()) throw Error("train: need at least one scene");
  Optimizer opt(cfg.optimizer);
  std::vector<StepRecord> log;
  params.zero_grad();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t si = step % scenes.size();
    const auto& ps = scenes[si];
    const std::size_t round = step / scenes.size();
    const std::size_t ii = ps.instructions.empty() ? 0 : round % ps.instructions.size();
    StepRecord rec;
    try {
      Tape tape(params);
      const PreparedInstruction* ins = ps.instructions.empty() ? nullptr : &ps.instructions[ii];
      auto obj = joint_objective(tape, cfg, ps, ins);
      rec = record_of(obj, step, si, ii);
      if (!std::isfinite(obj.total)) throw Error("non-finite loss");
      tape.backward(obj.total_var);
      if (cfg.optimizer.schedule == LrSchedule::kCosine) {
        opt.set_lr(cosine_lr(cfg.optimizer.lr, step, cfg.steps));
      }
      opt.step(params);
    } catch (const Error& e) {
      throw Error("train: diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (on_step) on_step(rec);
    log.push_back(rec);
  }
  return log;
}

inline nlohmann::json checkpoint_meta(const RunConfig& cfg, std::size_t steps_done) {
  return {{"config", to_json(cfg)}, {"steps_done", steps_done}};
}

/// Loads a checkpoint and the run config stored in it.
inline std::pair<ParamStore, RunConfig> load_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (!ck.meta.contains("config")) throw Error("checkpoint: no run config in metadata");
  auto cfg = config_from_json(ck.meta.at("config"));
  return {std::move(ck.params), cfg};
}

}  // namespace deground::app
