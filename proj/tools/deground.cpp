#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deground/app/commands.hpp"

using namespace deground;
using namespace deground::app;

namespace {

// Flags shared by every command that builds a RunConfig. Unset flags leave
// the config file (or default) value alone.
struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps, k_det, k_grd, count;
  std::optional<double> lr, lambda_spatial;
  bool disable_rag = false, disable_qim = false;
  std::string dump_config;

  void add_to(CLI::App* cmd, bool training) {
    cmd->add_option("--config", config, "JSON run config (any subset of keys)");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--dump-config", dump_config, "Write the effective config to this path");
    if (!training) return;
    cmd->add_option("--steps", steps, "Optimizer steps");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--k-det", k_det, "Detection query count");
    cmd->add_option("--k-grd", k_grd, "Grounding query count");
    cmd->add_option("--lambda-spatial", lambda_spatial, "Spatial relevance loss weight");
    cmd->add_flag("--disable-rag", disable_rag, "Train without the relevance branch");
    cmd->add_flag("--disable-qim", disable_qim, "Train without query modulation");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config(config);
    if (seed) c.seed = *seed;
    if (steps) c.steps = *steps;
    if (lr) c.optimizer.lr = *lr;
    if (k_det) c.model.k_det = *k_det;
    if (k_grd) c.model.k_grd = *k_grd;
    if (lambda_spatial) c.weights.spatial = *lambda_spatial;
    if (count) c.scene_count = *count;
    if (disable_rag) c.use_rag = false;
    if (disable_qim) c.use_qim = false;
    c.validate();
    if (!dump_config.empty()) write_text(dump_config, to_json(c).dump(2) + '\n');
    return c;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ego-centric 3D grounding with shared detection/grounding queries"};
  app.require_subcommand(1);

  // gen
  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate synthetic scenes with instructions");
  gen_flags.add_to(gen, false);
  gen->add_option("--count", gen_flags.count, "Number of scenes");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  ConfigFlags train_flags;
  std::string train_out, train_log;
  std::vector<std::string> train_scenes;
  std::size_t log_every = 50;
  auto* tr = app.add_subcommand("train", "Train on scenes and save a checkpoint");
  train_flags.add_to(tr, true);
  tr->add_option("scenes", train_scenes, "Scene files or directories")->required();
  tr->add_option("--out", train_out, "Checkpoint manifest path")->required();
  tr->add_option("--log", train_log, "Per-step loss log (default <out>.log.jsonl)");
  tr->add_option("--log-every", log_every, "Print a loss line every N steps (0 = never)");

  // eval
  std::string eval_ckpt, eval_out;
  std::vector<std::string> eval_scenes;
  std::vector<double> eval_iou{0.25, 0.5};
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (AP@IoU per bucket)");
  ev->add_option("scenes", eval_scenes, "Scene files or directories")->required();
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint manifest")->required();
  ev->add_option("--iou", eval_iou, "IoU thresholds")->expected(1, -1);
  ev->add_option("--out", eval_out, "Report directory")->required();

  // gradcheck
  double gc_tol = 1e-4, gc_eps = 1e-5;
  std::uint64_t gc_seed = 7;
  bool gc_negative = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every module");
  gc->add_option("--tol", gc_tol, "Max relative error");
  gc->add_option("--eps", gc_eps, "Central-difference step");
  gc->add_option("--seed", gc_seed, "Seed of the random parameters and scene");
  gc->add_flag("--negative-control", gc_negative, "Inject a deliberately wrong backward");

  // heatmap
  std::string hm_ckpt, hm_scene, hm_out;
  std::size_t hm_view = 0, hm_instruction = 0;
  auto* hm = app.add_subcommand("heatmap", "Export the relevance heatmap of one view");
  hm->add_option("scene", hm_scene, "Scene file")->required();
  hm->add_option("--checkpoint", hm_ckpt, "Checkpoint manifest")->required();
  hm->add_option("--view", hm_view, "Camera index");
  hm->add_option("--instruction", hm_instruction, "Instruction index");
  hm->add_option("--out", hm_out, "Output prefix (.ppm and .csv are appended)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "deground: error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (gen->parsed()) {
      const auto cfg = gen_flags.resolve();
      for (const auto& p : cmd_gen(cfg, gen_out)) std::cout << p.string() << "\n";
    } else if (tr->parsed()) {
      const auto cfg = train_flags.resolve();
      const auto scenes = load_scenes(expand_scene_paths(train_scenes), cfg);
      const std::string log = train_log.empty() ? train_out + ".log.jsonl" : train_log;
      auto r = cmd_train(cfg, scenes, train_out, log, [&](const StepRecord& s) {
        if (log_every && s.step % log_every == 0) {
          std::cout << "step " << s.step << " scene " << s.scene << " total " << fmt("%.6f", s.total)
                    << " det " << fmt("%.6f", s.det_total) << " grd " << fmt("%.6f", s.grd_total)
                    << "\n";
        }
      });
      std::cout << "trained " << r.log.size() << " steps; checkpoint " << train_out << "\n";
    } else if (ev->parsed()) {
      const auto e = cmd_eval(eval_ckpt, expand_scene_paths(eval_scenes), eval_iou, eval_out);
      std::cout << report_table(e.grounding, e.detection);
    } else if (gc->parsed()) {
      const auto rep = run_grad_suite(gc_eps, gc_tol, gc_seed, gc_negative);
      std::cout << grad_table(rep, gc_tol);
      return rep.pass ? 0 : 1;
    } else if (hm->parsed()) {
      const auto f = cmd_heatmap(hm_ckpt, hm_scene, hm_view, hm_instruction, hm_out);
      std::cout << f.image.string() << "\n" << f.csv.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "deground: error: " << msg << "\n";
    return 1;
  }
  return 0;
}
