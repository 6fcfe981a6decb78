#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "deground/app/commands.hpp"

using namespace deground;
using namespace deground::app;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("deground_app_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small, fast run configuration.
RunConfig quick_config() {
  RunConfig c;
  c.model.dim = 16;
  c.model.ffn = 32;
  c.model.head_hidden = 16;
  c.model.k_det = 12;
  c.model.k_grd = 8;
  c.scene_count = 2;
  c.steps = 3;
  return c;
}

}  // namespace

TEST(Config, RoundTripAndPartial) {
  RunConfig c = quick_config();
  c.weights.spatial = 0.05;
  c.use_qim = false;
  c.optimizer.kind = OptimizerKind::kSgd;
  c.optimizer.schedule = LrSchedule::kCosine;
  c.scene.room = Vec3(5, 4.5, 2.75);
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());

  const auto partial = config_from_json(nlohmann::json{{"steps", 9}, {"model", {{"k_grd", 5}}}});
  EXPECT_EQ(partial.steps, 9u);
  EXPECT_EQ(partial.model.k_grd, 5u);
  EXPECT_EQ(partial.model.k_det, RunConfig{}.model.k_det);
  EXPECT_EQ(partial.weights.spatial, 0.01);

  EXPECT_THROW(config_from_json(nlohmann::json{{"steps", "many"}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"voxel_size", -1.0}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"model", {{"num_classes", 3}}}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"optimizer", {{"kind", "lbfgs"}}}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"optimizer", {{"schedule", "step"}}}}), Error);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Commands, GenIsDeterministicAndLoadable) {
  const auto cfg = quick_config();
  const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  const auto pa = cmd_gen(cfg, a), pb = cmd_gen(cfg, b);
  ASSERT_EQ(pa.size(), 2u);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(slurp(pa[i]), slurp(pb[i]));
    std::vector<std::string> warnings;
    const auto f = load_scene_file(pa[i], &warnings);
    EXPECT_TRUE(warnings.empty());
    EXPECT_FALSE(f.scene.objects.empty());
  }
  EXPECT_EQ(expand_scene_paths({a.string()}), pa);
  EXPECT_THROW(cmd_gen(cfg, "/dev/null/scenes"), Error);
  EXPECT_THROW(expand_scene_paths({(a / "missing.json").string()}), Error);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Commands, ZeroStepsCheckpointEqualsInit) {
  auto cfg = quick_config();
  cfg.steps = 0;
  const auto dir = fresh_dir("zero");
  const auto scenes = load_scenes(cmd_gen(cfg, dir / "scenes"), cfg);
  const auto r = cmd_train(cfg, scenes, dir / "ck.json", dir / "log.jsonl");
  EXPECT_TRUE(r.log.empty());
  auto [params, loaded_cfg] = load_model(dir / "ck.json");
  EXPECT_TRUE(params == init_params(cfg));
  EXPECT_EQ(to_json(loaded_cfg).dump(), to_json(cfg).dump());
  fs::remove_all(dir);
}

TEST(Commands, AblationFlagsAreIdentityAtStepZero) {
  const auto cfg = quick_config();
  const auto dir = fresh_dir("ablate");
  const auto scenes = load_scenes(cmd_gen(cfg, dir), cfg);
  auto params = init_params(cfg);
  const auto base = evaluate_objective(cfg, params, scenes[0], 0);
  for (auto [rag, qim] : {std::pair{false, true}, {true, false}, {false, false}}) {
    auto c = cfg;
    c.use_rag = rag;
    c.use_qim = qim;
    const auto o = evaluate_objective(c, params, scenes[0], 0);
    EXPECT_EQ(o.detection.total, base.detection.total);
    // Without RAG there are no relevance logits, so only the spatial term may differ.
    EXPECT_EQ(o.grounding->cls, base.grounding->cls);
    EXPECT_EQ(o.grounding->box, base.grounding->box);
    if (rag) {
      EXPECT_EQ(o.total, base.total);
    }
  }
  fs::remove_all(dir);
}

TEST(Commands, TrainLogsAndDivergenceNamesStep) {
  auto cfg = quick_config();
  const auto dir = fresh_dir("train");
  const auto scenes = load_scenes(cmd_gen(cfg, dir / "scenes"), cfg);
  auto r = cmd_train(cfg, scenes, dir / "ck.json", dir / "log.jsonl");
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log[1].scene, 1u);
  std::ifstream log(dir / "log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step"), lines);
    EXPECT_TRUE(j.contains("grd_spatial"));
    ++lines;
  }
  EXPECT_EQ(lines, 3u);

  cfg.optimizer.lr = 1e300;
  cfg.steps = 5;
  try {
    cmd_train(cfg, scenes, dir / "bad.json", dir / "bad.jsonl");
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train(cfg, r.params, {}), Error);
  fs::remove_all(dir);
}

TEST(Commands, CosineScheduleDecaysPerStep) {
  auto cfg = quick_config();
  const auto dir = fresh_dir("cosine");
  auto scenes = load_scenes(cmd_gen(cfg, dir), cfg);
  scenes.resize(1);
  scenes[0].instructions.resize(1);
  cfg.optimizer = {.kind = OptimizerKind::kSgd, .lr = 0.01, .schedule = LrSchedule::kCosine};
  cfg.steps = 2;
  auto cosine = init_params(cfg);
  train(cfg, cosine, scenes);
  // SGD keeps no state, so two one-step runs at the scheduled rates match.
  auto manual = init_params(cfg);
  cfg.optimizer.schedule = LrSchedule::kConstant;
  cfg.steps = 1;
  train(cfg, manual, scenes);
  cfg.optimizer.lr = cosine_lr(0.01, 1, 2);
  train(cfg, manual, scenes);
  for (const auto& name : cosine.names()) EXPECT_EQ(cosine.value(name), manual.value(name)) << name;
  fs::remove_all(dir);
}

TEST(Commands, EvalIsDeterministicAndReportsBothThresholds) {
  const auto cfg = quick_config();
  const auto dir = fresh_dir("eval");
  const auto paths = cmd_gen(cfg, dir / "scenes");
  cmd_train(cfg, load_scenes(paths, cfg), dir / "ck.json", dir / "log.jsonl");
  const auto ev = cmd_eval(dir / "ck.json", paths, {0.25, 0.5}, dir / "r1");
  cmd_eval(dir / "ck.json", paths, {0.25, 0.5}, dir / "r2");
  EXPECT_EQ(slurp(dir / "r1" / "report.json"), slurp(dir / "r2" / "report.json"));
  EXPECT_EQ(slurp(dir / "r1" / "report.txt"), slurp(dir / "r2" / "report.txt"));
  ASSERT_EQ(ev.grounding.size(), 2u);
  EXPECT_EQ(ev.grounding[0].iou_thresh, 0.25);
  EXPECT_EQ(ev.grounding[1].iou_thresh, 0.5);
  const auto table = slurp(dir / "r1" / "report.txt");
  EXPECT_NE(table.find("AP@25"), std::string::npos);
  EXPECT_NE(table.find("AP@50"), std::string::npos);
  // A nearly untrained model localizes almost nothing.
  EXPECT_LT(*ev.grounding[1].buckets.at("overall").ap, 0.2);
  EXPECT_THROW(cmd_eval(dir / "ck.json", paths, {0.0}, dir / "r3"), Error);
  EXPECT_THROW(cmd_eval(dir / "missing.json", paths, {0.25}, dir / "r3"), Error);
  fs::remove_all(dir);
}

TEST(GradSuite, PassesAndNegativeControlFails) {
  const auto rep = run_grad_suite(1e-5, 1e-4, 7);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
  EXPECT_LE(rep.max_rel_err, 1e-4);
  EXPECT_LE(rep.voxels, 10u);
  std::set<std::string> groups;
  for (const auto& g : rep.groups) groups.insert(g.group);
  for (const char* want : {"score.det", "score.grd", "qim.xi1", "qim.xi2", "rag.attn",
                           "rag.relevance", "decoder.layer0", "decoder.layer1", "head.box",
                           "head.det", "head.grd", "fusion.encoder", "fusion.fuse",
                           "decoder.norm_out", "text.proj"}) {
    EXPECT_TRUE(groups.count(want)) << want;
  }
  const auto table = grad_table(rep, 1e-4);
  EXPECT_NE(table.find("qim.xi1"), std::string::npos);
  EXPECT_NE(table.find("PASS"), std::string::npos);

  const auto bad = run_grad_suite(1e-5, 1e-4, 7, /*negative_control=*/true);
  EXPECT_FALSE(bad.pass);
  for (const auto& g : bad.groups) EXPECT_EQ(g.pass, g.group != "head.grd") << g.group;
}

TEST(Heatmap, Colormap) {
  EXPECT_EQ(heat_color(0.0), (std::array<unsigned char, 3>{128, 128, 128}));
  EXPECT_EQ(heat_color(1.0), (std::array<unsigned char, 3>{255, 0, 0}));
  EXPECT_EQ(heat_color(0.5), (std::array<unsigned char, 3>{192, 64, 64}));
  EXPECT_EQ(heat_color(7.0), heat_color(1.0));
}

TEST(Heatmap, NearestProjectedVoxel) {
  CameraIntrinsics k{10, 10, 2, 2, 5, 5};
  const CameraPose pose{Mat3::Identity(), Vec3::Zero()};
  // Two voxels: one projecting to pixel (2, 2), one to (4, 2).
  std::vector<Vec3> pts{{0.05, 0.05, 1.05}, {0.25, 0.05, 1.05}};
  const auto vox = voxelize(pts, nullptr, 0.1);
  const auto h = render_heatmap(vox, {0.0, 1.0}, k, pose);
  auto px = [&](std::size_t x, std::size_t y) {
    return std::array<unsigned char, 3>{h.rgb[(y * 5 + x) * 3], h.rgb[(y * 5 + x) * 3 + 1],
                                        h.rgb[(y * 5 + x) * 3 + 2]};
  };
  EXPECT_EQ(px(0, 0), heat_color(0.0));
  EXPECT_EQ(px(4, 4), heat_color(1.0));
  EXPECT_THROW(render_heatmap(vox, {0.5}, k, pose), Error);
}

TEST(Heatmap, ZeroLogitsGiveUniformMidColor) {
  auto cfg = quick_config();
  cfg.steps = 0;
  const auto dir = fresh_dir("heat");
  const auto paths = cmd_gen(cfg, dir / "scenes");
  auto r = cmd_train(cfg, load_scenes(paths, cfg), dir / "ck.json", dir / "log.jsonl");
  for (const char* n : {"rag.relevance.l1.weight", "rag.relevance.l1.bias"}) {
    r.params.set(n, Tensor::zeros(r.params.value(n).shape()));
  }
  save_checkpoint(dir / "zero.json", r.params, checkpoint_meta(cfg, 0));
  const auto f = cmd_heatmap(dir / "zero.json", paths[0], 1, 0, dir / "out" / "h");
  const auto ppm = slurp(f.image);
  const std::string header = "P6\n64 48\n255\n";
  ASSERT_EQ(ppm.substr(0, header.size()), header);
  ASSERT_EQ(ppm.size(), header.size() + 64 * 48 * 3);
  for (std::size_t i = header.size(); i < ppm.size(); i += 3) {
    ASSERT_EQ(static_cast<unsigned char>(ppm[i]), 192);
    ASSERT_EQ(static_cast<unsigned char>(ppm[i + 1]), 64);
  }
  const auto scenes = load_scenes({paths[0]}, cfg);
  std::ifstream csv(f.csv);
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "x,y,z,score");
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, scenes[0].input.voxels.size());

  EXPECT_THROW(cmd_heatmap(dir / "zero.json", paths[0], 4, 0, dir / "h2"), Error);
  EXPECT_THROW(cmd_heatmap(dir / "zero.json", paths[0], 0, 99, dir / "h2"), Error);
  auto no_rag = cfg;
  no_rag.use_rag = false;
  save_checkpoint(dir / "norag.json", r.params, checkpoint_meta(no_rag, 0));
  EXPECT_THROW(cmd_heatmap(dir / "norag.json", paths[0], 0, 0, dir / "h2"), Error);
  fs::remove_all(dir);
}

TEST(Heatmap, TrainedModelIsRedderInsideTarget) {
  RunConfig cfg;
  cfg.scene_count = 1;
  cfg.steps = 150;
  const auto dir = fresh_dir("heat_trained");
  const auto paths = cmd_gen(cfg, dir / "scenes");
  const auto scenes = load_scenes(paths, cfg);
  ASSERT_FALSE(scenes[0].instructions.empty());
  cmd_train(cfg, scenes, dir / "ck.json", dir / "log.jsonl");
  const auto f = cmd_heatmap(dir / "ck.json", paths[0], 0, 0, dir / "h");
  const auto& inside = scenes[0].instructions[0].inside;
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < f.scores.size(); ++i) {
    if (inside[i] > 0.5) {
      in += f.scores[i];
      ++n_in;
    } else {
      out += f.scores[i];
      ++n_out;
    }
  }
  ASSERT_GT(n_in, 0u);
  EXPECT_GT(in / n_in, out / n_out);
  fs::remove_all(dir);
}
