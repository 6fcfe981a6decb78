#pragma once

#include <map>
#include <string>
#include <vector>

#include "deground/app/pipeline.hpp"
#include "deground/gradcheck.hpp"

// End-to-end finite-difference check of every learnable module on a tiny
// random scene. Parameters are randomized (no zero-initialized branches) and
// the query selections and assignments of the base point are held fixed.

namespace deground::app {

struct GroupResult {
  std::string group;
  std::size_t params = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradSuiteReport {
  std::vector<GroupResult> groups;
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t voxels = 0;
};

inline RunConfig tiny_config() {
  RunConfig c;
  c.model.dim = 8;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.ffn = 16;
  c.model.head_hidden = 8;
  c.model.num_classes = 3;
  c.model.word_dim = 6;
  c.model.voxel_in = 6;
  c.model.view_channels = 5;
  c.model.k_det = 4;
  c.model.k_grd = 3;
  c.scene.num_classes = 3;
  c.weights.spatial = 0.5;  // large enough that the relevance head matters numerically
  return c;
}

/// A hand-built 8-voxel scene with random features, two boxes and one
/// instruction of four tokens.
inline PreparedScene tiny_scene(const RunConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  PreparedScene ps;
  ps.name = "tiny";
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) {
    pts.emplace_back(0.15 * (i % 2) + 0.07, 0.15 * ((i / 2) % 2) + 0.07, 0.15 * (i / 4) + 0.07);
  }
  std::vector<double> f(8 * cfg.model.voxel_in);
  for (auto& x : f) x = rng.normal();
  const Tensor feats = Tensor::matrix(8, cfg.model.voxel_in, std::move(f));
  ps.input.voxels = voxelize(pts, &feats, 0.15);
  std::vector<double> s(8 * cfg.model.view_channels);
  for (auto& x : s) x = rng.normal();
  ps.input.sampled2d = Tensor::matrix(8, cfg.model.view_channels, std::move(s));

  ps.objects = {{Box9DoF(0.1, 0.1, 0.1, 0.2, 0.25, 0.2, 0.3), 1},
                {Box9DoF(0.25, 0.2, 0.25, 0.15, 0.2, 0.3, -0.4, 0.1, 0.2), 2}};
  std::vector<double> labels(8 * cfg.model.num_classes, 0.0);
  for (std::size_t i = 0; i < 8; ++i)
    for (const auto& o : ps.objects)
      if (contains_point(o.box, ps.input.voxels.center(i)))
        labels[i * cfg.model.num_classes + o.label] = 1.0;
  ps.class_labels = Tensor::matrix(8, cfg.model.num_classes, std::move(labels));

  std::vector<double> w(4 * cfg.model.word_dim);
  for (auto& x : w) x = rng.normal();
  Instruction ins{{0, 1, 2, 3}, 0, true, true};
  ps.instructions.push_back({ins, Tensor::matrix(4, cfg.model.word_dim, std::move(w)),
                             inside_labels(ps.input.voxels, ps.objects[0].box), ps.objects[0]});
  return ps;
}

/// Replaces every parameter with N(0, 0.5^2) draws, layer-norm gains with 1 + N(0, 0.1^2).
inline void randomize(ParamStore& params, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& name : params.names()) {
    const bool gain = name.size() > 5 && name.ends_with(".gain");
    params.update(name, [&](std::span<double> v) {
      for (auto& x : v) x = gain ? 1.0 + 0.1 * rng.normal() : 0.5 * rng.normal();
    });
  }
}

/// Parameter group of a name: its first two dotted components, e.g.
/// "decoder.layer0", "rag.attn", "head.box".
inline std::string param_group(const std::string& name) {
  const auto a = name.find('.');
  if (a == std::string::npos) return name;
  const auto b = name.find('.', a + 1);
  return b == std::string::npos ? name : name.substr(0, b);
}

/// Scalar op y = sum(x^2) whose backward is deliberately wrong (3x instead
/// of 2x). Added to the loss only as a negative control.
inline Var faulty_square_sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  auto xid = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [xid](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& X = t.value(xid);
    auto gx = t.grad(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * 3.0 * X[i];
  });
}

inline GradSuiteReport run_grad_suite(double eps, double tol, std::uint64_t seed,
                                      bool negative_control = false) {
  RunConfig cfg = tiny_config();
  ParamStore params;
  Rng init(seed);
  init_model(params, cfg.model, init);
  randomize(params, Rng::mix(seed, 1));
  const auto ps = tiny_scene(cfg, Rng::mix(seed, 2));

  FrozenChoices frozen;
  {
    Tape tape(params);
    frozen = joint_objective(tape, cfg, ps, &ps.instructions[0]).choices;
  }
  LossFn fn = [&](Tape& tape) {
    auto obj = joint_objective(tape, cfg, ps, &ps.instructions[0], &frozen);
    if (!negative_control) return obj.total_var;
    return add(obj.total_var, faulty_square_sum(tape.param("head.grd.l1.bias")));
  };
  GradCheckOptions opt;
  opt.eps = eps;
  opt.tol = tol;
  const auto rep = grad_check(fn, params, opt);

  GradSuiteReport out;
  out.voxels = ps.input.voxels.size();
  std::map<std::string, GroupResult> groups;
  for (const auto& e : rep.entries) {
    auto& g = groups[param_group(e.name)];
    g.group = param_group(e.name);
    g.params += e.checked;
    g.max_rel_err = std::max(g.max_rel_err, e.max_rel_err);
    g.pass = g.pass && e.pass;
  }
  for (auto& [_, g] : groups) out.groups.push_back(g);
  out.max_rel_err = rep.max_rel_err;
  out.pass = rep.pass;
  return out;
}

}  // namespace deground::app
