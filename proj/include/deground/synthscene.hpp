#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deground/boxes9dof.hpp"
#include "deground/geometry.hpp"
#include "deground/rng.hpp"

// Deterministic synthetic rooms: boxes on the floor (a few classes mounted on
// walls), a ring of inward-looking cameras, analytic depth, stub features and
// templated referring instructions.

namespace deground {

// --- vocabulary ---------------------------------------------------------------

inline constexpr std::array<const char*, 8> kClassNames = {
    "chair", "table", "sofa", "cabinet", "lamp", "bed", "desk", "shelf"};

enum class Relation { kNearest, kLeftOf, kRightOf, kAbove };
inline constexpr std::array<const char*, 4> kRelationWords = {"nearest-to", "left-of",
                                                              "right-of", "above"};

/// Word ids: 0 "the", 1..8 class names, 9..12 relations.
inline constexpr std::size_t kWordThe = 0;
inline constexpr std::size_t kVocabSize = 1 + kClassNames.size() + kRelationWords.size();
inline std::size_t class_word(std::size_t cls) { return 1 + cls; }
inline std::size_t relation_word(Relation r) {
  return 1 + kClassNames.size() + static_cast<std::size_t>(r);
}

inline std::string word_text(std::size_t id) {
  if (id == kWordThe) return "the";
  if (id <= kClassNames.size()) return kClassNames[id - 1];
  if (id < kVocabSize) return kRelationWords[id - 1 - kClassNames.size()];
  throw Error("vocabulary: unknown word id " + std::to_string(id));
}

// --- scene --------------------------------------------------------------------

struct SceneObject {
  Box9DoF box;
  std::size_t label = 0;
  bool operator==(const SceneObject&) const = default;
};

struct SceneCamera {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

inline bool operator==(const SceneCamera& a, const SceneCamera& b) {
  const auto& x = a.intrinsics;
  const auto& y = b.intrinsics;
  return x.fx == y.fx && x.fy == y.fy && x.cx == y.cx && x.cy == y.cy && x.width == y.width &&
         x.height == y.height && a.pose.rotation == b.pose.rotation &&
         a.pose.translation == b.pose.translation;
}

struct Scene {
  Vec3 room = Vec3(4.0, 4.0, 2.5);  // axis-aligned [0, room]
  std::vector<SceneObject> objects;
  std::vector<SceneCamera> cameras;
  std::uint64_t seed = 0;
  bool operator==(const Scene&) const = default;
};

struct SceneConfig {
  std::size_t min_objects = 3;
  std::size_t max_objects = 6;
  std::size_t num_classes = kClassNames.size();
  Vec3 room = Vec3(4.0, 4.0, 2.5);
  std::size_t cameras = 4;
  std::size_t image_width = 64;
  std::size_t image_height = 48;
  double focal = 40.0;
  /// Force at least two objects of one class (every scene gets a hard target).
  bool require_duplicate = false;
  std::size_t max_tries = 2000;

  void validate() const {
    if (min_objects > max_objects) throw Error("scene config: min_objects > max_objects");
    if (num_classes == 0 || num_classes > kClassNames.size()) {
      throw Error("scene config: num_classes must be in [1, " +
                  std::to_string(kClassNames.size()) + "]");
    }
    if (cameras == 0) throw Error("scene config: need at least one camera");
    if (require_duplicate && min_objects < 2) {
      throw Error("scene config: require_duplicate needs min_objects >= 2");
    }
    if (!(room.minCoeff() > 0.0)) throw Error("scene config: room extents must be > 0");
  }
};

namespace detail {

struct ClassPrior {
  Vec3 size;
  double min_z = 0.0, max_z = 0.0;  // center height range for mounted classes
};

/// Nominal (l, w, h); lamp and shelf hang on walls or ceilings.
inline ClassPrior class_prior(std::size_t cls) {
  static const std::array<ClassPrior, 8> priors = {{
      {{0.5, 0.5, 0.9}},
      {{1.2, 0.8, 0.75}},
      {{1.8, 0.9, 0.85}},
      {{0.8, 0.5, 1.2}},
      {{0.35, 0.35, 0.5}, 1.6, 2.1},
      {{2.0, 1.5, 0.6}},
      {{1.2, 0.6, 0.75}},
      {{0.9, 0.35, 0.4}, 1.2, 1.9},
  }};
  return priors.at(cls);
}

inline bool inside_room(const Box9DoF& b, const Vec3& room) {
  for (const auto& c : box_corners(b)) {
    if ((c.array() < 0.0).any() || (c.array() > room.array()).any()) return false;
  }
  return true;
}

/// Camera-to-world rotation looking from `eye` at `target`, world z up,
/// camera x right, y down, z forward.
inline Mat3 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 f = (target - eye).normalized();
  const Vec3 r = f.cross(Vec3::UnitZ()).normalized();
  const Vec3 d = f.cross(r);
  Mat3 m;
  m.col(0) = r;
  m.col(1) = d;
  m.col(2) = f;
  return m;
}

}  // namespace detail

/// Rejection-samples non-overlapping boxes inside the room and places the
/// cameras on a ring outside it, all looking at the room center.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Scene s;
  s.room = cfg.room;
  s.seed = seed;
  // A layout whose objects cannot all be placed (e.g. two beds in a small
  // room) is discarded and redrawn, labels included.
  constexpr std::size_t kLayouts = 50;
  bool done = false;
  for (std::size_t layout = 0; layout < kLayouts && !done; ++layout) {
    const std::size_t n = cfg.min_objects + rng.index(cfg.max_objects - cfg.min_objects + 1);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(rng.index(cfg.num_classes));
    if (cfg.require_duplicate) labels[1] = labels[0];

    std::vector<SceneObject> objects;
    for (std::size_t i = 0; i < n; ++i) {
      const auto prior = detail::class_prior(labels[i]);
      bool placed = false;
      for (std::size_t t = 0; t < cfg.max_tries && !placed; ++t) {
        Vec3 e = prior.size;
        for (int a = 0; a < 3; ++a) e[a] *= rng.uniform(0.85, 1.15);
        const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const double z = prior.max_z > 0.0 ? rng.uniform(prior.min_z, prior.max_z) : 0.5 * e.z();
        const Box9DoF box(rng.uniform(0.0, cfg.room.x()), rng.uniform(0.0, cfg.room.y()), z, e.x(),
                          e.y(), e.z(), yaw);
        if (!detail::inside_room(box, cfg.room)) continue;
        bool clear = true;
        for (const auto& o : objects) clear = clear && box_iou_exact(box, o.box).iou == 0.0;
        if (!clear) continue;
        objects.push_back({box, labels[i]});
        placed = true;
      }
      if (!placed) break;
    }
    if (objects.size() == n) {
      s.objects = std::move(objects);
      done = true;
    }
  }
  if (!done) {
    throw Error("generate_scene: no layout fits the room after " + std::to_string(kLayouts) +
                " attempts (seed " + std::to_string(seed) + ")");
  }

  const Vec3 center(0.5 * cfg.room.x(), 0.5 * cfg.room.y(), 0.6);
  const double radius = 0.5 * std::hypot(cfg.room.x(), cfg.room.y()) + 2.0;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  CameraIntrinsics intr{cfg.focal,
                        cfg.focal,
                        0.5 * static_cast<double>(cfg.image_width - 1),
                        0.5 * static_cast<double>(cfg.image_height - 1),
                        cfg.image_width,
                        cfg.image_height};
  intr.validate();
  for (std::size_t c = 0; c < cfg.cameras; ++c) {
    const double th = phase + 2.0 * std::numbers::pi * static_cast<double>(c) /
                                  static_cast<double>(cfg.cameras);
    const Vec3 eye(center.x() + radius * std::cos(th), center.y() + radius * std::sin(th), 2.2);
    s.cameras.push_back({intr, {detail::look_at(eye, center), eye}});
  }
  return s;
}

// --- rendering ----------------------------------------------------------------

struct RenderedView {
  DepthMap depth;
  std::vector<int> object;  // per pixel, index of the hit object or -1
};

/// Ray parameter where `dir` from `origin` first enters `box` (slab test in
/// the box frame), if the entry is in front of the origin.
inline std::optional<double> ray_box_entry(const Vec3& origin, const Vec3& dir,
                                           const Box9DoF& box) {
  const Mat3 rt = box.rotation().transpose();
  const Vec3 o = rt * (origin - box.center());
  const Vec3 d = rt * dir;
  const Vec3 h = box.half();
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > h[a]) return std::nullopt;
      continue;
    }
    double ta = (-h[a] - o[a]) / d[a], tb = (h[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 0.0) return std::nullopt;
  return t0;
}

/// Nearest box hit per pixel. Rays are ((u-cx)/fx, (v-cy)/fy, 1) in the
/// camera frame, so the ray parameter is the depth.
inline RenderedView render_view(const Scene& scene, std::size_t view) {
  if (view >= scene.cameras.size()) {
    throw Error("render: view " + std::to_string(view) + " out of range (" +
                std::to_string(scene.cameras.size()) + " cameras)");
  }
  const auto& cam = scene.cameras[view];
  const auto& k = cam.intrinsics;
  RenderedView out{DepthMap(k.width, k.height), std::vector<int>(k.width * k.height, -1)};
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      const Vec3 dc((static_cast<double>(u) - k.cx) / k.fx, (static_cast<double>(v) - k.cy) / k.fy,
                    1.0);
      const Vec3 dir = cam.pose.rotation * dc;
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        auto t = ray_box_entry(cam.pose.translation, dir, scene.objects[i].box);
        if (t && *t < best) {
          best = *t;
          hit = static_cast<int>(i);
        }
      }
      if (hit >= 0) {
        out.depth.set(u, v, best);
        out.object[v * k.width + u] = hit;
      }
    }
  }
  return out;
}

inline DepthMap render_depth(const Scene& scene, std::size_t view) {
  return render_view(scene, view).depth;
}

// --- stub embeddings ----------------------------------------------------------

/// Fixed random tables standing in for pretrained text and image backbones.
struct StubEmbeddings {
  Tensor words;    // vocab x word_dim
  Tensor classes;  // classes x (view_channels - 2)
  std::size_t view_channels = 0;

  static StubEmbeddings make(std::size_t word_dim, std::size_t view_channels,
                             std::uint64_t seed = 0x57ab5eedULL) {
    if (view_channels < 3) throw Error("stub embeddings: view_channels must be >= 3");
    Rng rng(seed);
    std::vector<double> w(kVocabSize * word_dim), c(kClassNames.size() * (view_channels - 2));
    for (auto& x : w) x = rng.normal();
    for (auto& x : c) x = rng.normal();
    return {Tensor::matrix(kVocabSize, word_dim, std::move(w)),
            Tensor::matrix(kClassNames.size(), view_channels - 2, std::move(c)), view_channels};
  }

  Tensor word_vectors(const std::vector<std::size_t>& tokens) const {
    if (tokens.empty()) throw Error("stub embeddings: empty token list");
    const std::size_t d = words.cols();
    std::vector<double> out;
    for (auto t : tokens) {
      if (t >= words.rows()) throw Error("stub embeddings: word id out of range");
      auto row = words.row_vector(t);
      out.insert(out.end(), row.begin(), row.end());
    }
    return Tensor::matrix(tokens.size(), d, std::move(out));
  }
};

/// Per-pixel stub image feature: class embedding of the hit object, depth
/// scaled by `depth_scale`, and a hit flag; zero where nothing is hit.
inline ViewFeatureMap stub_view_features(const Scene& scene, std::size_t view,
                                         const RenderedView& r, const StubEmbeddings& stub,
                                         double depth_scale) {
  const auto& k = scene.cameras.at(view).intrinsics;
  const std::size_t c = stub.view_channels;
  std::vector<double> f(k.height * k.width * c, 0.0);
  for (std::size_t p = 0; p < k.width * k.height; ++p) {
    const int obj = r.object[p];
    if (obj < 0) continue;
    const auto label = scene.objects[static_cast<std::size_t>(obj)].label;
    for (std::size_t j = 0; j + 2 < c; ++j) f[p * c + j] = stub.classes.at(label, j);
    f[p * c + c - 2] = r.depth.values[p] / depth_scale;
    f[p * c + c - 1] = 1.0;
  }
  return {Tensor({k.height, k.width, c}, std::move(f)), k, scene.cameras[view].pose};
}

// --- instructions -------------------------------------------------------------

struct Instruction {
  std::vector<std::size_t> tokens;
  std::size_t target = 0;
  bool hard = false;
  bool view_dep = false;
  bool operator==(const Instruction&) const = default;

  std::string text() const {
    std::string s;
    for (auto t : tokens) s += (s.empty() ? "" : " ") + word_text(t);
    return s;
  }
};

namespace detail {

inline double vertical_min(const Box9DoF& b) {
  double z = std::numeric_limits<double>::infinity();
  for (const auto& c : box_corners(b)) z = std::min(z, c.z());
  return z;
}
inline double vertical_max(const Box9DoF& b) {
  double z = -std::numeric_limits<double>::infinity();
  for (const auto& c : box_corners(b)) z = std::max(z, c.z());
  return z;
}

/// True iff `rel` to `anchor` holds for `target` and for no other member of
/// `group` (target included in group). Horizontal relations use camera 0's
/// x axis and need a 0.1 m margin; nearest-to needs a 0.2 m distance margin.
inline bool relation_unique(const Scene& s, Relation rel, std::size_t target, std::size_t anchor,
                            const std::vector<std::size_t>& group) {
  const auto& a = s.objects[anchor].box;
  const auto& pose = s.cameras.at(0).pose;
  const double ax = pose.to_camera(a.center()).x();
  auto holds = [&](std::size_t i, double margin) {
    const auto& b = s.objects[i].box;
    switch (rel) {
      case Relation::kLeftOf: return pose.to_camera(b.center()).x() < ax - margin;
      case Relation::kRightOf: return pose.to_camera(b.center()).x() > ax + margin;
      case Relation::kAbove: return vertical_min(b) >= vertical_max(a) + margin;
      case Relation::kNearest: return false;
    }
    return false;
  };
  if (rel == Relation::kNearest) {
    const double dt = (s.objects[target].box.center() - a.center()).norm();
    for (auto i : group) {
      if (i != target && (s.objects[i].box.center() - a.center()).norm() < dt + 0.2) return false;
    }
    return true;
  }
  if (!holds(target, 0.1)) return false;
  for (auto i : group) {
    if (i != target && holds(i, 0.0)) return false;
  }
  return true;
}

}  // namespace detail

/// "the <class>" for a unique class, otherwise "the <class> <relation> the
/// <anchor-class>" with a relation that singles out the target. Hard iff the
/// target has at least one same-class distractor.
inline Instruction make_instruction(const Scene& scene, std::size_t target, std::uint64_t seed) {
  if (target >= scene.objects.size()) {
    throw Error("make_instruction: target " + std::to_string(target) + " out of range");
  }
  const auto label = scene.objects[target].label;
  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].label == label) group.push_back(i);
  }
  Instruction ins;
  ins.target = target;
  ins.hard = group.size() > 1;
  ins.tokens = {kWordThe, class_word(label)};
  if (!ins.hard) return ins;

  std::vector<std::pair<Relation, std::size_t>> options;
  for (std::size_t a = 0; a < scene.objects.size(); ++a) {
    if (scene.objects[a].label == label) continue;
    for (auto rel : {Relation::kNearest, Relation::kLeftOf, Relation::kRightOf, Relation::kAbove}) {
      if (detail::relation_unique(scene, rel, target, a, group)) options.emplace_back(rel, a);
    }
  }
  if (options.empty()) {
    throw Error("make_instruction: no relation singles out object " + std::to_string(target));
  }
  Rng rng(Rng::mix(seed, target));
  const auto [rel, anchor] = options[rng.index(options.size())];
  ins.tokens.push_back(relation_word(rel));
  ins.tokens.push_back(kWordThe);
  ins.tokens.push_back(class_word(scene.objects[anchor].label));
  ins.view_dep = rel != Relation::kNearest;
  return ins;
}

/// One instruction per object that admits one, in object order.
inline std::vector<Instruction> make_instructions(const Scene& scene, std::uint64_t seed) {
  std::vector<Instruction> out;
  for (std::size_t t = 0; t < scene.objects.size(); ++t) {
    try {
      out.push_back(make_instruction(scene, t, seed));
    } catch (const Error&) {
    }
  }
  return out;
}

// --- scene files --------------------------------------------------------------

struct SceneFile {
  Scene scene;
  std::vector<Instruction> instructions;
};

namespace detail {

using nlohmann::json;

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

/// Reads a required field, reporting the full path on failure.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>* warnings)
      : j_(j), path_(std::move(path)), warnings_(warnings) {}

  Reader at(const std::string& key) const {
    if (!j_.is_object()) fail("expected an object");
    if (!j_.contains(key)) throw Error("scene file: missing field '" + join(key) + "'");
    return Reader(j_.at(key), join(key), warnings_);
  }
  Reader at(std::size_t i) const {
    return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]", warnings_);
  }
  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }
  double number() const {
    if (!j_.is_number()) fail("expected a number");
    return j_.get<double>();
  }
  std::uint64_t u64() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0)) {
      fail("expected a non-negative integer");
    }
    return j_.get<std::uint64_t>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  Vec3 vec3() const {
    if (size() != 3) fail("expected 3 numbers");
    return {at(0).number(), at(1).number(), at(2).number()};
  }
  /// Warns about keys outside `known`.
  void expect_keys(std::initializer_list<const char*> known) const {
    if (!warnings_ || !j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      bool ok = false;
      for (const char* k : known) ok = ok || key == k;
      if (!ok) warnings_->push_back("scene file: ignoring unknown field '" + join(key) + "'");
    }
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw Error("scene file: field '" + path_ + "': " + what);
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
  std::vector<std::string>* warnings_;
};

}  // namespace detail

inline nlohmann::json scene_to_json(const SceneFile& f) {
  using detail::json;
  using detail::vec_json;
  json objects = json::array();
  for (const auto& o : f.scene.objects) {
    objects.push_back({{"center", vec_json(o.box.center())},
                       {"size", vec_json(o.box.extents())},
                       {"angles", vec_json(o.box.angles())},
                       {"class", kClassNames.at(o.label)}});
  }
  json cameras = json::array();
  for (const auto& c : f.scene.cameras) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) rot.push_back(c.pose.rotation(r, col));
    cameras.push_back({{"fx", c.intrinsics.fx},
                       {"fy", c.intrinsics.fy},
                       {"cx", c.intrinsics.cx},
                       {"cy", c.intrinsics.cy},
                       {"w", c.intrinsics.width},
                       {"h", c.intrinsics.height},
                       {"rotation", rot},
                       {"translation", vec_json(c.pose.translation)}});
  }
  json instructions = json::array();
  for (const auto& ins : f.instructions) {
    instructions.push_back({{"tokens", ins.tokens},
                            {"text", ins.text()},
                            {"target", ins.target},
                            {"difficulty", ins.hard ? "hard" : "easy"},
                            {"view_dep", ins.view_dep}});
  }
  return {{"scene",
           {{"room", vec_json(f.scene.room)},
            {"objects", objects},
            {"cameras", cameras},
            {"seed", f.scene.seed}}},
          {"instructions", instructions}};
}

inline std::size_t class_from_name(const std::string& name, const detail::Reader& where) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (name == kClassNames[i]) return i;
  }
  where.fail("unknown class '" + name + "'");
}

/// Parses a scene document; unknown fields are reported in `warnings`.
inline SceneFile scene_from_json(const nlohmann::json& j, std::vector<std::string>* warnings) {
  detail::Reader root(j, "", warnings);
  root.expect_keys({"scene", "instructions"});
  SceneFile f;
  const auto s = root.at("scene");
  s.expect_keys({"room", "objects", "cameras", "seed"});
  f.scene.room = s.at("room").vec3();
  f.scene.seed = s.at("seed").u64();
  const auto objs = s.at("objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto o = objs.at(i);
    o.expect_keys({"center", "size", "angles", "class"});
    const Vec3 size = o.at("size").vec3();
    if (!(size.minCoeff() > 0.0)) o.at("size").fail("extents must be > 0");
    f.scene.objects.push_back({Box9DoF(o.at("center").vec3(), size, o.at("angles").vec3()),
                               class_from_name(o.at("class").string(), o.at("class"))});
  }
  const auto cams = s.at("cameras");
  if (cams.size() == 0) cams.fail("need at least one camera");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const auto c = cams.at(i);
    c.expect_keys({"fx", "fy", "cx", "cy", "w", "h", "rotation", "translation"});
    SceneCamera cam;
    cam.intrinsics = {c.at("fx").number(), c.at("fy").number(), c.at("cx").number(),
                      c.at("cy").number(), c.at("w").u64(),     c.at("h").u64()};
    const auto rot = c.at("rotation");
    if (rot.size() != 9) rot.fail("expected 9 numbers (row-major 3x3)");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) cam.pose.rotation(r, col) = rot.at(r * 3 + col).number();
    cam.pose.translation = c.at("translation").vec3();
    try {
      cam.intrinsics.validate();
      cam.pose.validate();
    } catch (const Error& e) {
      c.fail(e.what());
    }
    f.scene.cameras.push_back(cam);
  }
  const auto list = root.at("instructions");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto r = list.at(i);
    r.expect_keys({"tokens", "text", "target", "difficulty", "view_dep"});
    Instruction ins;
    const auto toks = r.at("tokens");
    if (toks.size() == 0) toks.fail("empty token list");
    for (std::size_t t = 0; t < toks.size(); ++t) {
      const auto id = toks.at(t).u64();
      if (id >= kVocabSize) toks.at(t).fail("word id out of range");
      ins.tokens.push_back(id);
    }
    ins.target = r.at("target").u64();
    if (ins.target >= f.scene.objects.size()) r.at("target").fail("no such object");
    const auto diff = r.at("difficulty").string();
    if (diff != "easy" && diff != "hard") r.at("difficulty").fail("expected 'easy' or 'hard'");
    ins.hard = diff == "hard";
    ins.view_dep = r.at("view_dep").boolean();
    f.instructions.push_back(std::move(ins));
  }
  return f;
}

inline void save_scene_file(const std::filesystem::path& path, const SceneFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("scene file: cannot write '" + path.string() + "'");
  out << scene_to_json(f).dump(2) << '\n';
  if (!out) throw Error("scene file: write failed for '" + path.string() + "'");
}

inline SceneFile load_scene_file(const std::filesystem::path& path,
                                 std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("scene file: cannot read '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("scene file: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return scene_from_json(j, warnings);
}

}  // namespace deground
