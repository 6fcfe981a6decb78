#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deground/linalg.hpp"
#include "deground/nn.hpp"
#include "deground/tensor.hpp"

// Camera model: pinhole, pixel (u, v) at integer coordinates, camera frame
// x right / y down / z forward. Depth is the camera-frame z coordinate.

namespace deground {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  std::size_t width = 1, height = 1;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw Error("camera: focal lengths must be > 0");
    if (!(cx >= 0.0 && cx < static_cast<double>(width) && cy >= 0.0 &&
          cy < static_cast<double>(height))) {
      throw Error("camera: principal point outside the image");
    }
  }
};

/// Camera-to-world rigid transform.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const {
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
      throw Error("camera pose: rotation is not orthonormal");
    }
    if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
      throw Error("camera pose: rotation determinant is not +1");
    }
  }
  Vec3 to_world(const Vec3& pc) const { return rotation * pc + translation; }
  Vec3 to_camera(const Vec3& pw) const { return rotation.transpose() * (pw - translation); }
};

struct DepthMap {
  std::size_t width = 0, height = 0;
  std::vector<double> values;        // row-major, meters
  std::vector<std::uint8_t> valid;   // 1 where values[i] is a measurement

  DepthMap() = default;
  DepthMap(std::size_t w, std::size_t h)
      : width(w), height(h), values(w * h, 0.0), valid(w * h, 0) {}

  double at(std::size_t u, std::size_t v) const { return values[v * width + u]; }
  bool is_valid(std::size_t u, std::size_t v) const { return valid[v * width + u] != 0; }
  void set(std::size_t u, std::size_t v, double d) {
    if (!(d > 0.0) || !std::isfinite(d)) throw Error("depth map: depth must be positive and finite");
    values[v * width + u] = d;
    valid[v * width + u] = 1;
  }
};

/// World points of every valid pixel, camera point ((u-cx)d/fx, (v-cy)d/fy, d)
/// mapped through the pose. Row-major pixel order.
inline std::vector<Vec3> backproject_depth(const DepthMap& depth, const CameraIntrinsics& cam,
                                           const CameraPose& pose) {
  std::vector<Vec3> out;
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      if (!depth.is_valid(u, v)) continue;
      const double d = depth.at(u, v);
      const Vec3 pc((static_cast<double>(u) - cam.cx) * d / cam.fx,
                    (static_cast<double>(v) - cam.cy) * d / cam.fy, d);
      out.push_back(pose.to_world(pc));
    }
  }
  if (out.empty()) throw Error("backproject_depth: no valid pixels");
  return out;
}

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;  // camera-frame z
  bool in_bounds = false;
  bool in_front = false;
};

inline Projection project_point(const Vec3& p, const CameraIntrinsics& cam,
                                const CameraPose& pose) {
  const Vec3 pc = pose.to_camera(p);
  Projection out;
  out.depth = pc.z();
  out.in_front = pc.z() > 0.0;
  if (!out.in_front) return out;
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  // Pixel i covers [i - 0.5, i + 0.5).
  out.in_bounds = out.u >= -0.5 && out.u < static_cast<double>(cam.width) - 0.5 &&
                  out.v >= -0.5 && out.v < static_cast<double>(cam.height) - 0.5;
  return out;
}

inline std::vector<Projection> project_points(std::span<const Vec3> points,
                                              const CameraIntrinsics& cam,
                                              const CameraPose& pose) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, cam, pose));
  return out;
}

/// Per-view 2D feature grid (H x W x C, row-major) at image resolution,
/// together with the camera that produced it.
struct ViewFeatureMap {
  Tensor features;
  CameraIntrinsics camera;
  CameraPose pose;

  std::size_t height() const { return features.dim(0); }
  std::size_t width() const { return features.dim(1); }
  std::size_t channels() const { return features.dim(2); }
};

struct FeatureSample {
  std::vector<double> value;
  bool valid = false;
};

/// Bilinear blend of the four cells around (u, v); invalid outside
/// [0, W-1] x [0, H-1].
inline FeatureSample bilinear_sample(const ViewFeatureMap& fm, double u, double v) {
  const std::size_t w = fm.width(), h = fm.height(), c = fm.channels();
  FeatureSample out;
  out.value.assign(c, 0.0);
  if (!(u >= 0.0 && v >= 0.0 && u <= static_cast<double>(w) - 1.0 &&
        v <= static_cast<double>(h) - 1.0)) {
    return out;
  }
  const auto x0 = static_cast<std::size_t>(std::floor(u));
  const auto y0 = static_cast<std::size_t>(std::floor(v));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = u - static_cast<double>(x0), ay = v - static_cast<double>(y0);
  const auto data = fm.features.data();
  auto cell = [&](std::size_t x, std::size_t y, double weight) {
    if (weight == 0.0) return;
    const std::size_t base = (y * w + x) * c;
    for (std::size_t k = 0; k < c; ++k) out.value[k] += weight * data[base + k];
  };
  cell(x0, y0, (1 - ax) * (1 - ay));
  cell(x1, y0, ax * (1 - ay));
  cell(x0, y1, (1 - ax) * ay);
  cell(x1, y1, ax * ay);
  out.valid = true;
  return out;
}

using VoxelIndex = std::array<std::int64_t, 3>;

/// Occupied voxels in lexicographic index order. coords are voxel centers
/// (index + 0.5) * voxel_size; features are pooled per voxel.
struct VoxelFeatureSet {
  Tensor coords;    // N x 3
  Tensor features;  // N x C
  double voxel_size = 0.0;
  std::vector<VoxelIndex> indices;

  std::size_t size() const { return indices.size(); }
  Vec3 center(std::size_t i) const {
    return {coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)};
  }
};

/// Buckets points by floor(p / voxel_size). With point features the voxel
/// feature is their mean; without, a single occupancy-count channel.
inline VoxelFeatureSet voxelize(std::span<const Vec3> points, const Tensor* point_features,
                                double voxel_size) {
  if (!(voxel_size > 0.0)) throw Error("voxelize: voxel_size must be > 0");
  if (points.empty()) throw Error("voxelize: no points");
  if (point_features && point_features->rows() != points.size()) {
    throw Error("voxelize: point feature rows do not match point count");
  }
  const std::size_t c = point_features ? point_features->cols() : 1;
  std::map<VoxelIndex, std::pair<std::size_t, std::vector<double>>> buckets;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VoxelIndex idx{static_cast<std::int64_t>(std::floor(points[i].x() / voxel_size)),
                         static_cast<std::int64_t>(std::floor(points[i].y() / voxel_size)),
                         static_cast<std::int64_t>(std::floor(points[i].z() / voxel_size))};
    auto& [count, sum] = buckets[idx];
    if (sum.empty()) sum.assign(c, 0.0);
    ++count;
    if (point_features) {
      for (std::size_t k = 0; k < c; ++k) sum[k] += point_features->at(i, k);
    }
  }
  VoxelFeatureSet out;
  out.voxel_size = voxel_size;
  std::vector<double> coords, feats;
  for (const auto& [idx, bucket] : buckets) {
    const auto& [count, sum] = bucket;
    out.indices.push_back(idx);
    for (int a = 0; a < 3; ++a) coords.push_back((static_cast<double>(idx[a]) + 0.5) * voxel_size);
    if (point_features) {
      for (double s : sum) feats.push_back(s / static_cast<double>(count));
    } else {
      feats.push_back(static_cast<double>(count));
    }
  }
  const std::size_t n = out.indices.size();
  out.coords = Tensor::matrix(n, 3, std::move(coords));
  out.features = Tensor::matrix(n, c, std::move(feats));
  return out;
}

/// Per voxel center: mean of the bilinear samples over the views that see it,
/// or zeros when none does. Returns N x C'.
inline Tensor sample_multiview(const VoxelFeatureSet& voxels,
                               std::span<const ViewFeatureMap> views) {
  if (views.empty()) throw Error("sample_multiview: need at least one view");
  const std::size_t c = views[0].channels();
  const std::size_t n = voxels.size();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = voxels.center(i);
    std::size_t seen = 0;
    for (const auto& view : views) {
      if (view.channels() != c) throw Error("sample_multiview: views disagree on channel count");
      const auto proj = project_point(p, view.camera, view.pose);
      if (!proj.in_front || !proj.in_bounds) continue;
      const auto s = bilinear_sample(view, proj.u, proj.v);
      if (!s.valid) continue;
      ++seen;
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += s.value[k];
    }
    if (seen > 1) {
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] /= static_cast<double>(seen);
    }
  }
  return Tensor::matrix(n, c, std::move(out));
}

// --- learned fusion -----------------------------------------------------------

/// Parameters of the voxel encoder (pooled features -> C) and the fusion
/// projection ([F_3d | sampled 2D] -> C).
inline void add_fusion_params(ParamStore& store, Rng& rng, const std::string& prefix,
                              std::size_t voxel_in, std::size_t view_channels, std::size_t dim) {
  nn::add_linear(store, rng, prefix + ".encoder", voxel_in, dim);
  nn::add_linear(store, rng, prefix + ".fuse", dim + view_channels, dim);
}

inline std::size_t fused_concat_width(std::size_t dim, std::size_t view_channels) {
  return dim + view_channels;
}

/// F_visual = Linear(Concat(Encoder(voxel features), sampled 2D)), N x C.
inline Var fuse_features(Tape& tape, const std::string& prefix, const VoxelFeatureSet& voxels,
                         const Tensor& sampled2d) {
  if (sampled2d.rows() != voxels.size()) {
    throw Error("fuse_features: sampled features do not match voxel count");
  }
  auto f3d = nn::linear(tape, prefix + ".encoder", tape.constant(voxels.features));
  auto cat = concat_cols({f3d, tape.constant(sampled2d)});
  return nn::linear(tape, prefix + ".fuse", cat);
}

inline Var fuse_features(Tape& tape, const std::string& prefix, const VoxelFeatureSet& voxels,
                         std::span<const ViewFeatureMap> views) {
  return fuse_features(tape, prefix, voxels, sample_multiview(voxels, views));
}

}  // namespace deground
