#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "deground/geometry.hpp"

namespace deground::app {

/// Linear gray (128,128,128) at score 0 to red (255,0,0) at score 1.
inline std::array<unsigned char, 3> heat_color(double s) {
  s = std::clamp(s, 0.0, 1.0);
  auto ch = [](double v) { return static_cast<unsigned char>(std::lround(v)); };
  return {ch(128.0 + 127.0 * s), ch(128.0 - 128.0 * s), ch(128.0 - 128.0 * s)};
}

struct Heatmap {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel
};

/// Each pixel takes the score of the voxel whose projection lies nearest to
/// it (ties to the nearer depth, then the lower index). Voxels behind the
/// camera or outside the image are ignored; with none visible the map is
/// uniform at score 0.
inline Heatmap render_heatmap(const VoxelFeatureSet& voxels, const std::vector<double>& scores,
                              const CameraIntrinsics& cam, const CameraPose& pose) {
  if (scores.size() != voxels.size()) throw Error("heatmap: one score per voxel required");
  struct P {
    double u, v, depth, score;
  };
  std::vector<P> vis;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const auto pr = project_point(voxels.center(i), cam, pose);
    if (pr.in_front && pr.in_bounds) vis.push_back({pr.u, pr.v, pr.depth, scores[i]});
  }
  Heatmap h{cam.width, cam.height, std::vector<unsigned char>(cam.width * cam.height * 3)};
  for (std::size_t y = 0; y < cam.height; ++y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      double best = std::numeric_limits<double>::infinity(), best_depth = best, s = 0.0;
      for (const auto& p : vis) {
        const double du = p.u - static_cast<double>(x), dv = p.v - static_cast<double>(y);
        const double d2 = du * du + dv * dv;
        if (d2 < best || (d2 == best && p.depth < best_depth)) {
          best = d2;
          best_depth = p.depth;
          s = p.score;
        }
      }
      const auto c = heat_color(s);
      std::copy(c.begin(), c.end(), h.rgb.begin() + static_cast<std::ptrdiff_t>((y * cam.width + x) * 3));
    }
  }
  return h;
}

inline void write_ppm(const std::filesystem::path& path, const Heatmap& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("heatmap: cannot write '" + path.string() + "'");
  out << "P6\n" << h.width << ' ' << h.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(h.rgb.data()), static_cast<std::streamsize>(h.rgb.size()));
  if (!out) throw Error("heatmap: write failed for '" + path.string() + "'");
}

/// One row per voxel: x,y,z,score with round-trip precision.
inline void write_scores_csv(const std::filesystem::path& path, const VoxelFeatureSet& voxels,
                             const std::vector<double>& scores) {
  std::ofstream out(path);
  if (!out) throw Error("heatmap: cannot write '" + path.string() + "'");
  out << "x,y,z,score\n";
  char line[160];
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const Vec3 c = voxels.center(i);
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", c.x(), c.y(), c.z(), scores[i]);
    out << line;
  }
  if (!out) throw Error("heatmap: write failed for '" + path.string() + "'");
}

}  // namespace deground::app
