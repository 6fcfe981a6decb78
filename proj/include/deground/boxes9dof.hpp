#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "deground/linalg.hpp"
#include "deground/rng.hpp"
#include "deground/tensor.hpp"

namespace deground {

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

/// R = Rz(alpha) * Ry(beta) * Rx(gamma). Used everywhere a box is rotated.
inline Mat3 rotation_matrix(double alpha, double beta, double gamma) {
  return (Eigen::AngleAxisd(alpha, Vec3::UnitZ()) * Eigen::AngleAxisd(beta, Vec3::UnitY()) *
          Eigen::AngleAxisd(gamma, Vec3::UnitX()))
      .toRotationMatrix();
}

/// Oriented box: center (x, y, z), extents (l, w, h) along the local axes,
/// orientation (alpha, beta, gamma) through rotation_matrix().
class Box9DoF {
 public:
  Box9DoF() : Box9DoF(0, 0, 0, 1, 1, 1, 0, 0, 0) {}
  Box9DoF(double x, double y, double z, double l, double w, double h, double alpha = 0,
          double beta = 0, double gamma = 0)
      : center_(x, y, z),
        extents_(l, w, h),
        angles_{wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma)} {
    if (!(l > 0 && w > 0 && h > 0) || !std::isfinite(l) || !std::isfinite(w) ||
        !std::isfinite(h)) {
      throw Error("box: extents must be positive and finite");
    }
    if (!center_.allFinite() || !std::isfinite(alpha) || !std::isfinite(beta) ||
        !std::isfinite(gamma)) {
      throw Error("box: non-finite center or angle");
    }
  }
  Box9DoF(const Vec3& c, const Vec3& e, const Vec3& a)
      : Box9DoF(c.x(), c.y(), c.z(), e.x(), e.y(), e.z(), a.x(), a.y(), a.z()) {}

  const Vec3& center() const { return center_; }
  const Vec3& extents() const { return extents_; }
  Vec3 half() const { return 0.5 * extents_; }
  double alpha() const { return angles_[0]; }
  double beta() const { return angles_[1]; }
  double gamma() const { return angles_[2]; }
  Vec3 angles() const { return {angles_[0], angles_[1], angles_[2]}; }
  Mat3 rotation() const { return rotation_matrix(angles_[0], angles_[1], angles_[2]); }
  double volume() const { return extents_.prod(); }

  /// (x, y, z, l, w, h, alpha, beta, gamma)
  std::array<double, 9> params() const {
    return {center_.x(), center_.y(), center_.z(), extents_.x(), extents_.y(),
            extents_.z(), angles_[0], angles_[1], angles_[2]};
  }

  Box9DoF transformed(const Mat3& rot, const Vec3& trans) const;

  bool operator==(const Box9DoF& o) const { return params() == o.params(); }

 private:
  Vec3 center_;
  Vec3 extents_;
  std::array<double, 3> angles_;
};

/// Applies p -> rot * p + trans to the box. The new orientation is recovered
/// from rot * R as Z-Y-X Euler angles.
inline Box9DoF Box9DoF::transformed(const Mat3& rot, const Vec3& trans) const {
  const Mat3 r = rot * rotation();
  const double beta = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double alpha = std::atan2(r(1, 0), r(0, 0));
  const double gamma = std::atan2(r(2, 1), r(2, 2));
  return Box9DoF(rot * center_ + trans, extents_, Vec3(alpha, beta, gamma));
}

/// Point-in-box test in the box frame; the boundary counts as inside
/// (within 1e-12 m).
inline bool contains_point(const Box9DoF& box, const Vec3& p) {
  const Vec3 local = box.rotation().transpose() * (p - box.center());
  const Vec3 h = box.half();
  constexpr double tol = 1e-12;
  return std::abs(local.x()) <= h.x() + tol && std::abs(local.y()) <= h.y() + tol &&
         std::abs(local.z()) <= h.z() + tol;
}

/// Corner i = center + R * (sx l/2, sy w/2, sz h/2) with sx = +1 iff bit 0
/// of i is set, sy from bit 1, sz from bit 2.
inline std::array<Vec3, 8> box_corners(const Box9DoF& box) {
  std::array<Vec3, 8> out;
  const Mat3 r = box.rotation();
  const Vec3 h = box.half();
  for (int i = 0; i < 8; ++i) {
    const Vec3 local((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
    out[i] = box.center() + r * local;
  }
  return out;
}

// --- Monte-Carlo IoU ----------------------------------------------------------

struct McIoU {
  double iou = 0.0;
  double std_error = 0.0;
  std::size_t union_hits = 0;
};

/// Rejection sampling in the axis-aligned bounding volume of both boxes.
/// The estimate is hits(a and b) / hits(a or b); the standard error is the
/// Agresti-Coull binomial error sqrt(p~(1-p~)/(U+4)), p~ = (x+2)/(U+4),
/// which stays positive when the estimate is 0 or 1.
inline McIoU box_iou_mc(const Box9DoF& a, const Box9DoF& b, std::size_t samples,
                        std::uint64_t seed) {
  if (samples == 0) throw Error("box_iou_mc: samples must be >= 1");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto* box : {&a, &b}) {
    for (const auto& c : box_corners(*box)) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  const Mat3 ra = a.rotation().transpose(), rb = b.rotation().transpose();
  const Vec3 ha = a.half(), hb = b.half();
  auto inside = [](const Mat3& rt, const Vec3& c, const Vec3& h, const Vec3& p) {
    const Vec3 l = rt * (p - c);
    constexpr double tol = 1e-12;
    return std::abs(l.x()) <= h.x() + tol && std::abs(l.y()) <= h.y() + tol &&
           std::abs(l.z()) <= h.z() + tol;
  };
  Rng rng(seed);
  std::size_t both = 0, either = 0;
  const Vec3 span = hi - lo;
  for (std::size_t s = 0; s < samples; ++s) {
    const double u = rng.uniform(), v = rng.uniform(), w = rng.uniform();
    const Vec3 p(lo.x() + u * span.x(), lo.y() + v * span.y(), lo.z() + w * span.z());
    const bool ia = inside(ra, a.center(), ha, p);
    const bool ib = inside(rb, b.center(), hb, p);
    both += (ia && ib);
    either += (ia || ib);
  }
  McIoU out;
  out.union_hits = either;
  out.iou = either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
  const double n = static_cast<double>(either) + 4.0;
  const double pt = (static_cast<double>(both) + 2.0) / n;
  out.std_error = std::sqrt(pt * (1.0 - pt) / n);
  return out;
}

// --- exact IoU by polytope clipping ------------------------------------------

namespace detail {

using Polygon = std::vector<Vec3>;

/// Outward-oriented (counter-clockwise seen from outside) faces of a box.
inline std::vector<Polygon> box_faces(const Box9DoF& box) {
  const auto c = box_corners(box);
  // Corner index bits: 1 = +x, 2 = +y, 4 = +z.
  return {
      {c[0], c[4], c[6], c[2]},  // -x
      {c[1], c[3], c[7], c[5]},  // +x
      {c[0], c[1], c[5], c[4]},  // -y
      {c[2], c[6], c[7], c[3]},  // +y
      {c[0], c[2], c[3], c[1]},  // -z
      {c[4], c[5], c[7], c[6]},  // +z
  };
}

struct Plane {
  Vec3 normal;  // unit, pointing out of the kept halfspace
  double offset;
  double distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

inline std::array<Plane, 6> box_planes(const Box9DoF& box) {
  const Mat3 r = box.rotation();
  const Vec3 h = box.half();
  std::array<Plane, 6> out;
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 n = r.col(axis);
    out[2 * axis] = {n, n.dot(box.center()) + h(axis)};
    out[2 * axis + 1] = {-n, -n.dot(box.center()) + h(axis)};
  }
  return out;
}

inline void push_unique(Polygon& pts, const Vec3& p, double tol) {
  for (const auto& q : pts)
    if ((q - p).squaredNorm() <= tol * tol) return;
  pts.push_back(p);
}

enum class ClipStatus { kOk, kEmpty, kDegenerate };

/// Clips a closed convex polyhedron (outward faces) to plane.distance <= 0.
/// The cap polygon on the plane closes the result.
inline ClipStatus clip_polyhedron(std::vector<Polygon>& faces, const Plane& plane) {
  constexpr double tol = 1e-12;
  double max_out = -std::numeric_limits<double>::infinity();
  bool any_in = false;
  for (const auto& f : faces)
    for (const auto& p : f) {
      const double d = plane.distance(p);
      max_out = std::max(max_out, d);
      any_in = any_in || d < -tol;
    }
  // Protrusions below 1e-9 m change the volume negligibly; skipping them
  // avoids caps made of near-coincident points.
  if (max_out <= 1e-9) return ClipStatus::kOk;
  if (!any_in) return ClipStatus::kEmpty;

  std::vector<Polygon> kept;
  Polygon cap;
  for (const auto& f : faces) {
    Polygon out;
    const std::size_t n = f.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& p = f[i];
      const Vec3& q = f[(i + 1) % n];
      const double dp = plane.distance(p), dq = plane.distance(q);
      const bool pin = dp <= tol, qin = dq <= tol;
      if (pin && std::abs(dp) <= tol) push_unique(cap, p, 1e-9);
      if (pin != qin) {
        const double t = dp / (dp - dq);
        const Vec3 x = p + t * (q - p);
        out.push_back(x);
        push_unique(cap, x, 1e-9);
      }
      if (qin) out.push_back(q);
    }
    Polygon clean;
    for (const auto& p : out)
      if (clean.empty() || (clean.back() - p).squaredNorm() > 1e-24) clean.push_back(p);
    while (clean.size() > 1 && (clean.front() - clean.back()).squaredNorm() <= 1e-24)
      clean.pop_back();
    if (clean.size() >= 3) kept.push_back(std::move(clean));
  }
  if (cap.size() >= 3) {
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : cap) centroid += p;
    centroid /= static_cast<double>(cap.size());
    const Vec3 n = plane.normal;
    const Vec3 e1 = (std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(n).normalized();
    const Vec3 e2 = n.cross(e1);
    std::sort(cap.begin(), cap.end(), [&](const Vec3& a, const Vec3& b) {
      const Vec3 da = a - centroid, db = b - centroid;
      return std::atan2(da.dot(e2), da.dot(e1)) < std::atan2(db.dot(e2), db.dot(e1));
    });
    kept.push_back(std::move(cap));
  } else {
    return ClipStatus::kDegenerate;
  }
  faces = std::move(kept);
  return ClipStatus::kOk;
}

/// Volume of a closed polyhedron with outward-oriented faces, by the
/// divergence theorem over fan-triangulated faces (relative to `origin`).
inline double polyhedron_volume(const std::vector<Polygon>& faces, const Vec3& origin) {
  double v = 0.0;
  for (const auto& f : faces) {
    const Vec3 a = f[0] - origin;
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
      v += a.dot((f[i] - origin).cross(f[i + 1] - origin));
    }
  }
  return v / 6.0;
}

}  // namespace detail

struct ExactIoU {
  double iou = 0.0;
  double intersection = 0.0;
  bool used_fallback = false;
};

/// Intersection volume by clipping a's polytope against b's six halfspaces.
/// A numerically degenerate clip falls back to a seeded Monte-Carlo estimate
/// (1e5 samples) and sets used_fallback.
inline ExactIoU box_iou_exact(const Box9DoF& a, const Box9DoF& b) {
  const double va = a.volume(), vb = b.volume();
  // Disjoint bounding spheres short-circuit.
  if ((a.center() - b.center()).norm() > 0.5 * (a.extents().norm() + b.extents().norm())) {
    return {};
  }
  auto faces = detail::box_faces(a);
  bool degenerate = false;
  for (const auto& plane : detail::box_planes(b)) {
    const auto status = detail::clip_polyhedron(faces, plane);
    if (status == detail::ClipStatus::kEmpty) return {};
    if (status == detail::ClipStatus::kDegenerate) {
      degenerate = true;
      break;
    }
  }
  double inter = 0.0;
  if (!degenerate) {
    inter = detail::polyhedron_volume(faces, a.center());
    const double limit = std::min(va, vb);
    if (!std::isfinite(inter) || inter < -1e-9 * limit || inter > limit * (1.0 + 1e-9)) {
      degenerate = true;
    }
  }
  if (degenerate) {
    const auto mc = box_iou_mc(a, b, 100000, 0x5eedULL);
    return {mc.iou, mc.iou * (va + vb) / (1.0 + mc.iou), true};
  }
  inter = std::clamp(inter, 0.0, std::min(va, vb));
  return {inter / (va + vb - inter), inter, false};
}

inline double box_iou(const Box9DoF& a, const Box9DoF& b) { return box_iou_exact(a, b).iou; }

}  // namespace deground
