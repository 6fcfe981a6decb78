#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "deground/boxes9dof.hpp"
#include "deground/groundingnet.hpp"
#include "deground/ops.hpp"

namespace deground {

// --- assignment -------------------------------------------------------------

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, gt), by prediction
  double cost = 0.0;
};

namespace detail {

/// Kuhn's augmenting-path search restricted to allowed edges.
inline bool augment(std::size_t row, const std::vector<std::vector<char>>& allowed,
                    std::vector<int>& col_match, std::vector<char>& seen) {
  for (std::size_t j = 0; j < allowed[row].size(); ++j) {
    if (!allowed[row][j] || seen[j]) continue;
    seen[j] = 1;
    if (col_match[j] < 0 ||
        augment(static_cast<std::size_t>(col_match[j]), allowed, col_match, seen)) {
      col_match[j] = static_cast<int>(row);
      return true;
    }
  }
  return false;
}

inline bool has_perfect_matching(const std::vector<std::vector<char>>& allowed) {
  const std::size_t n = allowed.size();
  std::vector<int> col_match(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<char> seen(n, 0);
    if (!augment(i, allowed, col_match, seen)) return false;
  }
  return true;
}

}  // namespace detail

/// Minimum-cost assignment of rows (predictions) to columns (ground truths).
///
/// Solves the zero-padded square problem with the O(n^3) potential-based
/// Kuhn-Munkres method. Every optimal assignment uses only edges with zero
/// reduced cost under the optimal potentials, so among optimal assignments
/// the lexicographically smallest pair list is then built greedily, keeping
/// each choice only if the remaining tight-edge graph still has a perfect
/// matching. Reduced costs within 1e-9 * max(1, max|c|) count as tight.
inline Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  Assignment result;
  const std::size_t rows = cost.size();
  if (rows == 0 || cost[0].empty()) return result;
  const std::size_t cols = cost[0].size();
  double scale = 1.0;
  for (const auto& r : cost) {
    if (r.size() != cols) throw Error("hungarian: ragged cost matrix");
    for (double v : r) {
      if (!std::isfinite(v)) throw Error("hungarian: non-finite cost");
      scale = std::max(scale, std::abs(v));
    }
  }
  const std::size_t n = std::max(rows, cols);
  auto c = [&](std::size_t i, std::size_t j) {
    return i < rows && j < cols ? cost[i][j] : 0.0;
  };

  // 1-indexed potentials u (rows), v (cols); p[j] = row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  const double tol = 1e-9 * scale;
  std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      tight[i][j] = c(i, j) - u[i + 1] - v[j + 1] <= tol;

  // Fix rows in order; prefer the smallest real column, else any padding column.
  auto restrict_row = [&](std::size_t i, std::size_t first, std::size_t last) {
    auto trial = tight;
    for (std::size_t j = 0; j < n; ++j) trial[i][j] = trial[i][j] && j >= first && j < last;
    if (last == first + 1) {
      for (std::size_t r = 0; r < n; ++r)
        if (r != i) trial[r][first] = 0;
    }
    return trial;
  };
  for (std::size_t i = 0; i < rows; ++i) {
    bool fixed = false;
    for (std::size_t j = 0; j < cols && !fixed; ++j) {
      if (!tight[i][j]) continue;
      auto trial = restrict_row(i, j, j + 1);
      if (detail::has_perfect_matching(trial)) {
        tight = std::move(trial);
        result.pairs.emplace_back(i, j);
        fixed = true;
      }
    }
    if (!fixed) tight = restrict_row(i, cols, n);
  }
  for (const auto& [i, j] : result.pairs) result.cost += cost[i][j];
  return result;
}

// --- ground truth -----------------------------------------------------------

struct GtBox {
  Box9DoF box;
  std::size_t label = 0;  // class id (detection); unused for grounding
};

struct LossWeights {
  double cls = 1.0;       // detection focal
  double box = 1.0;
  double ground = 1.0;    // grounding focal
  double spatial = 0.01;
};

// --- box regression ---------------------------------------------------------

/// L1 on center + L1 on log extent ratios + L1 on (sin, cos) of each angle.
inline double box_loss(const Box9DoF& pred, const Box9DoF& gt) {
  double s = (pred.center() - gt.center()).cwiseAbs().sum();
  for (int a = 0; a < 3; ++a) s += std::abs(std::log(pred.extents()[a] / gt.extents()[a]));
  for (int a = 0; a < 3; ++a) {
    s += std::abs(std::sin(pred.angles()[a]) - std::sin(gt.angles()[a]));
    s += std::abs(std::cos(pred.angles()[a]) - std::cos(gt.angles()[a]));
  }
  return s;
}

/// Row layout of a box target: center(3), log extents(3), sin/cos x3 (6).
inline std::vector<double> box_target(const Box9DoF& b) {
  std::vector<double> t;
  for (int a = 0; a < 3; ++a) t.push_back(b.center()[a]);
  for (int a = 0; a < 3; ++a) t.push_back(std::log(b.extents()[a]));
  for (int a = 0; a < 3; ++a) {
    t.push_back(std::sin(b.angles()[a]));
    t.push_back(std::cos(b.angles()[a]));
  }
  return t;
}

/// Sum over matched pairs of the box loss, on the tape.
inline Var box_loss_sum(const DecoderOutput& out, const Assignment& asg,
                        const std::vector<GtBox>& gts) {
  Tape& tape = out.raw_box.tape();
  if (asg.pairs.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (const auto& [k, g] : asg.pairs) {
    rows.push_back(k);
    auto t = box_target(gts.at(g).box);
    target.insert(target.end(), t.begin(), t.end());
  }
  auto pred = concat_cols({gather_rows(out.center, rows), gather_rows(out.log_extent, rows),
                           gather_rows(out.trig, rows)});
  auto diff = sub(pred, tape.constant(Tensor::matrix(rows.size(), 12, std::move(target))));
  return sum_all(abs(diff));
}

// --- classification ---------------------------------------------------------

/// Elementwise sigmoid focal loss summed over all entries:
/// -alpha_t (1 - p_t)^gamma log p_t with p = sigmoid(x), targets in {0, 1}.
inline Var sigmoid_focal_sum(const Var& logits, const Tensor& targets, double alpha = 0.25,
                             double gamma = 2.0) {
  const auto& X = logits.value();
  if (X.shape() != targets.shape()) throw Error("focal_loss: target shape mismatch");
  double total = 0.0;
  std::vector<double> dx(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double x = X[i], t = targets[i];
    if (t != 0.0 && t != 1.0) throw Error("focal_loss: targets must be 0 or 1");
    const double p = detail::stable_sigmoid(x);
    if (t == 1.0) {
      const double logp = detail::stable_log_sigmoid(x), q = 1.0 - p;
      total += -alpha * std::pow(q, gamma) * logp;
      dx[i] = alpha * std::pow(q, gamma) * (gamma * p * logp - q);
    } else {
      const double logq = detail::stable_log_sigmoid(-x);
      total += -(1.0 - alpha) * std::pow(p, gamma) * logq;
      dx[i] = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * logq);
    }
  }
  auto xid = logits.id();
  return logits.tape().record(Tensor::scalar(total), {logits},
                              [xid, dx = std::move(dx)](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                auto gx = t.grad(xid);
                                for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += g * dx[i];
                              });
}

/// Focal loss normalized by the number of matched predictions (at least 1).
inline Var focal_loss(const Var& logits, const Tensor& targets, std::size_t num_matched,
                      double alpha = 0.25, double gamma = 2.0) {
  return scale(sigmoid_focal_sum(logits, targets, alpha, gamma),
               1.0 / static_cast<double>(std::max<std::size_t>(1, num_matched)));
}

/// Mean binary cross-entropy over all entries of `logits` against 0/1 labels.
inline Var bce_with_logits_mean(const Var& logits, const Tensor& labels) {
  const auto& X = logits.value();
  if (X.shape() != labels.shape()) throw Error("bce: label shape mismatch");
  const double n = static_cast<double>(X.size());
  double total = 0.0;
  std::vector<double> dx(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double x = X[i], t = labels[i];
    if (t != 0.0 && t != 1.0) throw Error("bce: labels must be 0 or 1");
    total -= t * detail::stable_log_sigmoid(x) + (1.0 - t) * detail::stable_log_sigmoid(-x);
    dx[i] = (detail::stable_sigmoid(x) - t) / n;
  }
  auto xid = logits.id();
  return logits.tape().record(Tensor::scalar(total / n), {logits},
                              [xid, dx = std::move(dx)](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                auto gx = t.grad(xid);
                                for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += g * dx[i];
                              });
}

/// Mean BCE between per-voxel relevance logits (N x 1) and inside-box labels.
inline Var spatial_relevance_loss(const Var& logits, const Tensor& labels) {
  return bce_with_logits_mean(logits, labels);
}

/// Label 1 for every voxel center inside `box`, boundary included.
inline Tensor inside_labels(const VoxelFeatureSet& voxels, const Box9DoF& box) {
  std::vector<double> out(voxels.size());
  for (std::size_t i = 0; i < voxels.size(); ++i) out[i] = contains_point(box, voxels.center(i));
  return Tensor::matrix(voxels.size(), 1, std::move(out));
}

// --- matching ---------------------------------------------------------------

/// Entry (k, g): -w_cls * p_k(class_g) + w_box * box_loss(k, g). Grounding
/// uses the sigmoid of the single grounding logit and w_ground.
inline std::vector<std::vector<double>> matching_cost(const DecoderOutput& out,
                                                      const std::vector<GtBox>& gts, Task task,
                                                      const LossWeights& w) {
  const auto& L = out.logits.value();
  std::vector<std::vector<double>> cost(out.boxes.size(), std::vector<double>(gts.size()));
  for (std::size_t k = 0; k < out.boxes.size(); ++k) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double p = task == Task::kDetection
                           ? detail::stable_sigmoid(L.at(k, gts[g].label))
                           : detail::stable_sigmoid(L.at(k, 0));
      const double wc = task == Task::kDetection ? w.cls : w.ground;
      cost[k][g] = -wc * p + w.box * box_loss(out.boxes[k], gts[g].box);
    }
  }
  return cost;
}

// --- objectives -------------------------------------------------------------

struct LossBreakdown {
  Task task = Task::kDetection;
  double cls = 0.0;      // detection focal, or grounding focal
  double box = 0.0;
  double spatial = 0.0;  // grounding only
  double total = 0.0;
  LossWeights weights;
  Assignment assignment;
  Var total_var;
};

/// Weighted objective from its components, in the order total_loss sums them.
inline double weighted_total(Task task, const LossWeights& w, double cls, double box,
                             double spatial) {
  const double wc = task == Task::kDetection ? w.cls : w.ground;
  double t = wc * cls + w.box * box;
  if (task == Task::kGrounding) t += w.spatial * spatial;
  return t;
}

/// Focal targets: matched queries get their class (detection) or 1
/// (grounding); unmatched queries are all-zero, i.e. background.
inline Tensor focal_targets(const DecoderOutput& out, const Assignment& asg,
                            const std::vector<GtBox>& gts, Task task) {
  const auto& L = out.logits.value();
  std::vector<double> t(L.size(), 0.0);
  for (const auto& [k, g] : asg.pairs) {
    t[k * L.cols() + (task == Task::kDetection ? gts[g].label : 0)] = 1.0;
  }
  return Tensor(L.shape(), std::move(t));
}

/// Detection: w_cls L_cls + w_box L_box. Grounding: w_ground L_ground +
/// w_box L_box + w_spatial L_spatial (the spatial term needs relevance
/// logits and labels). Both box and focal terms are normalized by the
/// matched count. `fixed` reuses a given assignment instead of matching.
inline LossBreakdown total_loss(const DecoderOutput& out, const std::vector<GtBox>& gts,
                                Task task, const LossWeights& w,
                                const Var* relevance = nullptr, const Tensor* labels = nullptr,
                                const Assignment* fixed = nullptr) {
  for (double x : {w.cls, w.box, w.ground, w.spatial}) {
    if (!(x >= 0.0)) throw Error("total_loss: weights must be >= 0");
  }
  LossBreakdown r;
  r.task = task;
  r.weights = w;
  r.assignment = fixed ? *fixed : gts.empty() ? Assignment{} : hungarian(matching_cost(out, gts, task, w));
  const std::size_t m = r.assignment.pairs.size();
  auto cls = focal_loss(out.logits, focal_targets(out, r.assignment, gts, task), m);
  auto box = scale(box_loss_sum(out, r.assignment, gts),
                   1.0 / static_cast<double>(std::max<std::size_t>(1, m)));
  const double wc = task == Task::kDetection ? w.cls : w.ground;
  auto total = add(scale(cls, wc), scale(box, w.box));
  r.cls = cls.value().item();
  r.box = box.value().item();
  if (task == Task::kGrounding && relevance && labels) {
    auto sp = spatial_relevance_loss(*relevance, *labels);
    r.spatial = sp.value().item();
    total = add(total, scale(sp, w.spatial));
  }
  r.total_var = total;
  r.total = total.value().item();
  return r;
}

}  // namespace deground
