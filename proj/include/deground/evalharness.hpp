#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deground/boxes9dof.hpp"

namespace deground {

struct ScoredBox {
  Box9DoF box;
  double score = 0.0;
};

/// Greedy matching: predictions in descending score order (ties keep input
/// order) each claim the unclaimed GT of highest IoU, and count as a true
/// positive iff that IoU reaches `iou_thresh`. Flags are in input order.
inline std::vector<bool> match_predictions(const std::vector<ScoredBox>& preds,
                                           const std::vector<Box9DoF>& gts, double iou_thresh) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> claimed(gts.size(), false), tp(preds.size(), false);
  for (auto k : order) {
    double best = -1.0;
    std::size_t arg = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g]) continue;
      const double iou = box_iou(preds[k].box, gts[g]);
      if (iou > best) {
        best = iou;
        arg = g;
      }
    }
    if (arg < gts.size() && best >= iou_thresh) {
      claimed[arg] = true;
      tp[k] = true;
    }
  }
  return tp;
}

struct RankedFlag {
  double score = 0.0;
  bool tp = false;
};

/// All-point interpolated AP: precision made non-increasing from the right,
/// integrated over the recall steps. Ties in score keep input order.
inline double average_precision(std::vector<RankedFlag> flags, std::size_t num_gt) {
  if (num_gt == 0) throw Error("average_precision: no ground truth");
  std::stable_sort(flags.begin(), flags.end(),
                   [](const RankedFlag& a, const RankedFlag& b) { return a.score > b.score; });
  const std::size_t n = flags.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += flags[i].tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

// --- grounding report ---------------------------------------------------------

/// One grounding query: its ranked predictions against the single referred box.
struct GroundingResult {
  std::vector<ScoredBox> preds;
  Box9DoF target;
  bool hard = false;
  bool view_dep = false;
  std::string scene;  // label for diagnostics
};

struct BucketStats {
  std::optional<double> ap;  // absent for an empty bucket
  std::size_t count = 0;
};

struct Diagnostic {
  std::string scene;
  double best_iou = 0.0;
  std::optional<std::size_t> first_hit_rank;  // 1-based
  double top1_iou = 0.0;
};

struct EvalReport {
  double iou_thresh = 0.25;
  std::map<std::string, BucketStats> buckets;  // overall, easy, hard, view-dep, view-indep
  std::vector<Diagnostic> diagnostics;
};

inline const std::vector<std::string>& bucket_names() {
  static const std::vector<std::string> names = {"overall", "easy", "hard", "view-dep",
                                                 "view-indep"};
  return names;
}

/// Pools matched flags of every instruction in a bucket into one PR curve.
inline EvalReport bucket_report(const std::vector<GroundingResult>& results, double iou_thresh) {
  EvalReport rep;
  rep.iou_thresh = iou_thresh;
  std::map<std::string, std::vector<RankedFlag>> pooled;
  for (const auto& r : results) {
    const auto tp = match_predictions(r.preds, {r.target}, iou_thresh);
    std::vector<std::string> keys = {"overall", r.hard ? "hard" : "easy",
                                     r.view_dep ? "view-dep" : "view-indep"};
    for (const auto& key : keys) {
      rep.buckets[key].count += 1;
      for (std::size_t k = 0; k < r.preds.size(); ++k) {
        pooled[key].push_back({r.preds[k].score, tp[k]});
      }
    }
    Diagnostic d{r.scene};
    std::vector<std::size_t> order(r.preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return r.preds[a].score > r.preds[b].score;
    });
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const double iou = box_iou(r.preds[order[rank]].box, r.target);
      if (rank == 0) d.top1_iou = iou;
      d.best_iou = std::max(d.best_iou, iou);
      if (!d.first_hit_rank && iou >= iou_thresh) d.first_hit_rank = rank + 1;
    }
    rep.diagnostics.push_back(std::move(d));
  }
  for (const auto& name : bucket_names()) {
    auto& b = rep.buckets[name];
    if (b.count > 0) b.ap = average_precision(pooled[name], b.count);
  }
  return rep;
}

// --- detection ------------------------------------------------------------------

struct DetectionPrediction {
  Box9DoF box;
  std::size_t label = 0;
  double score = 0.0;
};

struct DetectionScene {
  std::vector<DetectionPrediction> preds;
  std::vector<Box9DoF> gt_boxes;
  std::vector<std::size_t> gt_labels;
};

struct DetectionReport {
  double iou_thresh = 0.25;
  std::map<std::size_t, double> per_class;  // classes with ground truth
  double map = 0.0;
};

/// Per-class AP pooled over scenes, averaged over classes that have ground truth.
inline DetectionReport detection_report(const std::vector<DetectionScene>& scenes,
                                        double iou_thresh) {
  DetectionReport rep;
  rep.iou_thresh = iou_thresh;
  std::map<std::size_t, std::vector<RankedFlag>> flags;
  std::map<std::size_t, std::size_t> num_gt;
  for (const auto& s : scenes) {
    std::map<std::size_t, std::vector<ScoredBox>> preds;
    std::map<std::size_t, std::vector<Box9DoF>> gts;
    for (const auto& p : s.preds) preds[p.label].push_back({p.box, p.score});
    for (std::size_t g = 0; g < s.gt_boxes.size(); ++g) gts[s.gt_labels[g]].push_back(s.gt_boxes[g]);
    for (const auto& [c, boxes] : gts) num_gt[c] += boxes.size();
    for (const auto& [c, ps] : preds) {
      const auto tp = match_predictions(ps, gts[c], iou_thresh);
      for (std::size_t k = 0; k < ps.size(); ++k) flags[c].push_back({ps[k].score, tp[k]});
    }
  }
  double sum = 0.0;
  for (const auto& [c, n] : num_gt) {
    rep.per_class[c] = average_precision(flags[c], n);
    sum += rep.per_class[c];
  }
  rep.map = num_gt.empty() ? 0.0 : sum / static_cast<double>(num_gt.size());
  return rep;
}

// --- emission -------------------------------------------------------------------

inline nlohmann::json report_json(const EvalReport& rep) {
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& name : bucket_names()) {
    const auto it = rep.buckets.find(name);
    const BucketStats b = it == rep.buckets.end() ? BucketStats{} : it->second;
    buckets[name] = {{"ap", b.ap ? nlohmann::json(*b.ap) : nlohmann::json(nullptr)},
                     {"count", b.count}};
  }
  nlohmann::json diag = nlohmann::json::array();
  for (const auto& d : rep.diagnostics) {
    diag.push_back({{"scene", d.scene},
                    {"best_iou", d.best_iou},
                    {"top1_iou", d.top1_iou},
                    {"first_hit_rank",
                     d.first_hit_rank ? nlohmann::json(*d.first_hit_rank) : nlohmann::json(nullptr)}});
  }
  return {{"iou_thresh", rep.iou_thresh}, {"buckets", buckets}, {"diagnostics", diag}};
}

/// Aligned plain-text table: one row per threshold, one column per bucket.
inline std::string report_table(const std::vector<EvalReport>& reps,
                                const std::vector<DetectionReport>& det = {}) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s", "Metric");
  out += line;
  for (const char* h : {"Overall", "Easy", "Hard", "View-Dep", "View-Indep"}) {
    std::snprintf(line, sizeof line, "%12s", h);
    out += line;
  }
  out += '\n';
  for (const auto& rep : reps) {
    std::snprintf(line, sizeof line, "AP@%-7.0f", rep.iou_thresh * 100.0);
    out += line;
    for (const auto& name : bucket_names()) {
      const auto it = rep.buckets.find(name);
      if (it == rep.buckets.end() || !it->second.ap) {
        std::snprintf(line, sizeof line, "%12s", "-");
      } else {
        std::snprintf(line, sizeof line, "%12.2f", *it->second.ap * 100.0);
      }
      out += line;
    }
    out += '\n';
  }
  std::snprintf(line, sizeof line, "%-10s", "Count");
  out += line;
  if (!reps.empty()) {
    for (const auto& name : bucket_names()) {
      const auto it = reps[0].buckets.find(name);
      std::snprintf(line, sizeof line, "%12zu", it == reps[0].buckets.end() ? 0 : it->second.count);
      out += line;
    }
  }
  out += '\n';
  for (const auto& d : det) {
    std::snprintf(line, sizeof line, "Detection mAP@%.0f: %.2f\n", d.iou_thresh * 100.0,
                  d.map * 100.0);
    out += line;
  }
  return out;
}

}  // namespace deground
