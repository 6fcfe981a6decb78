#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "deground/gradcheck.hpp"
#include "deground/matchinglosses.hpp"

using namespace deground;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Minimum over all injective maps of the smaller side into the larger one;
// among equal-cost optima the lexicographically smallest (pred, gt) list.
Assignment brute_force(const Matrix& c) {
  const std::size_t rows = c.size(), cols = c[0].size();
  const bool by_row = rows <= cols;
  const std::size_t small = std::min(rows, cols), big = std::max(rows, cols);
  std::vector<std::size_t> perm(big);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Assignment best;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < small; ++i) {
      pairs.emplace_back(by_row ? i : perm[i], by_row ? perm[i] : i);
    }
    std::sort(pairs.begin(), pairs.end());
    double cost = 0.0;
    for (const auto& [r, g] : pairs) cost += c[r][g];
    if (cost < best.cost - 1e-12 || (std::abs(cost - best.cost) <= 1e-12 && pairs < best.pairs)) {
      best.cost = cost;
      best.pairs = pairs;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Matrix random_cost(Rng& rng, std::size_t r, std::size_t c, bool integer) {
  Matrix m(r, std::vector<double>(c));
  for (auto& row : m) {
    for (auto& x : row) x = integer ? static_cast<double>(rng.index(4)) : rng.uniform(-2.0, 3.0);
  }
  return m;
}

// A decoder output whose raw box rows and logits are parameters.
DecoderOutput output_from(Tape& tape, std::size_t k) {
  return decode_heads(tape.param("raw"), tape.param("logits"), Tensor::zeros({k, 3}));
}

ParamStore output_params(const std::vector<Box9DoF>& boxes, const std::vector<double>& logits,
                         std::size_t classes) {
  ParamStore p;
  std::vector<double> raw;
  for (const auto& b : boxes) {
    const auto r = box_target(b);  // same layout as a raw box-head row
    raw.insert(raw.end(), r.begin(), r.end());
  }
  p.add("raw", Tensor::matrix(boxes.size(), 12, std::move(raw)));
  p.add("logits", Tensor::matrix(boxes.size(), classes, logits));
  return p;
}

}  // namespace

TEST(Hungarian, SmallExamples) {
  auto a = hungarian({{1, 2}, {3, 1}});
  EXPECT_EQ(a.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(a.cost, 2.0);

  Matrix diag(5, std::vector<double>(5, 10.0));
  for (std::size_t i = 0; i < 5; ++i) diag[i][i] = 0.5;
  auto d = hungarian(diag);
  ASSERT_EQ(d.pairs.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(d.pairs[i], std::make_pair(i, i));

  EXPECT_TRUE(hungarian({}).pairs.empty());
  EXPECT_EQ(hungarian({}).cost, 0.0);
}

TEST(Hungarian, RectangularAndTies) {
  // Three predictions, two ground truths: one prediction stays unmatched.
  auto r = hungarian({{1, 1}, {1, 1}, {0, 0}});
  EXPECT_EQ(r.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {2, 1}}));
  EXPECT_DOUBLE_EQ(r.cost, 1.0);
  auto w = hungarian({{5, 0, 5}, {0, 5, 5}});
  EXPECT_EQ(w.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}}));
  // All-equal costs resolve to the identity.
  auto z = hungarian(Matrix(4, std::vector<double>(4, 0.0)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(z.pairs[i], std::make_pair(i, i));
}

TEST(Hungarian, MatchesBruteForce3x3) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = random_cost(rng, 3, 3, false);
    const auto h = hungarian(c), b = brute_force(c);
    ASSERT_NEAR(h.cost, b.cost, 1e-12) << trial;
    ASSERT_EQ(h.pairs, b.pairs) << trial;
  }
}

TEST(Hungarian, MatchesBruteForceRectangularUpTo7) {
  Rng rng(12);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t r = 1 + rng.index(7), c = 1 + rng.index(7);
    const bool integer = trial % 2 == 0;  // integer costs exercise the tie-break
    const auto m = random_cost(rng, r, c, integer);
    const auto h = hungarian(m), b = brute_force(m);
    ASSERT_EQ(h.pairs.size(), std::min(r, c));
    ASSERT_NEAR(h.cost, b.cost, 1e-12) << r << "x" << c;
    ASSERT_EQ(h.pairs, b.pairs) << r << "x" << c << " trial " << trial;
  }
}

TEST(BoxLoss, Examples) {
  const Box9DoF a(1, 2, 0.5, 0.4, 0.6, 0.8, 0.3, -0.2, 1.0);
  EXPECT_EQ(box_loss(a, a), 0.0);
  const Box9DoF b(2, 2, 0.5, 0.4, 0.6, 0.8, 0.3, -0.2, 1.0);
  EXPECT_NEAR(box_loss(b, a), 1.0, 1e-15);
  const Box9DoF r0(0, 0, 0, 1, 1, 1, 0, 0, 0);
  const Box9DoF r1(0, 0, 0, 1, 1, 1, 2 * std::numbers::pi, 0, 0);
  EXPECT_NEAR(box_loss(r0, r1), 0.0, 1e-15);
  // Extents enter as log ratios: doubling one side costs ln 2.
  const Box9DoF big(1, 2, 0.5, 0.8, 0.6, 0.8, 0.3, -0.2, 1.0);
  EXPECT_NEAR(box_loss(big, a), std::log(2.0), 1e-15);
}

TEST(BoxLoss, TapeSumAgreesWithValueForm) {
  Rng rng(13);
  std::vector<Box9DoF> preds, gts;
  for (int i = 0; i < 3; ++i) {
    preds.emplace_back(rng.normal(), rng.normal(), rng.normal(), 0.5 + rng.uniform(), 0.5 + rng.uniform(),
                       0.5 + rng.uniform(), rng.normal(), rng.normal(), rng.normal());
    gts.emplace_back(rng.normal(), rng.normal(), rng.normal(), 0.5 + rng.uniform(), 0.5 + rng.uniform(),
                     0.5 + rng.uniform(), rng.normal(), rng.normal(), rng.normal());
  }
  auto p = output_params(preds, std::vector<double>(3, 0.0), 1);
  Tape tape(p);
  auto out = output_from(tape, 3);
  Assignment asg{{{0, 2}, {2, 0}}, 0.0};
  std::vector<GtBox> g{{gts[0], 0}, {gts[1], 0}, {gts[2], 0}};
  const double expected = box_loss(preds[0], gts[2]) + box_loss(preds[2], gts[0]);
  EXPECT_NEAR(box_loss_sum(out, asg, g).value().item(), expected, 1e-12);
}

TEST(Focal, Examples) {
  Tape tape;
  auto pos = [&](double p, double alpha, double gamma) {
    const double x = std::log(p / (1.0 - p));
    return sigmoid_focal_sum(tape.constant(Tensor::scalar(x)), Tensor::scalar(1.0), alpha, gamma)
        .value()
        .item();
  };
  EXPECT_NEAR(pos(0.5, 1.0, 0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(pos(0.9, 0.25, 2.0), 0.25 * 0.01 * -std::log(0.9), 1e-15);
  EXPECT_NEAR(pos(0.9, 0.25, 2.0), 2.634e-4, 1e-7);
  auto certain = sigmoid_focal_sum(tape.constant(Tensor::scalar(60.0)), Tensor::scalar(1.0));
  EXPECT_LT(certain.value().item(), 1e-30);
  // Negative target: (1 - alpha) p^gamma (-ln(1 - p)).
  auto neg = sigmoid_focal_sum(tape.constant(Tensor::scalar(0.0)), Tensor::scalar(0.0));
  EXPECT_NEAR(neg.value().item(), 0.75 * 0.25 * std::log(2.0), 1e-15);
  // Normalized by the matched count.
  auto two = focal_loss(tape.constant(Tensor::row({0.0, 0.0})), Tensor::row({1.0, 0.0}), 2);
  EXPECT_NEAR(two.value().item(), 0.5 * (0.25 * 0.25 + 0.75 * 0.25) * std::log(2.0), 1e-15);
  EXPECT_THROW(sigmoid_focal_sum(tape.constant(Tensor::scalar(0.0)), Tensor::scalar(0.5)), Error);
}

TEST(Spatial, Examples) {
  Tape tape;
  auto perfect = spatial_relevance_loss(tape.constant(Tensor::matrix(3, 1, {30, -30, 30})),
                                        Tensor::matrix(3, 1, {1, 0, 1}));
  EXPECT_LT(perfect.value().item(), 1e-6);
  auto flat = spatial_relevance_loss(tape.constant(Tensor::zeros({4, 1})),
                                     Tensor::matrix(4, 1, {1, 0, 0, 1}));
  EXPECT_NEAR(flat.value().item(), std::log(2.0), 1e-15);

  std::vector<Vec3> pts{{0.05, 0.05, 0.05}, {0.55, 0.05, 0.05}, {1.05, 0.05, 0.05}};
  const auto vox = voxelize(pts, nullptr, 0.1);
  const auto labels = inside_labels(vox, Box9DoF(0.5, 0, 0, 0.3, 0.3, 0.3));
  EXPECT_EQ(labels, Tensor::matrix(3, 1, {0, 1, 0}));
}

TEST(MatchingCost, Examples) {
  const Box9DoF gt(1, 1, 1, 1, 1, 1);
  const Box9DoF off(1.5, 1, 1, 1, 1, 1);  // box term 0.5
  auto p = output_params({gt, off}, {std::log(4.0), -1.0, std::log(4.0), 2.0}, 2);
  Tape tape(p);
  auto out = output_from(tape, 2);
  const std::vector<GtBox> gts{{gt, 0}};
  auto c = matching_cost(out, gts, Task::kDetection, {});
  EXPECT_NEAR(c[0][0], -0.8, 1e-12);
  EXPECT_NEAR(c[1][0], -0.3, 1e-12);
  LossWeights no_box;
  no_box.box = 0.0;
  auto pure = matching_cost(out, gts, Task::kDetection, no_box);
  EXPECT_NEAR(pure[1][0], -0.8, 1e-12);
  // Grounding reads column 0 whatever the label.
  auto g = matching_cost(out, {{gt, 1}}, Task::kGrounding, {});
  EXPECT_NEAR(g[1][0], -0.8 + 0.5, 1e-12);
}

TEST(TotalLoss, WeightedSum) {
  LossWeights w;
  EXPECT_EQ(w.ground, 1.0);
  EXPECT_EQ(w.box, 1.0);
  EXPECT_EQ(w.spatial, 0.01);
  EXPECT_NEAR(weighted_total(Task::kGrounding, w, 2, 3, 100), 6.0, 1e-12);
  EXPECT_NEAR(weighted_total(Task::kDetection, w, 2, 3, 100), 5.0, 1e-12);

  Rng rng(14);
  std::vector<Box9DoF> preds;
  for (int i = 0; i < 4; ++i) preds.emplace_back(rng.normal(), rng.normal(), 0, 1, 1, 1, rng.normal());
  std::vector<double> logits(4);
  for (auto& x : logits) x = rng.normal();
  auto p = output_params(preds, logits, 1);
  Tape tape(p);
  auto out = output_from(tape, 4);
  auto rel = tape.constant(Tensor::matrix(3, 1, {0.3, -1.0, 2.0}));
  const Tensor labels = Tensor::matrix(3, 1, {1, 0, 0});
  const std::vector<GtBox> gts{{Box9DoF(0.2, 0.1, 0, 1.2, 0.8, 1, 0.4), 0}};
  auto r = total_loss(out, gts, Task::kGrounding, w, &rel, &labels);
  EXPECT_GT(r.cls, 0.0);
  EXPECT_GT(r.box, 0.0);
  EXPECT_GT(r.spatial, 0.0);
  EXPECT_NEAR(r.total, weighted_total(Task::kGrounding, w, r.cls, r.box, r.spatial), 1e-12);
  EXPECT_EQ(r.assignment.pairs.size(), 1u);

  LossWeights zero{0, 0, 0, 0};
  EXPECT_EQ(total_loss(out, gts, Task::kGrounding, zero, &rel, &labels).total, 0.0);
  LossWeights negative;
  negative.box = -1.0;
  EXPECT_THROW(total_loss(out, gts, Task::kGrounding, negative), Error);
}

TEST(TotalLoss, PerfectPredictionHasZeroBoxTerm) {
  const Box9DoF a(1, 0, 0.5, 0.5, 0.6, 0.7, 0.2), b(-1, 1, 0.5, 1, 1, 1, -0.5);
  auto p = output_params({a, b}, {40, -3, -3, 40}, 2);
  Tape tape(p);
  auto out = output_from(tape, 2);
  auto r = total_loss(out, {{b, 1}, {a, 0}}, Task::kDetection, {});
  EXPECT_NEAR(r.box, 0.0, 1e-12);
  EXPECT_LT(r.cls, 1e-3);
  EXPECT_EQ(r.assignment.pairs,
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}}));
}

TEST(TotalLoss, PermutationInvariant) {
  Rng rng(15);
  const std::size_t k = 5, classes = 3;
  std::vector<Box9DoF> preds;
  std::vector<double> logits;
  for (std::size_t i = 0; i < k; ++i) {
    preds.emplace_back(rng.normal(), rng.normal(), rng.normal(), 0.5 + rng.uniform(), 0.5 + rng.uniform(),
                       0.5 + rng.uniform(), rng.normal());
    for (std::size_t c = 0; c < classes; ++c) logits.push_back(rng.normal());
  }
  std::vector<GtBox> gts;
  for (int g = 0; g < 3; ++g) {
    gts.push_back({Box9DoF(rng.normal(), rng.normal(), rng.normal(), 1, 1, 1, rng.normal()),
                   rng.index(classes)});
  }
  auto base_p = output_params(preds, logits, classes);
  Tape t0(base_p);
  const double base = total_loss(output_from(t0, k), gts, Task::kDetection, {}).total;

  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  std::vector<Box9DoF> pp;
  std::vector<double> pl;
  for (auto i : perm) {
    pp.push_back(preds[i]);
    for (std::size_t c = 0; c < classes; ++c) pl.push_back(logits[i * classes + c]);
  }
  std::vector<GtBox> pg{gts[2], gts[0], gts[1]};
  auto perm_p = output_params(pp, pl, classes);
  Tape t1(perm_p);
  EXPECT_NEAR(total_loss(output_from(t1, k), pg, Task::kDetection, {}).total, base, 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(16);
  std::vector<Box9DoF> preds;
  std::vector<double> logits;
  for (int i = 0; i < 4; ++i) {
    preds.emplace_back(rng.normal(), rng.normal(), rng.normal(), 0.5 + rng.uniform(), 0.5 + rng.uniform(),
                       0.5 + rng.uniform(), rng.normal(), 0.3 * rng.normal(), rng.normal());
    for (int c = 0; c < 2; ++c) logits.push_back(rng.normal());
  }
  auto p = output_params(preds, logits, 2);
  p.add("rel", Tensor::matrix(5, 1, {0.2, -0.7, 1.3, 0.0, -2.0}));
  const std::vector<GtBox> gts{{Box9DoF(0.3, -0.2, 0.1, 1, 0.7, 1.4, 0.5), 1},
                               {Box9DoF(-0.5, 0.8, 0.2, 0.6, 1.1, 0.9, -1.2, 0.2), 0}};
  Assignment fixed_det, fixed_grd;
  {
    Tape tape(p);
    auto out = output_from(tape, 4);
    fixed_det = total_loss(out, gts, Task::kDetection, {}).assignment;
    fixed_grd = total_loss(out, {gts[0]}, Task::kGrounding, {}).assignment;
  }
  const Tensor labels = Tensor::matrix(5, 1, {1, 0, 1, 0, 0});
  LossWeights w;
  w.spatial = 0.7;
  LossFn fn = [&](Tape& tape) {
    auto out = output_from(tape, 4);
    auto det = total_loss(out, gts, Task::kDetection, w, nullptr, nullptr, &fixed_det);
    auto rel = tape.param("rel");
    auto grd = total_loss(out, {gts[0]}, Task::kGrounding, w, &rel, &labels, &fixed_grd);
    return add(det.total_var, grd.total_var);
  };
  const auto rep = grad_check(fn, p);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
  EXPECT_LE(rep.max_rel_err, 1e-4);
}

TEST(Losses, FocalGradientExtremes) {
  ParamStore p;
  p.add("x", Tensor::row({-8.0, -1.5, 0.0, 0.7, 6.0, -3.0, 2.5}));
  const Tensor t = Tensor::row({1, 0, 1, 0, 1, 1, 0});
  LossFn fn = [&](Tape& tape) { return sigmoid_focal_sum(tape.param("x"), t); };
  const auto rep = grad_check(fn, p);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
  LossFn bce = [&](Tape& tape) { return bce_with_logits_mean(tape.param("x"), t); };
  EXPECT_TRUE(grad_check(bce, p).pass);
}
