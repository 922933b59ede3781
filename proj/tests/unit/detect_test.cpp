// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "bline/detect/anchors.hpp"
#include "bline/detect/box.hpp"
#include "bline/detect/coding.hpp"
#include "bline/detect/detector.hpp"
#include "bline/detect/losses.hpp"
#include "bline/detect/nms.hpp"
#include "bline/ndgrad/checkpoint.hpp"
#include "bline/ndgrad/ops.hpp"
#include "bline/phantom/phantom.hpp"
#include "oracles.hpp"

using namespace bline;
using nd::Graph;
using nd::Tensor;

namespace {

Box overlapping_partner(const Box& a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-0.4, 0.4), grow(0.6, 1.5);
  const double w = a.width() * grow(rng), h = a.height() * grow(rng);
  const double cx = a.cx() + shift(rng) * a.width(), cy = a.cy() + shift(rng) * a.height();
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Tensor box_rows(const std::vector<Box>& boxes) { return boxes_tensor(boxes); }

DetectConfig small_detector() {
  DetectConfig c;
  c.rpn_hidden = 8;
  c.head_hidden = 16;
  return c;
}

EncoderConfig small_encoder() {
  EncoderConfig e;
  e.widths = {4, 8, 8, 8};
  return e;
}

}  // namespace

// --- boxes ---------------------------------------------------------------------

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, Box{2, 0, 4, 2}), 0.0);  // touching edges
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-15);
}

TEST(Iou, PropertiesOnRandomPairs) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Box a = oracle::random_box(rng), b = oracle::random_box(rng);
    const double v = iou(a, b);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_EQ(v, iou(b, a));
    ASSERT_NEAR(v, oracle::box_iou(a, b), 1e-12);
    if (!(a == b)) ASSERT_LT(v, 1.0);
    ASSERT_EQ(iou(a, a), 1.0);
  }
}

TEST(Box, ClipAndValidity) {
  EXPECT_EQ(clip(Box{-5, -1, 200, 50}, 154, 120), (Box{0, 0, 154, 50}));
  EXPECT_TRUE((Box{0, 0, 1, 1}).valid());
  EXPECT_FALSE((Box{1, 0, 1, 1}).valid());
  EXPECT_EQ(to_string(Box{1, 2, 3, 4}), "(1,2,3,4)");
}

// --- anchors -------------------------------------------------------------------

TEST(Anchors, SingleCellIsCentered) {
  AnchorConfig c;
  c.scales = {10.0};
  c.ratios = {1.0};
  const auto a = generate_anchors(1, 1, 40, 30, c);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].box, (Box{15, 10, 25, 20}));
}

TEST(Anchors, CountLaw) {
  EXPECT_EQ(generate_anchors(4, 5, 154, 120, AnchorConfig{}).size(), 180u);
}

TEST(Anchors, ExtentsFollowClosedForm) {
  AnchorConfig c;
  c.scales = {4.0, 6.0};
  c.ratios = {0.25, 1.0 / 6.0, 0.125};
  // Large image so that no anchor is clipped.
  const auto anchors = generate_anchors(2, 2, 1000, 1000, c);
  for (const auto& a : anchors) {
    const double s = c.scales[a.scale_index], r = c.ratios[a.ratio_index];
    EXPECT_NEAR(a.box.width(), s * std::sqrt(r), 1e-12);
    EXPECT_NEAR(a.box.height(), s / std::sqrt(r), 1e-12);
    EXPECT_NEAR(a.box.cx(), (a.col + 0.5) * 500.0, 1e-12);
    EXPECT_NEAR(a.box.cy(), (a.row + 0.5) * 500.0, 1e-12);
  }
}

TEST(Anchors, ClippedToImageWithCentreInside) {
  const auto anchors = generate_anchors(8, 10, 154, 120, AnchorConfig{});
  for (const auto& a : anchors) {
    EXPECT_TRUE(a.box.inside(154, 120));
    EXPECT_TRUE(a.box.valid());
    EXPECT_GT(a.box.cx(), 0.0);
    EXPECT_LT(a.box.cx(), 154.0);
  }
}

TEST(Anchors, DegenerateInputsAreRejected) {
  EXPECT_THROW(generate_anchors(0, 3, 10, 10, AnchorConfig{}), std::invalid_argument);
  AnchorConfig c;
  c.ratios.clear();
  EXPECT_THROW(generate_anchors(1, 1, 10, 10, c), std::invalid_argument);
}

TEST(MatchAnchors, Examples) {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  // Identical, disjoint, and IoU exactly 0.5.
  const Box half{0, 0, 10, 20};  // inter 100, union 200 -> 0.5
  const std::vector<Box> anchors{{0, 0, 10, 10}, {50, 50, 60, 60}, half};
  const auto l = match_anchors(anchors, gt, 0.7, 0.3);
  EXPECT_EQ(l[0].kind, AnchorKind::kPositive);
  EXPECT_EQ(l[0].matched_gt, 0u);
  EXPECT_EQ(l[1].kind, AnchorKind::kNegative);
  EXPECT_FALSE(l[1].matched_gt);
  EXPECT_EQ(l[2].kind, AnchorKind::kIgnore);
  EXPECT_FALSE(l[2].matched_gt);
}

TEST(MatchAnchors, ArgmaxFallbackAndTies) {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  // Both anchors at IoU 0.5; the lower index becomes the fallback positive.
  const std::vector<Box> anchors{{0, 0, 10, 20}, {0, -10, 10, 10}};
  const auto l = match_anchors(anchors, gt, 0.7, 0.3);
  EXPECT_EQ(l[0].kind, AnchorKind::kPositive);
  EXPECT_EQ(l[1].kind, AnchorKind::kIgnore);
  EXPECT_THROW(match_anchors(anchors, gt, 0.3, 0.7), std::invalid_argument);
  for (const auto& x : match_anchors(anchors, {}, 0.7, 0.3)) EXPECT_EQ(x.kind, AnchorKind::kNegative);
}

TEST(MatchAnchors, EveryReachableGtGetsAPositive) {
  std::mt19937_64 rng(3);
  const auto grid = generate_anchors(8, 10, 154, 120, AnchorConfig{});
  std::vector<Box> anchors;
  for (const auto& a : grid) anchors.push_back(a.box);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Box> gt;
    const int n = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int i = 0; i < n; ++i) gt.push_back(oracle::random_box(rng, 110.0, 60.0));
    const auto labels = match_anchors(anchors, gt, 0.7, 0.3);
    ASSERT_EQ(labels.size(), anchors.size());
    for (std::size_t a = 0; a < labels.size(); ++a) {
      ASSERT_EQ(labels[a].kind == AnchorKind::kPositive, labels[a].matched_gt.has_value());
      double best = 0.0;
      for (const auto& g : gt) best = std::max(best, oracle::box_iou(anchors[a], g));
      if (labels[a].kind == AnchorKind::kNegative) ASSERT_LE(best, 0.3);
      if (best >= 0.7) ASSERT_EQ(labels[a].kind, AnchorKind::kPositive);
    }
    for (std::size_t g = 0; g < gt.size(); ++g) {
      bool reachable = false, covered = false;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (oracle::box_iou(anchors[a], gt[g]) > 0.0) reachable = true;
        if (labels[a].matched_gt == g) covered = true;
      }
      if (reachable) ASSERT_TRUE(covered) << "gt " << g << " in trial " << trial;
    }
  }
}

// --- nms -----------------------------------------------------------------------

TEST(Nms, Examples) {
  const Box b{0, 0, 10, 10};
  EXPECT_EQ(nms({{b, 0.9}}, 0.5, 0.5).size(), 1u);
  const auto two = nms({{b, 0.8}, {b, 0.9}}, 0.5, 0.5);
  ASSERT_EQ(two.size(), 1u);
  EXPECT_EQ(two[0].score, 0.9);
  EXPECT_TRUE(nms({{b, 0.4}}, 0.5, 0.5).empty());
  EXPECT_EQ(nms_indices({{b, 0.7}, {b, 0.7}}, 0.5, 0.5), (std::vector<std::size_t>{0}));
  EXPECT_THROW(nms({{b, 1.2}}, 0.5, 0.5), std::invalid_argument);
}

TEST(Nms, MatchesExhaustiveReference) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 20; ++i) {
      // Quantised scores create ties.
      dets.push_back({oracle::random_box(rng, 60.0, 30.0), std::round(score(rng) * 10.0) / 10.0});
    }
    const double thr = trial % 2 ? 0.5 : 0.0;
    const auto got = nms_indices(dets, 0.5, thr);
    ASSERT_EQ(got, oracle::nms(dets, 0.5, thr)) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j) ASSERT_LT(iou(dets[got[i]].box, dets[got[j]].box), 0.5);
    for (std::size_t i : got) ASSERT_GE(dets[i].score, thr);
  }
}

// --- regression losses ---------------------------------------------------------

TEST(EiouLoss, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_EQ(eiou_loss(a, a), 0.0);
  EXPECT_NEAR(eiou_loss(a, b), 6.0 / 7.0 + 2.0 / 18.0, 1e-15);
  EXPECT_NEAR(eiou_loss(a, b), 0.968254, 1e-6);
  EXPECT_NEAR(iou_loss(a, b), 6.0 / 7.0, 1e-15);
  EXPECT_THROW(eiou_loss(Box{0, 0, 0, 1}, a), DegenerateBoxError);
}

TEST(EiouLoss, GraphValueMatchesScalar) {
  std::mt19937_64 rng(5);
  std::vector<Box> p, g;
  for (int i = 0; i < 50; ++i) {
    p.push_back(oracle::random_box(rng));
    g.push_back(oracle::random_box(rng));
  }
  Graph gr;
  const auto e = eiou_loss(gr.constant(box_rows(p)), gr.constant(box_rows(g)));
  const auto u = iou_loss(gr.constant(box_rows(p)), gr.constant(box_rows(g)));
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_NEAR(e.value()[i], oracle::eiou(p[i], g[i]), 1e-12);
    EXPECT_NEAR(u.value()[i], 1.0 - oracle::box_iou(p[i], g[i]), 1e-12);
  }
}

TEST(EiouLoss, BoundedBelowByIouLossAndZeroOnlyWhenEqual) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10000; ++i) {
    const Box a = oracle::random_box(rng), b = oracle::random_box(rng);
    ASSERT_GE(eiou_loss(a, b), 1.0 - iou(a, b) - 1e-15);
    ASSERT_GT(eiou_loss(a, b), 0.0);
    ASSERT_EQ(eiou_loss(a, a), 0.0);
  }
}

TEST(EiouLoss, InvariantUnderTranslationAndScaling) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> t(-50.0, 50.0), s(0.2, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const Box a = oracle::random_box(rng), b = overlapping_partner(a, rng);
    const double dx = t(rng), dy = t(rng), k = s(rng), ox = t(rng), oy = t(rng);
    auto move = [&](const Box& x) { return Box{x.x1 + dx, x.y1 + dy, x.x2 + dx, x.y2 + dy}; };
    auto zoom = [&](const Box& x) {
      return Box{ox + k * (x.x1 - ox), oy + k * (x.y1 - oy), ox + k * (x.x2 - ox), oy + k * (x.y2 - oy)};
    };
    const double base = eiou_loss(a, b);
    ASSERT_NEAR(eiou_loss(move(a), move(b)), base, 1e-9);
    ASSERT_NEAR(eiou_loss(zoom(a), zoom(b)), base, 1e-9);
  }
}

TEST(EiouLoss, ZeroOverlapStillHasGradient) {
  const Tensor pred_t = box_rows({{0, 0, 2, 2}});
  const Tensor gt_t = box_rows({{5, 5, 7, 8}});
  auto grads = [&](bool extended) {
    Tensor p = pred_t;
    p.set_requires_grad(true);
    Graph g;
    const auto pv = g.param(p);
    const auto loss = nd::sum(extended ? eiou_loss(pv, g.constant(gt_t)) : iou_loss(pv, g.constant(gt_t)));
    g.backward(loss);
    return std::vector<double>(p.grad().begin(), p.grad().end());
  };
  for (double v : grads(false)) EXPECT_EQ(v, 0.0);
  double norm = 0.0;
  for (double v : grads(true)) norm += v * v;
  EXPECT_GT(norm, 1e-6);
}

TEST(EiouLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  int accepted = 0;
  double worst = 0.0;
  for (int attempt = 0; accepted < 100 && attempt < 1000; ++attempt) {
    const Box a = oracle::random_box(rng, 50.0, 20.0);
    const Box b = overlapping_partner(a, rng);
    if (oracle::box_iou(a, b) <= 0.0) continue;
    Tensor p = box_rows({a}), q = box_rows({b});
    const auto r = oracle::finite_difference({&p, &q}, [&](Graph& g) {
      return nd::sum(eiou_loss(g.param(p), g.param(q)));
    });
    if (r.kink < 1e-3) continue;
    ++accepted;
    worst = std::max(worst, r.rel_error);
  }
  EXPECT_EQ(accepted, 100);
  EXPECT_LE(worst, 1e-4);
}

TEST(SmoothL1, Examples) {
  const std::vector<double> zero{0.0};
  EXPECT_EQ(smooth_l1_loss(std::vector<double>{0.0}, zero), 0.0);
  EXPECT_EQ(smooth_l1_loss(std::vector<double>{0.5}, zero), 0.125);
  EXPECT_EQ(smooth_l1_loss(std::vector<double>{2.0}, zero), 1.5);
  EXPECT_EQ(smooth_l1_loss(std::vector<double>{-2.0, 0.5}, std::vector<double>{0.0, 0.0}), 1.625);
  EXPECT_THROW(smooth_l1_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), nd::ShapeError);
  Graph g;
  const auto v = smooth_l1_loss(g.constant(Tensor({1, 3}, {0.5, 2.0, -2.0})), g.constant(Tensor({1, 3}, 0.0)));
  EXPECT_DOUBLE_EQ(v.value()[0], 3.125);
}

TEST(RpnCls, Examples) {
  EXPECT_NEAR(rpn_cls_loss(1.0 - 1e-7, 1), 0.0, 1e-6);
  EXPECT_NEAR(rpn_cls_loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(rpn_cls_loss(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(rpn_cls_loss(0.0, 1)));
  EXPECT_THROW(rpn_cls_loss(0.5, 2), std::invalid_argument);
  Graph g;
  const std::vector<double> labels{1.0, 0.0};
  EXPECT_NEAR(bce_loss(g.constant(Tensor({2}, {0.5, 0.5})), labels).item(), std::log(2.0), 1e-15);
}

TEST(RpnLoss, PerfectPredictionIsNearZero) {
  Graph g;
  const Tensor boxes = box_rows({{0, 0, 4, 8}, {10, 0, 12, 9}});
  const std::vector<double> labels{1.0, 0.0, 1.0};
  const auto l = rpn_loss(g.constant(Tensor({3}, {1.0, 0.0, 1.0})), labels, g.constant(boxes), g.constant(boxes),
                          RegressionLoss::kEIoU);
  EXPECT_NEAR(l.total.item(), 0.0, 1e-6);
}

TEST(RpnLoss, NoPositivesMeansClassificationOnly) {
  Graph g;
  const std::vector<double> labels{0.0, 0.0};
  const auto l = rpn_loss(g.constant(Tensor({2}, {0.3, 0.6})), labels, nd::Var{}, nd::Var{}, RegressionLoss::kEIoU);
  EXPECT_FALSE(l.reg.valid());
  EXPECT_EQ(l.total.item(), l.cls.item());
  EXPECT_NEAR(l.total.item(), -(std::log(0.7) + std::log(0.4)) / 2.0, 1e-15);
}

TEST(RpnLoss, RecomposesFromSubLosses) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  for (RegressionLoss kind : {RegressionLoss::kSmoothL1, RegressionLoss::kIoU, RegressionLoss::kEIoU}) {
    std::vector<double> probs, labels;
    for (int i = 0; i < 16; ++i) {
      probs.push_back(u(rng));
      labels.push_back(i % 3 == 0 ? 1.0 : 0.0);
    }
    std::vector<Box> pred, gt;
    for (int i = 0; i < 5; ++i) {
      gt.push_back(oracle::random_box(rng));
      pred.push_back(overlapping_partner(gt.back(), rng));
    }
    double cls = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) cls += rpn_cls_loss(probs[i], static_cast<int>(labels[i]));
    cls /= static_cast<double>(probs.size());
    double reg = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (kind == RegressionLoss::kEIoU) reg += oracle::eiou(pred[i], gt[i]);
      if (kind == RegressionLoss::kIoU) reg += 1.0 - oracle::box_iou(pred[i], gt[i]);
      if (kind == RegressionLoss::kSmoothL1) {
        const std::vector<double> a{pred[i].x1, pred[i].y1, pred[i].x2, pred[i].y2};
        const std::vector<double> b{gt[i].x1, gt[i].y1, gt[i].x2, gt[i].y2};
        reg += smooth_l1_loss(a, b);
      }
    }
    reg /= static_cast<double>(pred.size());
    Graph g;
    const auto l = rpn_loss(g.constant(Tensor({probs.size()}, probs)), labels, g.constant(box_rows(pred)),
                            g.constant(box_rows(gt)), kind);
    EXPECT_NEAR(l.cls.item(), cls, 1e-12);
    EXPECT_NEAR(l.reg.item(), reg, 1e-12);
    EXPECT_NEAR(l.total.item(), cls + reg, 1e-12);
  }
}

TEST(FastRcnnLoss, Examples) {
  Graph g;
  const Tensor box = box_rows({{3, 4, 9, 20}});
  const std::vector<double> pos{1.0};
  EXPECT_NEAR(fastrcnn_loss(g.constant(Tensor({1}, {1.0 - 1e-7})), pos, g.constant(box), g.constant(box),
                            RegressionLoss::kEIoU)
                  .total.item(),
              0.0, 1e-6);
  EXPECT_NEAR(
      fastrcnn_loss(g.constant(Tensor({1}, {0.5})), pos, g.constant(box), g.constant(box), RegressionLoss::kEIoU)
          .total.item(),
      std::log(2.0), 1e-12);
  const std::vector<double> bg{0.0};
  EXPECT_NEAR(fastrcnn_loss(g.constant(Tensor({1}, {0.2})), bg, nd::Var{}, nd::Var{}, RegressionLoss::kEIoU)
                  .total.item(),
              -std::log(0.8), 1e-15);
}

TEST(FastRcnnLoss, RecomposesMatchedPair) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 100; ++i) {
    const double p = u(rng);
    const Box gt = oracle::random_box(rng), pred = overlapping_partner(gt, rng);
    Graph g;
    const std::vector<double> pos{1.0};
    const auto l = fastrcnn_loss(g.constant(Tensor({1}, {p})), pos, g.constant(box_rows({pred})),
                                 g.constant(box_rows({gt})), RegressionLoss::kEIoU);
    ASSERT_NEAR(l.total.item(), -std::log(p) + oracle::eiou(pred, gt), 1e-12);
  }
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(0.0, 0.0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(0.3, 0.5, 1.0, 1.0), 0.8);
  EXPECT_DOUBLE_EQ(total_loss(0.3, 0.5, 2.0, 0.0), 0.6);
  EXPECT_THROW(total_loss(0.3, 0.5, -1.0, 1.0), std::invalid_argument);
  Graph g;
  const auto t = total_loss(g.constant(Tensor({1}, {0.3})), g.constant(Tensor({1}, {0.5})), 2.0, 1.0);
  EXPECT_DOUBLE_EQ(t.item(), 1.1);
  EXPECT_THROW(total_loss(t, t, 1.0, -0.5), std::invalid_argument);
}

TEST(RegressionLossName, RoundTrip) {
  for (auto k : {RegressionLoss::kSmoothL1, RegressionLoss::kIoU, RegressionLoss::kEIoU})
    EXPECT_EQ(parse_regression_loss(to_string(k)), k);
  EXPECT_THROW(parse_regression_loss("giou"), std::invalid_argument);
}

// --- box coding ----------------------------------------------------------------

TEST(Coding, EncodeDecodeRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Box ref = oracle::random_box(rng), target = overlapping_partner(ref, rng);
    const auto d = encode_box(ref, target);
    const Box back = decode_box(ref, d);
    ASSERT_NEAR(back.x1, target.x1, 1e-9);
    ASSERT_NEAR(back.y2, target.y2, 1e-9);
  }
  const Box ref{0, 0, 4, 8};
  EXPECT_EQ(decode_box(ref, std::vector<double>{0, 0, 0, 0}), ref);
}

TEST(Coding, GraphDecodeMatchesScalar) {
  std::mt19937_64 rng(12);
  std::vector<Box> refs;
  for (int i = 0; i < 10; ++i) refs.push_back(oracle::random_box(rng));
  const Tensor deltas = oracle::random_tensor({10, 4}, rng, -0.5, 0.5);
  Graph g;
  const auto out = tensor_boxes(decode_boxes(g.constant(deltas), refs).value());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto want = decode_box(refs[i], std::span<const double>(deltas.values()).subspan(4 * i, 4));
    EXPECT_NEAR(out[i].x1, want.x1, 1e-12);
    EXPECT_NEAR(out[i].y1, want.y1, 1e-12);
    EXPECT_NEAR(out[i].x2, want.x2, 1e-12);
    EXPECT_NEAR(out[i].y2, want.y2, 1e-12);
  }
}

// --- detector ------------------------------------------------------------------

TEST(Detector, BlankImageGivesProbabilityScores) {
  Detector det(small_detector(), small_encoder(), 1);
  const auto dets = det.detect(Image(154, 120, 0.0));
  for (const auto& d : dets) {
    EXPECT_GE(d.score, 0.5);
    EXPECT_LE(d.score, 1.0);
    EXPECT_TRUE(d.box.valid());
  }
  EXPECT_THROW(det.detect(Image(100, 100, 0.0)), nd::ShapeError);
}

TEST(Detector, SameSeedGivesIdenticalDetections) {
  DatasetParams d;
  const auto train = generate_dataset(d, 8, 21);
  const auto eval = generate_dataset(d, 4, 22);
  auto cfg = small_detector();
  cfg.max_steps = 6;
  cfg.seed = 3;
  const auto a = finetune(train, nullptr, cfg, small_encoder());
  const auto b = finetune(train, nullptr, cfg, small_encoder());
  EXPECT_EQ(nd::encode_checkpoint(a.params), nd::encode_checkpoint(b.params));
  Detector da(cfg, small_encoder(), 0), db(cfg, small_encoder(), 0);
  da.load(a.params);
  db.load(b.params);
  for (const auto& item : eval) {
    const auto x = da.detect(item.image), y = db.detect(item.image);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(x[i].box, y[i].box);
      EXPECT_EQ(x[i].score, y[i].score);
    }
  }
}

TEST(Detector, BackboneComesFromEncoder) {
  Encoder enc(small_encoder(), 5);
  DetectConfig cfg = small_detector();
  cfg.rescale_backbone = false;
  Detector det(cfg, small_encoder(), 6);
  det.load_backbone(enc.params());
  for (const auto& item : det.params()) {
    if (!enc.params().contains(item.name)) continue;
    const auto& src = enc.params().at(item.name);
    EXPECT_TRUE(std::equal(src.values().begin(), src.values().end(), item.tensor.values().begin())) << item.name;
  }
}

TEST(Detector, RescaledBackboneIsAPositiveMultipleOfTheEncoder) {
  Encoder enc(small_encoder(), 5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Large weights and non-zero biases, as after pretraining.
  for (auto& item : enc.params()) {
    if (item.name.rfind("enc.conv", 0) != 0) continue;
    for (double& v : item.tensor.values()) v = item.name.back() == 'b' ? u(rng) : 3.0 * u(rng);
  }
  Detector det(small_detector(), small_encoder(), 6);
  det.load_backbone(enc.params());
  double cumulative = 1.0;
  for (int stage = 1; stage <= 3; ++stage) {
    const std::string w = "enc.conv" + std::to_string(stage) + ".w", b = "enc.conv" + std::to_string(stage) + ".b";
    const auto& src_w = enc.params().at(w).values();
    const auto& dst_w = det.params().at(w).values();
    const double ratio = dst_w[0] / src_w[0];
    EXPECT_GT(ratio, 0.0);
    double sq = 0.0;
    for (std::size_t j = 0; j < src_w.size(); ++j) {
      EXPECT_NEAR(dst_w[j], ratio * src_w[j], 1e-12) << w;
      sq += dst_w[j] * dst_w[j];
    }
    const auto& shape = enc.params().at(w).shape();
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(src_w.size())), std::sqrt(2.0 / fan_in), 1e-12) << w;
    cumulative *= ratio;
    const auto& src_b = enc.params().at(b).values();
    const auto& dst_b = det.params().at(b).values();
    for (std::size_t j = 0; j < src_b.size(); ++j) EXPECT_NEAR(dst_b[j], cumulative * src_b[j], 1e-12) << b;
  }
}

TEST(Detector, MismatchedCheckpointsAreRejected) {
  Detector det(small_detector(), small_encoder(), 1);
  EncoderConfig wide = small_encoder();
  wide.widths = {6, 8, 8, 8};
  EXPECT_THROW(det.load_backbone(Encoder(wide, 1).params()), CheckpointMismatchError);
  EXPECT_THROW(det.load_backbone(nd::ParameterStore{}), CheckpointMismatchError);
  Detector other(small_detector(), wide, 1);
  EXPECT_THROW(det.load(other.params()), CheckpointMismatchError);
  EXPECT_THROW(det.load(nd::ParameterStore{}), CheckpointMismatchError);
}

TEST(Detector, LearningRateDropsOnceAtTheConfiguredEpoch) {
  DetectConfig cfg;
  cfg.lr = 0.02;
  cfg.lr_drop_epoch = 3;
  cfg.lr_drop_factor = 0.25;
  EXPECT_EQ(cfg.lr_at(1), 0.02);
  EXPECT_EQ(cfg.lr_at(2), 0.02);
  EXPECT_EQ(cfg.lr_at(3), 0.005);
  EXPECT_EQ(cfg.lr_at(30), 0.005);
  cfg.lr_drop_epoch = 0;
  EXPECT_EQ(cfg.lr_at(30), 0.02);
  cfg.lr_drop_factor = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Detector, EmptyTrainingSetIsRejected) {
  EXPECT_THROW(finetune(std::vector<LabeledImage>{}, nullptr, small_detector(), small_encoder()),
               std::invalid_argument);
  DetectConfig bad;
  bad.neg_iou = 0.8;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

// Mean of the last 10 of 200 steps against the first step, at full scale.
TEST(Detector, TrainingLossHalvesWithinTwoHundredSteps) {
  std::vector<double> ratios;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto data = generate_dataset(DatasetParams{}, 32, seed);
    DetectConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 1000;
    cfg.max_steps = 200;
    cfg.lr_drop_epoch = 0;
    const auto r = finetune(data, nullptr, cfg, EncoderConfig{});
    ASSERT_EQ(r.steps.size(), 200u);
    double tail = 0.0;
    for (std::size_t i = 190; i < 200; ++i) tail += r.steps[i].loss;
    ratios.push_back(tail / 10.0 / r.steps.front().loss);
  }
  EXPECT_LE(oracle::median(ratios), 0.5) << ratios[0] << " " << ratios[1] << " " << ratios[2];
}
