// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bline/ndgrad/ops.hpp"

namespace bline {

using nd::Var;

RegressionLoss parse_regression_loss(std::string_view name) {
  if (name == "smooth_l1") return RegressionLoss::kSmoothL1;
  if (name == "iou") return RegressionLoss::kIoU;
  if (name == "eiou") return RegressionLoss::kEIoU;
  throw std::invalid_argument("unknown regression loss '" + std::string(name) + "' (expected smooth_l1, iou or eiou)");
}

std::string to_string(RegressionLoss kind) {
  switch (kind) {
    case RegressionLoss::kSmoothL1:
      return "smooth_l1";
    case RegressionLoss::kIoU:
      return "iou";
    case RegressionLoss::kEIoU:
      return "eiou";
  }
  return "?";
}

double iou_loss(const Box& pred, const Box& gt) {
  if (!pred.valid() || !gt.valid()) throw DegenerateBoxError("iou_loss: degenerate box");
  return 1.0 - iou(pred, gt);
}

double eiou_loss(const Box& pred, const Box& gt) {
  if (!pred.valid() || !gt.valid()) throw DegenerateBoxError("eiou_loss: degenerate box");
  const double wc = std::max(pred.x2, gt.x2) - std::min(pred.x1, gt.x1);
  const double hc = std::max(pred.y2, gt.y2) - std::min(pred.y1, gt.y1);
  const double dx = pred.cx() - gt.cx(), dy = pred.cy() - gt.cy();
  const double dw = pred.width() - gt.width(), dh = pred.height() - gt.height();
  return 1.0 - iou(pred, gt) + (dx * dx + dy * dy) / (wc * wc + hc * hc) + dw * dw / (wc * wc) + dh * dh / (hc * hc);
}

double smooth_l1_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw nd::ShapeError("smooth_l1_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = std::abs(pred[i] - target[i]);
    s += a < 1.0 ? 0.5 * a * a : a - 0.5;
  }
  return s;
}

double rpn_cls_loss(double p, int p_star) {
  if (p_star != 0 && p_star != 1) throw std::invalid_argument("rpn_cls_loss: label must be 0 or 1");
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return p_star == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double total_loss(double l_rpn, double l_fastrcnn, double lambda_rpn, double lambda_fastrcnn) {
  if (lambda_rpn < 0.0 || lambda_fastrcnn < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  return lambda_rpn * l_rpn + lambda_fastrcnn * l_fastrcnn;
}

namespace {

struct Corners {
  Var x1, y1, x2, y2;
};

Corners corners(Var boxes) {
  if (boxes.value().rank() != 2 || boxes.dim(1) != 4) throw nd::ShapeError("boxes must be [P,4]");
  return {nd::slice(boxes, 1, 0, 1), nd::slice(boxes, 1, 1, 2), nd::slice(boxes, 1, 2, 3), nd::slice(boxes, 1, 3, 4)};
}

void check_pair(Var pred, Var gt) {
  if (pred.shape() != gt.shape()) {
    throw nd::ShapeError("box loss shapes differ: " + nd::shape_string(pred.shape()) + " vs " +
                         nd::shape_string(gt.shape()));
  }
  for (Var v : {pred, gt}) {
    const auto& t = v.value();
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      if (!(t[4 * i] < t[4 * i + 2] && t[4 * i + 1] < t[4 * i + 3])) throw DegenerateBoxError("box loss on a degenerate box");
    }
  }
}

struct Overlap {
  Var iou, w, h, gw, gh, wc, hc;
  Corners p, g;
};

Overlap overlap(Var pred, Var gt) {
  check_pair(pred, gt);
  Overlap o;
  o.p = corners(pred);
  o.g = corners(gt);
  o.w = nd::sub(o.p.x2, o.p.x1);
  o.h = nd::sub(o.p.y2, o.p.y1);
  o.gw = nd::sub(o.g.x2, o.g.x1);
  o.gh = nd::sub(o.g.y2, o.g.y1);
  const Var iw = nd::relu(nd::sub(nd::minimum(o.p.x2, o.g.x2), nd::maximum(o.p.x1, o.g.x1)));
  const Var ih = nd::relu(nd::sub(nd::minimum(o.p.y2, o.g.y2), nd::maximum(o.p.y1, o.g.y1)));
  const Var inter = nd::mul(iw, ih);
  const Var uni = nd::sub(nd::add(nd::mul(o.w, o.h), nd::mul(o.gw, o.gh)), inter);
  o.iou = nd::div(inter, uni);
  o.wc = nd::sub(nd::maximum(o.p.x2, o.g.x2), nd::minimum(o.p.x1, o.g.x1));
  o.hc = nd::sub(nd::maximum(o.p.y2, o.g.y2), nd::minimum(o.p.y1, o.g.y1));
  return o;
}

Var flat(Var column) { return nd::reshape(column, nd::Shape{column.dim(0)}); }

}  // namespace

Var iou_loss(Var pred, Var gt) {
  const auto o = overlap(pred, gt);
  return flat(nd::add_scalar(nd::scale(o.iou, -1.0), 1.0));
}

Var eiou_loss(Var pred, Var gt) {
  const auto o = overlap(pred, gt);
  // Centre distance; the 1/2 of each centre cancels into a factor 1/4.
  const Var dx = nd::sub(nd::add(o.p.x1, o.p.x2), nd::add(o.g.x1, o.g.x2));
  const Var dy = nd::sub(nd::add(o.p.y1, o.p.y2), nd::add(o.g.y1, o.g.y2));
  const Var rho2 = nd::scale(nd::add(nd::square(dx), nd::square(dy)), 0.25);
  const Var wc2 = nd::square(o.wc), hc2 = nd::square(o.hc);
  Var loss = nd::add_scalar(nd::scale(o.iou, -1.0), 1.0);
  loss = nd::add(loss, nd::div(rho2, nd::add(wc2, hc2)));
  loss = nd::add(loss, nd::div(nd::square(nd::sub(o.w, o.gw)), wc2));
  loss = nd::add(loss, nd::div(nd::square(nd::sub(o.h, o.gh)), hc2));
  return flat(loss);
}

Var smooth_l1_loss(Var pred, Var target) {
  if (pred.shape() != target.shape() || pred.value().rank() != 2) {
    throw nd::ShapeError("smooth_l1_loss: expected equal [P,D] shapes");
  }
  const Var d = nd::sub(pred, target);
  const Var a = nd::add(nd::relu(d), nd::relu(nd::scale(d, -1.0)));
  const Var s = nd::add(nd::scale(nd::square(nd::clamp(a, 0.0, 1.0)), 0.5), nd::relu(nd::add_scalar(a, -1.0)));
  const Var ones = pred.graph()->constant(nd::Tensor(pred.shape(), 1.0));
  return flat(nd::rowwise_dot(s, ones));
}

Var bce_loss(Var probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw nd::ShapeError("bce_loss: one label per probability required");
  for (double l : labels) {
    if (l != 0.0 && l != 1.0) throw std::invalid_argument("bce_loss: labels must be 0 or 1");
  }
  nd::Graph& g = *probs.graph();
  const Var p = nd::clamp(nd::reshape(probs, nd::Shape{probs.size()}), kProbClamp, 1.0 - kProbClamp);
  const Var y = g.constant(nd::Tensor({labels.size()}, std::vector<double>(labels.begin(), labels.end())));
  const Var one_minus_y = nd::add_scalar(nd::scale(y, -1.0), 1.0);
  const Var ll = nd::add(nd::mul(y, nd::log(p)), nd::mul(one_minus_y, nd::log(nd::add_scalar(nd::scale(p, -1.0), 1.0))));
  return nd::scale(nd::mean(ll), -1.0);
}

Var regression_loss(Var pred, Var target, RegressionLoss kind) {
  switch (kind) {
    case RegressionLoss::kSmoothL1:
      return nd::mean(smooth_l1_loss(pred, target));
    case RegressionLoss::kIoU:
      return nd::mean(iou_loss(pred, target));
    case RegressionLoss::kEIoU:
      return nd::mean(eiou_loss(pred, target));
  }
  throw std::invalid_argument("unknown regression loss");
}

namespace {

LossParts classify_and_regress(Var probs, std::span<const double> labels, Var pred, Var target, RegressionLoss kind) {
  LossParts out;
  out.cls = bce_loss(probs, labels);
  out.total = out.cls;
  if (pred.valid() != target.valid()) throw std::invalid_argument("regression prediction and target must come together");
  if (pred.valid()) {
    out.reg = regression_loss(pred, target, kind);
    out.total = nd::add(out.cls, out.reg);
  }
  return out;
}

}  // namespace

LossParts rpn_loss(Var probs, std::span<const double> labels, Var pred, Var target, RegressionLoss kind) {
  return classify_and_regress(probs, labels, pred, target, kind);
}

LossParts fastrcnn_loss(Var probs, std::span<const double> labels, Var pred, Var target, RegressionLoss kind) {
  return classify_and_regress(probs, labels, pred, target, kind);
}

Var total_loss(Var l_rpn, Var l_fastrcnn, double lambda_rpn, double lambda_fastrcnn) {
  if (lambda_rpn < 0.0 || lambda_fastrcnn < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  return nd::add(nd::scale(l_rpn, lambda_rpn), nd::scale(l_fastrcnn, lambda_fastrcnn));
}

}  // namespace bline
