// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>

#include "bline/detect/box.hpp"
#include "bline/ndgrad/graph.hpp"

namespace bline {

enum class RegressionLoss { kSmoothL1, kIoU, kEIoU };

RegressionLoss parse_regression_loss(std::string_view name);
std::string to_string(RegressionLoss kind);

// Scalar forms.

/// 1 - IoU + rho^2(centres)/(wc^2+hc^2) + (w-wg)^2/wc^2 + (h-hg)^2/hc^2,
/// with (wc, hc) the extents of the smallest enclosing box.
double eiou_loss(const Box& pred, const Box& gt);
double iou_loss(const Box& pred, const Box& gt);
/// Summed over coordinates.
double smooth_l1_loss(std::span<const double> pred, std::span<const double> target);
/// Binary cross-entropy with p clamped to [1e-7, 1-1e-7].
double rpn_cls_loss(double p, int p_star);
double total_loss(double l_rpn, double l_fastrcnn, double lambda_rpn, double lambda_fastrcnn);

inline constexpr double kProbClamp = 1e-7;

// Graph forms. Boxes are [P,4] rows of (x1,y1,x2,y2); per-row outputs are [P].

nd::Var eiou_loss(nd::Var pred, nd::Var gt);
nd::Var iou_loss(nd::Var pred, nd::Var gt);
/// Per-row sum of the elementwise smooth-l1 of pred - target.
nd::Var smooth_l1_loss(nd::Var pred, nd::Var target);

/// Mean binary cross-entropy of probabilities [S] (any shape with S values)
/// against 0/1 labels, after clamping.
nd::Var bce_loss(nd::Var probs, std::span<const double> labels);

/// Mean over rows of the configured regression loss. `pred` and `target`
/// hold corner boxes for iou/eiou and centre/size offsets for smooth-l1.
nd::Var regression_loss(nd::Var pred, nd::Var target, RegressionLoss kind);

struct LossParts {
  nd::Var total;
  nd::Var cls;
  /// Invalid when there were no positives (the term is then 0).
  nd::Var reg;
};

/// Classification over sampled anchors plus regression over the positive
/// ones. `pred`/`target` may be invalid Vars when there are no positives.
LossParts rpn_loss(nd::Var probs, std::span<const double> labels, nd::Var pred, nd::Var target,
                   RegressionLoss kind);

/// -log p for proposals labelled 1 and -log(1-p) for background, averaged,
/// plus the regression loss averaged over positive proposals.
LossParts fastrcnn_loss(nd::Var probs, std::span<const double> labels, nd::Var pred, nd::Var target,
                        RegressionLoss kind);

nd::Var total_loss(nd::Var l_rpn, nd::Var l_fastrcnn, double lambda_rpn, double lambda_fastrcnn);

}  // namespace bline
