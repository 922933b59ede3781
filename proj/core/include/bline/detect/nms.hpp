// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bline/detect/box.hpp"

namespace bline {

struct Detection {
  Box box;
  double score = 0.0;
};

/// Drops scores below `score_threshold`, then keeps boxes in descending score
/// order (lower index first on ties), suppressing any box whose IoU with a
/// kept box is >= nms_iou. Output is in keep order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double nms_iou, double score_threshold);

/// Same, returning indices into `dets`.
std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, double nms_iou, double score_threshold);

}  // namespace bline
