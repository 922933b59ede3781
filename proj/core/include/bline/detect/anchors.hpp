// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "bline/detect/box.hpp"

namespace bline {

struct AnchorConfig {
  std::vector<double> scales{24.0, 32.0, 40.0};
  /// Width over height.
  std::vector<double> ratios{1.0 / 4.0, 1.0 / 6.0, 1.0 / 8.0};

  std::size_t per_cell() const { return scales.size() * ratios.size(); }
  void validate() const;
};

struct Anchor {
  Box box;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t scale_index = 0;
  std::size_t ratio_index = 0;
};

/// Unclipped extents of an anchor: w = s*sqrt(r), h = s/sqrt(r).
double anchor_width(double scale, double ratio);
double anchor_height(double scale, double ratio);

/// rows*cols*|scales|*|ratios| anchors, ordered by row, column, scale, ratio.
/// Cell (r,c) is centred at ((c+0.5)*W/cols, (r+0.5)*H/rows); boxes are
/// clipped to the image.
std::vector<Anchor> generate_anchors(std::size_t rows, std::size_t cols, double image_width, double image_height,
                                     const AnchorConfig& config);

enum class AnchorKind { kNegative, kIgnore, kPositive };

struct AnchorLabel {
  AnchorKind kind = AnchorKind::kIgnore;
  std::optional<std::size_t> matched_gt;
};

/// Positive when IoU with some gt >= pos_iou or the anchor is the lowest-index
/// argmax for a gt with positive overlap; negative when max IoU <= neg_iou.
/// matched_gt is the gt of highest IoU (lowest index on ties), or the gt that
/// claimed the anchor through the argmax rule.
std::vector<AnchorLabel> match_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gt, double pos_iou,
                                       double neg_iou);

}  // namespace bline
