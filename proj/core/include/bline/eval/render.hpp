// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bline/detect/box.hpp"
#include "bline/phantom/image.hpp"

namespace bline {

inline constexpr double kGtIntensity = 1.0;
inline constexpr double kDetectionIntensity = 0.6;

/// Copy of `image` with each detection outlined at 0.6 (1 px) plus a vertical
/// line through its centre column, then each gt box outlined at 1.0 (2 px).
/// Box (x1,y1,x2,y2) covers pixels [x1,x2) x [y1,y2) after rounding; the
/// outline is drawn inside that range.
Image render_boxes(const Image& image, const std::vector<Box>& dets, const std::vector<Box>& gts);

}  // namespace bline
