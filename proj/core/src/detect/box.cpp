// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/box.hpp"

#include <algorithm>
#include <sstream>

namespace bline {

std::string to_string(const Box& b) {
  std::ostringstream os;
  os << '(' << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ')';
  return os.str();
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  if (a == b) return 1.0;
  return std::min(1.0, inter / uni);
}

Box clip(const Box& b, double width, double height) {
  return Box{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
             std::clamp(b.y2, 0.0, height)};
}

}  // namespace bline
