// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bline {

/// Axis-aligned rectangle in pixel-edge coordinates: a box covering pixel
/// columns [x1, x2) and rows [y1, y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool inside(double w, double h) const { return x1 >= 0.0 && y1 >= 0.0 && x2 <= w && y2 <= h; }

  friend bool operator==(const Box&, const Box&) = default;
};

class DegenerateBoxError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Box& b);

/// Intersection over union; 0 when either box has zero area.
double iou(const Box& a, const Box& b);

Box clip(const Box& b, double width, double height);

}  // namespace bline
