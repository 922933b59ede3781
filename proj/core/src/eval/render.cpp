// SPDX-License-Identifier: Apache-2.0
#include "bline/eval/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bline {

namespace {

struct PixelRect {
  long x0, y0, x1, y1;  // inclusive
};

PixelRect to_pixels(const Box& b, const Image& image) {
  if (!b.valid() || !b.inside(static_cast<double>(image.width), static_cast<double>(image.height))) {
    throw std::invalid_argument("box " + to_string(b) + " is outside the image");
  }
  const long x0 = std::lround(b.x1), y0 = std::lround(b.y1);
  const long x1 = std::max(x0, std::lround(b.x2) - 1), y1 = std::max(y0, std::lround(b.y2) - 1);
  return {x0, y0, std::min<long>(x1, static_cast<long>(image.width) - 1),
          std::min<long>(y1, static_cast<long>(image.height) - 1)};
}

void outline(Image& img, const PixelRect& r, long thickness, double value) {
  for (long y = r.y0; y <= r.y1; ++y) {
    for (long x = r.x0; x <= r.x1; ++x) {
      const bool edge = x - r.x0 < thickness || r.x1 - x < thickness || y - r.y0 < thickness || r.y1 - y < thickness;
      if (edge) img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = value;
    }
  }
}

}  // namespace

Image render_boxes(const Image& image, const std::vector<Box>& dets, const std::vector<Box>& gts) {
  Image out = image;
  for (const auto& b : dets) {
    const auto r = to_pixels(b, image);
    outline(out, r, 1, kDetectionIntensity);
    const long cx = (r.x0 + r.x1) / 2;
    for (long y = r.y0; y <= r.y1; ++y) out.at(static_cast<std::size_t>(cx), static_cast<std::size_t>(y)) = kDetectionIntensity;
  }
  for (const auto& b : gts) outline(out, to_pixels(b, image), 2, kGtIntensity);
  return out;
}

}  // namespace bline
