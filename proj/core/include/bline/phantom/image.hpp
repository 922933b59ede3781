// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bline {

/// Single-channel floating-point image, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {
    if (w == 0 || h == 0) throw std::invalid_argument("image extents must be positive");
  }

  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace bline
