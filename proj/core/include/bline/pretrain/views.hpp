// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "bline/phantom/image.hpp"

namespace bline {

/// Augmentation recipe for the query/key views of one image.
struct ViewConfig {
  std::size_t view_width = 48;
  std::size_t view_height = 36;
  std::size_t grid = 3;
  double min_crop_area = 0.6;
  double flip_prob = 0.5;
  /// Brightness and contrast factors are drawn from [1 - jitter, 1 + jitter].
  double jitter = 0.2;
  /// Additive Gaussian noise sigma is drawn from [0, max_noise_sigma].
  double max_noise_sigma = 0.02;
  /// Disables every random transform: both views are the resized source.
  bool identity = false;

  void validate() const;
};

/// Query/key global views and their local patch tilings.
struct ViewSet {
  Image global_q;
  Image global_k;
  std::vector<Image> patches_q;
  std::vector<Image> patches_k;
};

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height);
/// Sub-image [x0, x0+w) x [y0, y0+h).
Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);
Image flip_horizontal(const Image& src);
/// grid x grid equal tiles, row-major; extents must divide evenly.
std::vector<Image> tile(const Image& src, std::size_t grid);

ViewSet make_views(const Image& image, std::uint64_t seed, const ViewConfig& config);

}  // namespace bline
