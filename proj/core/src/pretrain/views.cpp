// SPDX-License-Identifier: Apache-2.0
#include "bline/pretrain/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace bline {

void ViewConfig::validate() const {
  if (grid == 0) throw std::invalid_argument("view grid must be positive");
  if (view_width == 0 || view_height == 0 || view_width % grid != 0 || view_height % grid != 0) {
    throw std::invalid_argument("view extents must be positive multiples of the patch grid");
  }
  if (!(min_crop_area > 0.0 && min_crop_area <= 1.0)) throw std::invalid_argument("min_crop_area must lie in (0,1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("flip_prob must lie in [0,1]");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw std::invalid_argument("jitter must lie in [0,1)");
  if (!(max_noise_sigma >= 0.0)) throw std::invalid_argument("max_noise_sigma must be non-negative");
}

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  Image out(width, height);
  if (width == src.width && height == src.height) {
    out.pixels = src.pixels;
    return out;
  }
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    // Pixel-centre alignment.
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = src.at(x0, y0) * (1 - tx) + src.at(x1, y0) * tx;
      const double bot = src.at(x0, y1) * (1 - tx) + src.at(x1, y1) * tx;
      out.at(x, y) = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > src.width || y0 + h > src.height) throw std::invalid_argument("crop exceeds image bounds");
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>((y0 + y) * src.width + x0), w,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * w));
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out = src;
  for (std::size_t y = 0; y < src.height; ++y)
    std::reverse(out.pixels.begin() + static_cast<std::ptrdiff_t>(y * src.width),
                 out.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * src.width));
  return out;
}

std::vector<Image> tile(const Image& src, std::size_t grid) {
  if (grid == 0 || src.width % grid != 0 || src.height % grid != 0) {
    throw std::invalid_argument("image extents must be divisible by the patch grid");
  }
  const std::size_t tw = src.width / grid, th = src.height / grid;
  std::vector<Image> tiles;
  tiles.reserve(grid * grid);
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c) tiles.push_back(crop(src, c * tw, r * th, tw, th));
  return tiles;
}

namespace {

Image augment(const Image& src, const ViewConfig& cfg, std::mt19937_64& rng) {
  if (cfg.identity) return resize_bilinear(src, cfg.view_width, cfg.view_height);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double area = cfg.min_crop_area + (1.0 - cfg.min_crop_area) * unit(rng);
  const double log_ratio = std::log(3.0 / 4.0) + (std::log(4.0 / 3.0) - std::log(3.0 / 4.0)) * unit(rng);
  const double ratio = std::exp(log_ratio);
  const double total = area * static_cast<double>(src.width * src.height);
  auto cw = static_cast<std::size_t>(std::lround(std::sqrt(total * ratio * src.width / src.height)));
  auto ch = static_cast<std::size_t>(std::lround(std::sqrt(total / ratio * src.height / src.width)));
  cw = std::clamp<std::size_t>(cw, 1, src.width);
  ch = std::clamp<std::size_t>(ch, 1, src.height);
  const auto x0 = std::uniform_int_distribution<std::size_t>(0, src.width - cw)(rng);
  const auto y0 = std::uniform_int_distribution<std::size_t>(0, src.height - ch)(rng);
  Image view = resize_bilinear(crop(src, x0, y0, cw, ch), cfg.view_width, cfg.view_height);

  if (unit(rng) < cfg.flip_prob) view = flip_horizontal(view);

  const double brightness = 1.0 + cfg.jitter * (2.0 * unit(rng) - 1.0);
  const double contrast = 1.0 + cfg.jitter * (2.0 * unit(rng) - 1.0);
  const double mean = std::accumulate(view.pixels.begin(), view.pixels.end(), 0.0) / static_cast<double>(view.pixels.size());
  const double sigma = cfg.max_noise_sigma * unit(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : view.pixels) {
    v = ((v - mean) * contrast + mean) * brightness;
    if (sigma > 0.0) v += sigma * noise(rng);
    v = std::clamp(v, 0.0, 1.0);
  }
  return view;
}

}  // namespace

ViewSet make_views(const Image& image, std::uint64_t seed, const ViewConfig& config) {
  config.validate();
  if (image.width < 2 * config.grid || image.height < 2 * config.grid) {
    throw std::invalid_argument("image too small to tile into a " + std::to_string(config.grid) + "x" +
                                std::to_string(config.grid) + " patch grid");
  }
  std::mt19937_64 rng(seed);
  ViewSet views;
  views.global_q = augment(image, config, rng);
  views.global_k = augment(image, config, rng);
  views.patches_q = tile(views.global_q, config.grid);
  views.patches_k = tile(views.global_k, config.grid);
  return views;
}

}  // namespace bline
