// SPDX-License-Identifier: Apache-2.0
#include "bline/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace bline {
namespace {

constexpr std::size_t kPleuraThickness = 3;
constexpr std::size_t kAlineThickness = 2;
constexpr int kEdgeMargin = 2;
constexpr int kMinGap = 2;

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Column {
  int x = 0;
  int width = 0;
  double intensity = 0.0;
  bool labelled = false;
};

// Places `widths` left to right with at least kMinGap between neighbours and
// kEdgeMargin at the borders, spreading the remaining slack at random.
std::vector<int> place_columns(const std::vector<int>& widths, int image_width, std::mt19937_64& rng) {
  const int n = static_cast<int>(widths.size());
  if (n == 0) return {};
  const int used = std::accumulate(widths.begin(), widths.end(), 0) + (n - 1) * kMinGap + 2 * kEdgeMargin;
  const int slack = image_width - used;
  if (slack < 0) {
    throw PhantomError("cannot place " + std::to_string(n) + " vertical bands without overlap in width " +
                       std::to_string(image_width));
  }
  std::vector<int> cuts(static_cast<std::size_t>(n));
  for (auto& c : cuts) c = uniform_int(rng, 0, slack);
  std::sort(cuts.begin(), cuts.end());
  std::vector<int> xs(static_cast<std::size_t>(n));
  int cursor = kEdgeMargin;
  for (int i = 0; i < n; ++i) {
    xs[static_cast<std::size_t>(i)] = cursor + cuts[static_cast<std::size_t>(i)];
    cursor += widths[static_cast<std::size_t>(i)] + kMinGap;
  }
  return xs;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void PhantomParams::validate() const {
  if (width < 32 || height < 32) throw PhantomError("phantom width and height must be >= 32");
  if (!(pleural_row_frac > 0.0 && pleural_row_frac < 0.5)) throw PhantomError("pleural_row_frac must lie in (0, 0.5)");
  if (n_blines < 0 || n_blines > 6) throw PhantomError("n_blines must lie in 0..6");
  if (n_alines < 0 || n_alines > 3) throw PhantomError("n_alines must lie in 0..3");
  if (n_confusers < 0 || n_confusers > 4) throw PhantomError("n_confusers must lie in 0..4");
  if (bline_width_px.lo < 1 || bline_width_px.lo > bline_width_px.hi) throw PhantomError("bad bline_width_px range");
  if (!(bline_intensity.lo >= 0.0 && bline_intensity.lo <= bline_intensity.hi && bline_intensity.hi <= 1.0)) {
    throw PhantomError("bline_intensity must be a non-empty range inside [0,1]");
  }
  for (double level : {tissue_level, lung_level, pleura_level, aline_level}) {
    if (!(level >= 0.0 && level <= 1.0)) throw PhantomError("background levels must lie in [0,1]");
  }
  if (!(speckle_sigma >= 0.0)) throw PhantomError("speckle_sigma must be non-negative");
  if (!(decay >= 0.0)) throw PhantomError("decay must be non-negative");
}

std::size_t PhantomParams::pleural_row() const {
  return static_cast<std::size_t>(std::lround(pleural_row_frac * static_cast<double>(height)));
}

LabeledImage generate_phantom(const PhantomParams& params) {
  params.validate();
  std::mt19937_64 rng(params.seed);
  const std::size_t w = params.width;
  const std::size_t h = params.height;
  const std::size_t pleura = params.pleural_row();
  const double lung_depth = static_cast<double>(h - pleura);

  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const double level = y < pleura ? params.tissue_level
                         : y < pleura + kPleuraThickness ? params.pleura_level
                                                         : params.lung_level;
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = level;
  }

  // Reverberation lines repeat at multiples of the pleural depth.
  for (int k = 1; k <= params.n_alines; ++k) {
    const std::size_t row = pleura * static_cast<std::size_t>(k + 1);
    if (row + kAlineThickness > h) break;
    const double level = params.aline_level * std::exp(-params.decay * static_cast<double>(row - pleura) / lung_depth);
    for (std::size_t y = row; y < row + kAlineThickness; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(x, y) = std::max(img.at(x, y), level);
  }

  const int n_columns = params.n_blines + params.n_confusers;
  std::vector<Column> columns(static_cast<std::size_t>(n_columns));
  std::vector<int> widths;
  for (int i = 0; i < n_columns; ++i) {
    auto& c = columns[static_cast<std::size_t>(i)];
    c.width = uniform_int(rng, params.bline_width_px.lo, params.bline_width_px.hi);
    c.intensity = uniform_real(rng, params.bline_intensity.lo, params.bline_intensity.hi);
    c.labelled = i < params.n_blines;
    widths.push_back(c.width);
  }
  // Interleave labelled and unlabelled bands at random before placement.
  std::vector<std::size_t> order(columns.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> ordered_widths;
  for (auto i : order) ordered_widths.push_back(columns[i].width);
  const auto xs = place_columns(ordered_widths, static_cast<int>(w), rng);
  for (std::size_t k = 0; k < order.size(); ++k) columns[order[k]].x = xs[k];

  LabeledImage out;
  for (const auto& c : columns) {
    std::size_t top = pleura;
    std::size_t bottom = h;
    if (!c.labelled) {
      top = pleura + kPleuraThickness;
      const double frac = uniform_real(rng, 0.15, 0.5);
      bottom = top + static_cast<std::size_t>(std::max(4.0, std::floor(frac * lung_depth)));
      bottom = std::min(bottom, h - 1);
    }
    for (std::size_t y = top; y < bottom; ++y) {
      const double level = c.intensity * std::exp(-params.decay * static_cast<double>(y - pleura) / lung_depth);
      for (int x = c.x; x < c.x + c.width; ++x) {
        auto& px = img.at(static_cast<std::size_t>(x), y);
        px = std::max(px, level);
      }
    }
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& c = columns[order[k]];
    if (c.labelled) {
      out.boxes.push_back(Box{static_cast<double>(c.x), static_cast<double>(pleura),
                              static_cast<double>(c.x + c.width), static_cast<double>(h)});
    }
  }
  std::sort(out.boxes.begin(), out.boxes.end(), [](const Box& a, const Box& b) { return a.x1 < b.x1; });

  if (params.speckle_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& v : img.pixels) v = std::clamp(v * (1.0 + params.speckle_sigma * noise(rng)), 0.0, 1.0);
  }
  out.image = std::move(img);
  char id[64];
  std::snprintf(id, sizeof id, "phantom_seed_%016llx", static_cast<unsigned long long>(params.seed));
  out.source_id = id;
  return out;
}

std::vector<LabeledImage> generate_dataset(const DatasetParams& params, std::size_t count, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(seed, i));
    PhantomParams p = params.base;
    p.n_blines = uniform_int(rng, params.blines.lo, params.blines.hi);
    p.n_alines = uniform_int(rng, params.alines.lo, params.alines.hi);
    p.n_confusers = uniform_int(rng, params.confusers.lo, params.confusers.hi);
    p.seed = rng();
    auto item = generate_phantom(p);
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%05zu", i);
    item.source_id = id;
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace bline
