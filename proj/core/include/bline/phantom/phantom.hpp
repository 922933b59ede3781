// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bline/detect/box.hpp"
#include "bline/phantom/image.hpp"

namespace bline {

class PhantomError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Geometry and appearance of one synthetic lung-ultrasound frame.
///
/// The default 154x120 frame keeps the 616:480 aspect ratio of a clinical
/// crop at quarter resolution.
struct PhantomParams {
  std::size_t width = 154;
  std::size_t height = 120;
  double pleural_row_frac = 0.18;
  int n_blines = 0;
  IntRange bline_width_px{3, 8};
  RealRange bline_intensity{0.6, 1.0};
  int n_alines = 0;
  /// Short sub-pleural vertical spots. Never labelled.
  int n_confusers = 0;
  double speckle_sigma = 0.08;
  /// Intensity of vertical bands falls off as exp(-decay * depth / lung_depth).
  double decay = 0.3;
  std::uint64_t seed = 0;

  double tissue_level = 0.30;
  double lung_level = 0.12;
  double pleura_level = 0.85;
  double aline_level = 0.35;

  /// Throws PhantomError on out-of-range fields.
  void validate() const;
  /// Row index of the pleural line.
  std::size_t pleural_row() const;
};

struct LabeledImage {
  Image image;
  std::vector<Box> boxes;
  std::string source_id;
};

/// Renders a phantom. B-line boxes span [pleural_row, height) vertically and
/// exactly cover their band's columns. Bit-identical for identical params.
LabeledImage generate_phantom(const PhantomParams& params);

/// Per-image randomisation used to build a dataset.
struct DatasetParams {
  PhantomParams base;
  IntRange blines{0, 4};
  IntRange alines{0, 3};
  IntRange confusers{0, 2};
};

/// `count` phantoms; image i uses a seed derived from (seed, i) and counts
/// drawn uniformly from the configured ranges.
std::vector<LabeledImage> generate_dataset(const DatasetParams& params, std::size_t count, std::uint64_t seed);

/// SplitMix64 finaliser, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace bline
