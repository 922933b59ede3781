// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bline/detect/box.hpp"
#include "bline/phantom/image.hpp"

namespace bline {

class FileFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- Binary portable graymap -------------------------------------------------

/// "P5" graymap, maxval 255, row-major. Pixels are clamped to [0,1] and
/// rounded, so a round trip is exact to within 1/510. A non-empty `comment`
/// is written as a single "# ..." header line.
std::string write_pgm(const Image& image, std::string_view comment = {});
/// Accepts any maxval in 1..255 and header comments.
Image read_pgm(std::string_view bytes);

void save_pgm(const std::filesystem::path& path, const Image& image, std::string_view comment = {});
Image load_pgm(const std::filesystem::path& path);

// --- Annotations -------------------------------------------------------------

struct AnnotatedBox {
  Box box;
  std::optional<double> score;
};

struct AnnotationRecord {
  std::string image_path;
  std::vector<AnnotatedBox> boxes;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline bool operator==(const AnnotatedBox& a, const AnnotatedBox& b) { return a.box == b.box && a.score == b.score; }

/// Native text format, one record per line:
///   <image path> [x1,y1,x2,y2,bline[,score]]...
/// Coordinates are integers; lines starting with '#' are comments.
/// `header` lines (without '#') are emitted as comments first.
std::string write_annotations(const std::vector<AnnotationRecord>& records,
                              const std::vector<std::string>& header = {});
/// When image extents are given, every box must lie inside them.
std::vector<AnnotationRecord> read_annotations(std::string_view text, std::optional<double> image_width = {},
                                               std::optional<double> image_height = {});

/// COCO-style dataset object: images (id = record index, file_name),
/// annotations (bbox = [x, y, width, height], category_id 1, score when
/// present) and the single "bline" category.
std::string to_coco_json(const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> from_coco_json(std::string_view json);
/// COCO detection-results array: {image_id, category_id, bbox, score}.
std::string to_coco_results_json(const std::vector<AnnotationRecord>& records);

// --- Files -------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bline
