// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/anchors.hpp"

#include <cmath>
#include <stdexcept>

namespace bline {

void AnchorConfig::validate() const {
  if (scales.empty() || ratios.empty()) throw std::invalid_argument("anchors need at least one scale and one ratio");
  for (double s : scales) {
    if (!(s > 0.0)) throw std::invalid_argument("anchor scales must be positive");
  }
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("anchor ratios must be positive");
  }
}

double anchor_width(double scale, double ratio) { return scale * std::sqrt(ratio); }
double anchor_height(double scale, double ratio) { return scale / std::sqrt(ratio); }

std::vector<Anchor> generate_anchors(std::size_t rows, std::size_t cols, double image_width, double image_height,
                                     const AnchorConfig& config) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("anchor grid must have at least one cell");
  if (!(image_width > 0.0 && image_height > 0.0)) throw std::invalid_argument("image extents must be positive");
  config.validate();
  std::vector<Anchor> out;
  out.reserve(rows * cols * config.per_cell());
  const double step_x = image_width / static_cast<double>(cols);
  const double step_y = image_height / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double cy = (static_cast<double>(r) + 0.5) * step_y;
    for (std::size_t c = 0; c < cols; ++c) {
      const double cx = (static_cast<double>(c) + 0.5) * step_x;
      for (std::size_t si = 0; si < config.scales.size(); ++si) {
        for (std::size_t ri = 0; ri < config.ratios.size(); ++ri) {
          const double w = anchor_width(config.scales[si], config.ratios[ri]);
          const double h = anchor_height(config.scales[si], config.ratios[ri]);
          const Box raw{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
          out.push_back(Anchor{clip(raw, image_width, image_height), r, c, si, ri});
        }
      }
    }
  }
  return out;
}

std::vector<AnchorLabel> match_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gt, double pos_iou,
                                       double neg_iou) {
  if (!(neg_iou > 0.0 && neg_iou <= pos_iou && pos_iou < 1.0)) {
    throw std::invalid_argument("anchor thresholds must satisfy 0 < neg_iou <= pos_iou < 1");
  }
  std::vector<AnchorLabel> labels(anchors.size());
  if (gt.empty()) {
    for (auto& l : labels) l.kind = AnchorKind::kNegative;
    return labels;
  }
  std::vector<std::vector<double>> overlap(anchors.size(), std::vector<double>(gt.size()));
  std::vector<std::size_t> cover(gt.size(), 0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      overlap[a][g] = iou(anchors[a], gt[g]);
      if (overlap[a][g] > best) {
        best = overlap[a][g];
        best_g = g;
      }
    }
    if (best >= pos_iou) {
      labels[a] = {AnchorKind::kPositive, best_g};
      ++cover[best_g];
    } else if (best <= neg_iou) {
      labels[a] = {AnchorKind::kNegative, std::nullopt};
    }
  }
  // Fallback: an uncovered gt takes its highest-IoU anchor, skipping anchors
  // that are the only cover of another gt.
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (cover[g] > 0) continue;
    std::size_t pick = anchors.size();
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (overlap[a][g] <= 0.0) continue;
      if (labels[a].matched_gt && cover[*labels[a].matched_gt] < 2) continue;
      if (pick == anchors.size() || overlap[a][g] > overlap[pick][g]) pick = a;
    }
    if (pick == anchors.size()) continue;
    if (labels[pick].matched_gt) --cover[*labels[pick].matched_gt];
    labels[pick] = {AnchorKind::kPositive, g};
    ++cover[g];
  }
  return labels;
}

}  // namespace bline
