// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/nms.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bline {

std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, double nms_iou, double score_threshold) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!(dets[i].score >= 0.0 && dets[i].score <= 1.0)) throw std::invalid_argument("nms: scores must lie in [0,1]");
    if (dets[i].score >= score_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou(dets[i].box, dets[k].box) >= nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double nms_iou, double score_threshold) {
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(dets, nms_iou, score_threshold)) out.push_back(dets[i]);
  return out;
}

}  // namespace bline
