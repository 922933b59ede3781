// SPDX-License-Identifier: Apache-2.0
#include "bline/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace bline {

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> taken(gts.size(), false);
  MatchResult r;
  for (std::size_t d : order) {
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g == gts.size()) {
      ++r.fp;
    } else {
      taken[best_g] = true;
      r.pairs.push_back({d, best_g, best});
      ++r.tp;
    }
  }
  r.fn = gts.size() - r.tp;
  return r;
}

MetricsReport compute_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fp + fn == 0) throw UndefinedMetricsError("metrics are undefined when tp, fp and fn are all zero");
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  MetricsReport m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.accuracy = ratio(tp, tp + fp + fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

Evaluation evaluate(const DetectFn& detect, const std::vector<LabeledImage>& eval_set, const EvalConfig& config) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  Evaluation ev;
  for (const auto& li : eval_set) {
    std::vector<Detection> dets;
    for (const auto& d : detect(li)) {
      if (d.score >= config.score_threshold) dets.push_back(d);
    }
    ImageEvaluation ie;
    ie.source_id = li.source_id;
    ie.detections = dets.size();
    ie.ground_truth = li.boxes.size();
    ie.match = match_detections(dets, li.boxes, config.iou_threshold);
    ev.tp += ie.match.tp;
    ev.fp += ie.match.fp;
    ev.fn += ie.match.fn;
    ev.images.push_back(std::move(ie));
  }
  ev.metrics = compute_metrics(ev.tp, ev.fp, ev.fn);
  return ev;
}

std::vector<Detection> oracle_detections(const LabeledImage& image) {
  std::vector<Detection> out;
  for (const auto& b : image.boxes) out.push_back({b, 1.0});
  return out;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * fraction);
  return buf;
}

std::string format_report(const Evaluation& eval, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "images: " + std::to_string(eval.images.size()) + "\n";
  out += "tp: " + std::to_string(eval.tp) + "\n";
  out += "fp: " + std::to_string(eval.fp) + "\n";
  out += "fn: " + std::to_string(eval.fn) + "\n";
  out += "precision: " + format_percent(eval.metrics.precision) + "\n";
  out += "recall: " + format_percent(eval.metrics.recall) + "\n";
  out += "accuracy: " + format_percent(eval.metrics.accuracy) + "\n";
  out += "f1: " + format_percent(eval.metrics.f1) + "\n";
  return out;
}

std::string format_breakdown(const Evaluation& eval, const std::vector<std::string>& header) {
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "# image detections gt tp fp fn\n";
  for (const auto& ie : eval.images) {
    out += ie.source_id + ' ' + std::to_string(ie.detections) + ' ' + std::to_string(ie.ground_truth) + ' ' +
           std::to_string(ie.match.tp) + ' ' + std::to_string(ie.match.fp) + ' ' + std::to_string(ie.match.fn) + '\n';
  }
  return out;
}

}  // namespace bline
