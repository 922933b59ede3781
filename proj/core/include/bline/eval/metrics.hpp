// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bline/detect/nms.hpp"
#include "bline/phantom/phantom.hpp"

namespace bline {

struct MatchedPair {
  std::size_t det = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<MatchedPair> pairs;
};

/// Detections in descending score order (lower index first on ties) each take
/// the unmatched gt of highest IoU >= iou_threshold (lower gt index on ties).
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts,
                             double iou_threshold = 0.5);

class UndefinedMetricsError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// P = tp/(tp+fp), R = tp/(tp+fn), Acc = tp/(tp+fp+fn), F1 = 2PR/(P+R).
/// A ratio with a zero denominator is 0.
MetricsReport compute_metrics(std::size_t tp, std::size_t fp, std::size_t fn);

struct EvalConfig {
  double iou_threshold = 0.5;
  double score_threshold = 0.5;
};

struct ImageEvaluation {
  std::string source_id;
  std::size_t detections = 0;
  std::size_t ground_truth = 0;
  MatchResult match;
};

struct Evaluation {
  MetricsReport metrics;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<ImageEvaluation> images;
};

using DetectFn = std::function<std::vector<Detection>(const LabeledImage&)>;

/// Runs `detect` on every image, drops scores below the threshold and
/// aggregates the matches.
Evaluation evaluate(const DetectFn& detect, const std::vector<LabeledImage>& eval_set, const EvalConfig& config);

/// Emits exactly the gt boxes with score 1.
std::vector<Detection> oracle_detections(const LabeledImage& image);

/// "key: value" lines; percentages with two decimals.
std::string format_report(const Evaluation& eval, const std::vector<std::string>& header = {});
/// One line per image: id, detections, gt, tp, fp, fn.
std::string format_breakdown(const Evaluation& eval, const std::vector<std::string>& header = {});
std::string format_percent(double fraction);

}  // namespace bline
