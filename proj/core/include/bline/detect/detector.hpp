// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "bline/detect/anchors.hpp"
#include "bline/detect/losses.hpp"
#include "bline/detect/nms.hpp"
#include "bline/ndgrad/params.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/pretrain/encoder.hpp"

namespace bline {

class CheckpointMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DetectConfig {
  double lambda_rpn = 1.0;
  double lambda_fastrcnn = 1.0;
  RegressionLoss regression_loss = RegressionLoss::kEIoU;
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  double nms_iou = 0.5;
  double score_threshold = 0.5;
  AnchorConfig anchors;
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  /// Stops early after this many steps when non-zero.
  std::size_t max_steps = 0;
  /// Initial learning rate; from epoch lr_drop_epoch (1-based, 0 = never)
  /// on it is multiplied by lr_drop_factor.
  double lr = 0.015;
  std::size_t lr_drop_epoch = 21;
  double lr_drop_factor = 0.1;
  std::uint64_t seed = 0;

  /// Learning rate used during the given 1-based epoch.
  double lr_at(std::size_t epoch) const;

  std::size_t image_width = 154;
  std::size_t image_height = 120;

  /// Anchors sampled per image for the RPN loss, and the positive share.
  std::size_t rpn_batch = 64;
  double rpn_pos_fraction = 0.5;
  std::size_t pre_nms_top = 100;
  std::size_t post_nms_top = 20;
  /// Jittered copies of each gt box added to the training proposals.
  std::size_t gt_jitter = 2;
  /// Proposal-to-gt IoU at which a proposal counts as a B-line.
  double roi_fg_iou = 0.5;
  std::size_t rpn_hidden = 32;
  std::size_t head_hidden = 64;
  /// Sample grid inside each proposal; columns extend half a box width to
  /// either side.
  std::size_t roi_columns = 7;
  std::size_t roi_rows = 6;
  /// Full-height strip through each proposal: rows spread over the whole
  /// image at three columns around the box centre.
  std::size_t strip_rows = 10;
  /// Extra second-stage passes at inference, each re-scoring and refining
  /// the previous pass's boxes.
  std::size_t refine_passes = 1;
  /// load_backbone rescales each copied stage to the He-init weight RMS.
  bool rescale_backbone = true;

  void validate() const;
};

struct DetectStep {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double rpn = 0.0;
  double fastrcnn = 0.0;
};

class Detector {
 public:
  /// Randomly initialised backbone and heads ("scratch").
  Detector(DetectConfig config, EncoderConfig encoder, std::uint64_t seed);

  const DetectConfig& config() const { return config_; }
  const EncoderConfig& encoder_config() const { return encoder_; }
  nd::ParameterStore& params() { return params_; }
  const nd::ParameterStore& params() const { return params_; }

  /// Copies the encoder stages used by the backbone. With rescale_backbone,
  /// stage i weights are multiplied by s_i = sqrt(2 / fan_in) / rms(w_i) and
  /// its bias by s_1 * ... * s_i, so every stage output is a positive multiple
  /// of the encoder's. Throws CheckpointMismatchError when a tensor is missing
  /// or mis-shaped.
  void load_backbone(const nd::ParameterStore& encoder);
  /// Replaces every detector parameter. Throws CheckpointMismatchError unless
  /// the names and shapes match exactly.
  void load(const nd::ParameterStore& checkpoint);

  /// Backbone stage-2 grid.
  std::size_t grid_rows() const { return grid_rows_; }
  std::size_t grid_cols() const { return grid_cols_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }

  std::vector<Detection> detect(const Image& image) const;

  /// Loss of one batch in a fresh graph; gradients land in params().
  DetectStep loss_and_grad(std::span<const LabeledImage* const> batch, std::mt19937_64& rng);
  /// loss_and_grad followed by an SGD step at the given learning rate.
  DetectStep train_step(std::span<const LabeledImage* const> batch, std::mt19937_64& rng, double lr);

 private:
  struct Bound;
  struct Forward;

  Bound bind(nd::Graph& g, bool trainable) const;
  Forward forward(nd::Graph& g, const Bound& p, const std::vector<const Image*>& images) const;
  std::vector<Box> propose(const Forward& f, std::size_t n) const;
  nd::Var roi_head(nd::Graph& g, const Bound& p, const Forward& f, std::size_t n,
                   const std::vector<Box>& rois) const;

  DetectConfig config_;
  EncoderConfig encoder_;
  nd::ParameterStore params_;
  std::size_t grid_rows_ = 0;
  std::size_t grid_cols_ = 0;
  std::vector<Anchor> anchors_;
  std::vector<Box> anchor_boxes_;
};

struct FinetuneResult {
  nd::ParameterStore params;
  std::vector<DetectStep> steps;
};

using DetectLogger = std::function<void(const DetectStep&)>;

/// Trains a detector on `train`; `encoder` may be null for scratch mode.
FinetuneResult finetune(std::span<const LabeledImage> train, const nd::ParameterStore* encoder,
                        const DetectConfig& config, const EncoderConfig& encoder_config,
                        const DetectLogger& log = {});

}  // namespace bline
