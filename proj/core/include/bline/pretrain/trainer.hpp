// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bline/ndgrad/params.hpp"
#include "bline/phantom/image.hpp"
#include "bline/pretrain/encoder.hpp"
#include "bline/pretrain/queue.hpp"
#include "bline/pretrain/views.hpp"

namespace bline {

struct PretrainConfig {
  double tau = 0.2;
  std::vector<double> level_weights{0.1, 0.4, 0.7, 1.0};
  double momentum = 0.999;
  std::size_t queue_capacity = 256;
  std::size_t batch_size = 4;
  std::size_t epochs = 200;
  /// Stops early after this many steps when non-zero.
  std::size_t max_steps = 0;
  double lr = 0.015;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  ViewConfig views;

  void validate() const;
};

struct PretrainStep {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Every queue was at capacity when the loss was computed.
  bool queue_full = false;
};

struct PretrainResult {
  /// Query-encoder parameters of the selected epoch.
  nd::ParameterStore best;
  nd::ParameterStore final_params;
  std::vector<PretrainStep> steps;
  /// Selected epoch, or nullopt when no epoch started with full queues and
  /// the final parameters were kept.
  std::optional<std::size_t> best_epoch;
  double best_epoch_loss = 0.0;
};

using PretrainLogger = std::function<void(const PretrainStep&)>;

/// Images stacked as [N,1,H,W]; all must share extents.
nd::Tensor stack_images(std::span<const Image* const> images);

class PretrainState {
 public:
  PretrainState(const PretrainConfig& config);

  Encoder& query() { return query_; }
  Encoder& key() { return key_; }
  QueueBank& queues() { return queues_; }
  const PretrainConfig& config() const { return config_; }

  /// One optimisation step on a batch of view sets; returns the loss.
  double step(std::span<const ViewSet> batch);

 private:
  PretrainConfig config_;
  Encoder query_;
  Encoder key_;
  QueueBank queues_;
};

/// Selects the epoch with the lowest mean loss among epochs that began with
/// full queues.
PretrainResult pretrain(std::span<const Image> images, const PretrainConfig& config,
                        const PretrainLogger& log = {});

}  // namespace bline
