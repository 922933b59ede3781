// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "bline/ndgrad/graph.hpp"
#include "bline/ndgrad/params.hpp"

namespace bline {

/// Convolutional encoder with one projection head per stage.
///
/// Each stage is a stride-2 convolution followed by relu. The mean-pooled
/// output of stage i feeds global head i; the pooled outputs of all grid^2
/// patches, concatenated in patch order, feed local head i.
struct EncoderConfig {
  std::vector<std::size_t> widths{8, 16, 32, 64};
  std::size_t kernel = 3;
  std::size_t embed_dim = 32;
  std::size_t head_hidden = 64;
  std::size_t grid = 3;
  /// Inputs are mapped to (x - input_mean) / input_std before the first stage.
  double input_mean = 0.3;
  double input_std = 0.2;

  std::size_t levels() const { return widths.size(); }
  void validate() const;
};

class Encoder {
 public:
  /// Graph handles for every parameter, bound once per graph.
  struct Bound {
    std::vector<nd::Var> conv_w, conv_b;
    std::vector<nd::Var> global_w1, global_b1, global_w2, global_b2;
    std::vector<nd::Var> local_w1, local_b1, local_w2, local_b2;
  };

  Encoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  nd::ParameterStore& params() { return params_; }
  const nd::ParameterStore& params() const { return params_; }

  Bound bind(nd::Graph& graph);

  /// Stage outputs for input [N,1,H,W].
  std::vector<nd::Var> stages(const Bound& p, nd::Var input) const;
  /// One unit-norm [N, embed_dim] embedding per level.
  std::vector<nd::Var> encode_global(const Bound& p, nd::Var views) const;
  /// `patches` is [N*grid^2, 1, h, w], grouped by image then patch order.
  std::vector<nd::Var> encode_patches(const Bound& p, nd::Var patches, std::size_t n_images) const;

  static constexpr const char* kConvPrefix = "enc.conv";

 private:
  EncoderConfig config_;
  nd::ParameterStore params_;
};

/// theta_k <- m * theta_k + (1 - m) * theta_q for every parameter, matched by
/// name and shape.
void momentum_update(const nd::ParameterStore& query, nd::ParameterStore& key, double m);

}  // namespace bline
