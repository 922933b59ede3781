// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "bline/detect/box.hpp"
#include "bline/ndgrad/graph.hpp"

namespace bline {

/// Deltas (dx, dy, dw, dh) are clamped to this magnitude before exp().
inline constexpr double kMaxLogScale = 4.0;

/// (dx, dy, dw, dh) = ((gx-ax)/aw, (gy-ay)/ah, log(gw/aw), log(gh/ah)).
std::array<double, 4> encode_box(const Box& reference, const Box& target);
Box decode_box(const Box& reference, std::span<const double> deltas);

/// Stacks boxes into a [N,4] tensor.
nd::Tensor boxes_tensor(const std::vector<Box>& boxes);
std::vector<Box> tensor_boxes(const nd::Tensor& t);

/// Differentiable decode of deltas [P,4] against constant reference boxes.
nd::Var decode_boxes(nd::Var deltas, const std::vector<Box>& reference);

}  // namespace bline
