// SPDX-License-Identifier: Apache-2.0
#include "bline/detect/coding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bline/ndgrad/ops.hpp"

namespace bline {

std::array<double, 4> encode_box(const Box& reference, const Box& target) {
  if (!reference.valid() || !target.valid()) throw DegenerateBoxError("encode_box: degenerate box");
  return {(target.cx() - reference.cx()) / reference.width(), (target.cy() - reference.cy()) / reference.height(),
          std::log(target.width() / reference.width()), std::log(target.height() / reference.height())};
}

Box decode_box(const Box& reference, std::span<const double> d) {
  if (d.size() != 4) throw nd::ShapeError("decode_box: expected 4 deltas");
  const double cx = reference.cx() + d[0] * reference.width();
  const double cy = reference.cy() + d[1] * reference.height();
  const double w = reference.width() * std::exp(std::clamp(d[2], -kMaxLogScale, kMaxLogScale));
  const double h = reference.height() * std::exp(std::clamp(d[3], -kMaxLogScale, kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

nd::Tensor boxes_tensor(const std::vector<Box>& boxes) {
  if (boxes.empty()) throw nd::ShapeError("boxes_tensor: no boxes");
  nd::Tensor t({boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t[4 * i] = boxes[i].x1;
    t[4 * i + 1] = boxes[i].y1;
    t[4 * i + 2] = boxes[i].x2;
    t[4 * i + 3] = boxes[i].y2;
  }
  return t;
}

std::vector<Box> tensor_boxes(const nd::Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 4) throw nd::ShapeError("tensor_boxes: expected [N,4]");
  std::vector<Box> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {t[4 * i], t[4 * i + 1], t[4 * i + 2], t[4 * i + 3]};
  return out;
}

nd::Var decode_boxes(nd::Var deltas, const std::vector<Box>& reference) {
  if (deltas.value().rank() != 2 || deltas.dim(1) != 4 || deltas.dim(0) != reference.size()) {
    throw nd::ShapeError("decode_boxes: deltas must be [P,4] with one row per reference box");
  }
  nd::Graph& g = *deltas.graph();
  const std::size_t p = reference.size();
  nd::Tensor cx({p, 1}), cy({p, 1}), w({p, 1}), h({p, 1});
  for (std::size_t i = 0; i < p; ++i) {
    cx[i] = reference[i].cx();
    cy[i] = reference[i].cy();
    w[i] = reference[i].width();
    h[i] = reference[i].height();
  }
  const auto vw = g.constant(w), vh = g.constant(h);
  auto col = [&](std::size_t c) { return nd::slice(deltas, 1, c, c + 1); };
  const auto pcx = nd::add(g.constant(cx), nd::mul(col(0), vw));
  const auto pcy = nd::add(g.constant(cy), nd::mul(col(1), vh));
  const auto half_w = nd::scale(nd::mul(vw, nd::exp(nd::clamp(col(2), -kMaxLogScale, kMaxLogScale))), 0.5);
  const auto half_h = nd::scale(nd::mul(vh, nd::exp(nd::clamp(col(3), -kMaxLogScale, kMaxLogScale))), 0.5);
  return nd::concat({nd::sub(pcx, half_w), nd::sub(pcy, half_h), nd::add(pcx, half_w), nd::add(pcy, half_h)}, 1);
}

}  // namespace bline
