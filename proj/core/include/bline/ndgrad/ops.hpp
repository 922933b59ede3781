// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bline/ndgrad/graph.hpp"

namespace bline::nd {

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
/// relu'(0) = 0.
Var relu(Var a);
Var sigmoid(Var a);
/// Gradient is passed through only strictly inside (lo, hi).
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// Inner product of two rank-1 tensors; scalar output.
Var dot(Var a, Var b);
/// [N,D] x [N,D] -> [N,1]
Var rowwise_dot(Var a, Var b);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
/// x[N,in] * w[out,in]^T + b[out] -> [N,out]. `b` may be a default Var.
Var linear(Var x, Var w, Var b = {});

/// Cross-correlation. x is [C,H,W] or [N,C,H,W]; kernel is [O,C,kH,kW];
/// bias (optional) is [O]. Output keeps the rank of x.
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding);
inline Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t padding) {
  return conv2d(x, kernel, Var{}, stride, padding);
}

/// Global spatial mean: [N,C,H,W] -> [N,C].
Var mean_pool(Var x);
/// Nearest-neighbour upsampling of [N,C,H,W] to [N,C,out_h,out_w];
/// output (i,j) reads input (i/factor, j/factor), clamped to the input extent.
Var upsample_nearest(Var x, std::size_t factor, std::size_t out_h, std::size_t out_w);

Var concat(std::span<const Var> parts, std::size_t axis);
inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}
Var reshape(Var a, Shape shape);
/// Rows of the leading axis, in the given order (repeats allowed).
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Half-open range [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

/// Normalizes along the last axis: v / max(|v|, eps).
Var l2_normalize(Var a, double eps = 1e-12);

/// Per-row softmax cross-entropy: logits [N,C], one target class per row.
/// Output [N].
Var softmax_xent(Var logits, std::span<const std::size_t> targets);

struct SamplePoint {
  double x = 0.0;
  double y = 0.0;
};

/// Bilinear samples of a feature map ([C,H,W] or [1,C,H,W]) whose cell (i,j)
/// sits at image coordinate (stride*j + offset, stride*i + offset).
/// Output [P,C]. Gradient flows to the feature map only.
Var roi_sample(Var features, double stride, double offset, std::span<const SamplePoint> points);

}  // namespace bline::nd
