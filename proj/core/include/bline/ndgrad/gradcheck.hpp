// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>

#include "bline/ndgrad/graph.hpp"

namespace bline::nd {

struct GradCheckOptions {
  double step = 1e-5;
  /// Points where any relu/min/max/clamp input lies closer than this to its
  /// switching point are rejected.
  double kink_margin = 1e-3;
};

/// Builds a scalar loss in `graph`, binding the checked tensors with param().
using LossBuilder = std::function<Var(Graph& graph)>;

/// Compares reverse-mode gradients against central finite differences.
///
/// The error is max_i |analytic_i - numeric_i| / max(|analytic|_inf,
/// |numeric|_inf) over every scalar of every tensor in `wrt`. Returns nullopt
/// when the point sits too close to a non-smooth switch.
std::optional<double> gradient_relative_error(std::span<Tensor* const> wrt, const LossBuilder& build,
                                              const GradCheckOptions& options = {});

}  // namespace bline::nd
