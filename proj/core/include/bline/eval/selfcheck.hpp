// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bline {

struct GradSuiteResult {
  std::string name;
  /// Points compared; points near a non-smooth switch are redrawn.
  std::size_t points = 0;
  std::size_t rejected = 0;
  double worst = 0.0;
};

/// Central-difference check of the training losses (smooth-l1, anchor
/// cross-entropy, InfoNCE, the multi-level contrastive loss through a tiny
/// encoder, and EIoU) at `points` random points each.
std::vector<GradSuiteResult> run_gradient_suite(std::size_t points, std::uint64_t seed);

}  // namespace bline
