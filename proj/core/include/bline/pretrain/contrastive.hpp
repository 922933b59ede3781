// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "bline/ndgrad/graph.hpp"
#include "bline/pretrain/queue.hpp"

namespace bline {

/// Batched InfoNCE: q and k_pos are [N,D] unit rows, `negatives_t` is the
/// queue as a [D,M] constant. Returns the mean over rows of
/// -log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_i exp(q.k_i/tau))).
/// Exactly 0 when there are no negatives.
nd::Var info_nce(nd::Var q, nd::Var k_pos, const std::optional<nd::Tensor>& negatives_t, double tau);

/// Scalar reference form on plain vectors.
double info_nce_value(std::span<const double> q, std::span<const double> k_pos,
                      const std::vector<std::vector<double>>& negatives, double tau);

/// Embeddings per level for one batch.
struct LevelEmbeddings {
  std::vector<nd::Var> global;
  std::vector<nd::Var> local;
};

enum class TermKind : std::size_t { kGlobal = 0, kLocal = 1, kCross = 2 };

struct DetcoLoss {
  nd::Var total;
  /// terms[level][kind], unweighted.
  std::vector<std::array<nd::Var, 3>> terms;
};

/// sum_i w_i (L_gg + L_ll + L_lg). Keys are expected as graph constants.
DetcoLoss detco_loss(const LevelEmbeddings& q, const LevelEmbeddings& k, const QueueBank& queues,
                     std::span<const double> weights, double tau);

}  // namespace bline
