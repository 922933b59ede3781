// SPDX-License-Identifier: Apache-2.0
#include "bline/pretrain/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bline/ndgrad/ops.hpp"

namespace bline {

using nd::Var;

Var info_nce(Var q, Var k_pos, const std::optional<nd::Tensor>& negatives_t, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  if (q.shape() != k_pos.shape() || q.value().rank() != 2) {
    throw nd::ShapeError("info_nce: q and k must both be [N,D], got " + nd::shape_string(q.shape()) + " and " +
                         nd::shape_string(k_pos.shape()));
  }
  nd::Graph& g = *q.graph();
  const std::size_t n = q.dim(0);
  Var logits = nd::scale(nd::rowwise_dot(q, k_pos), 1.0 / tau);
  if (negatives_t) {
    if (negatives_t->rank() != 2 || negatives_t->dim(0) != q.dim(1)) throw nd::ShapeError("info_nce: queue dim mismatch");
    Var neg = nd::scale(nd::matmul(q, g.constant(*negatives_t)), 1.0 / tau);
    logits = nd::concat({logits, neg}, 1);
  }
  const std::vector<std::size_t> targets(n, 0);
  return nd::mean(nd::softmax_xent(logits, targets));
}

double info_nce_value(std::span<const double> q, std::span<const double> k_pos,
                      const std::vector<std::vector<double>>& negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  auto dot = [&](std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw nd::ShapeError("info_nce: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  std::vector<double> logits{dot(q, k_pos) / tau};
  for (const auto& k : negatives) logits.push_back(dot(q, k) / tau);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[0];
}

DetcoLoss detco_loss(const LevelEmbeddings& q, const LevelEmbeddings& k, const QueueBank& queues,
                     std::span<const double> weights, double tau) {
  const std::size_t levels = weights.size();
  if (q.global.size() != levels || q.local.size() != levels || k.global.size() != levels ||
      k.local.size() != levels || queues.levels() != levels) {
    throw std::invalid_argument("detco_loss: embeddings, queues and weights disagree on the number of levels");
  }
  DetcoLoss out;
  for (std::size_t i = 0; i < levels; ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("detco_loss: level weights must be non-negative");
    const auto gq = queues.global[i].transposed();
    const auto lq = queues.local[i].transposed();
    std::array<Var, 3> t{info_nce(q.global[i], k.global[i], gq, tau), info_nce(q.local[i], k.local[i], lq, tau),
                         info_nce(q.local[i], k.global[i], gq, tau)};
    Var level = nd::scale(nd::add(nd::add(t[0], t[1]), t[2]), weights[i]);
    out.total = out.total.valid() ? nd::add(out.total, level) : level;
    out.terms.push_back(t);
  }
  if (!out.total.valid()) throw std::invalid_argument("detco_loss: no levels");
  return out;
}

}  // namespace bline
