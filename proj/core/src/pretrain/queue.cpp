// SPDX-License-Identifier: Apache-2.0
#include "bline/pretrain/queue.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bline {

KeyQueue::KeyQueue(std::size_t dim, std::size_t capacity) : dim_(dim), capacity_(capacity) {
  if (dim == 0 || capacity == 0) throw std::invalid_argument("queue dim and capacity must be positive");
}

void KeyQueue::enqueue(std::span<const double> key) {
  if (key.size() != dim_) {
    throw nd::ShapeError("queue expects keys of dim " + std::to_string(dim_) + ", got " + std::to_string(key.size()));
  }
  double sq = 0.0;
  for (double v : key) sq += v * v;
  if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) throw std::invalid_argument("queued keys must be unit-norm");
  if (rows_.size() == capacity_) rows_.pop_front();
  rows_.emplace_back(key.begin(), key.end());
}

void KeyQueue::enqueue(const nd::Tensor& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_) {
    throw nd::ShapeError("queue expects [N," + std::to_string(dim_) + "] keys, got " + nd::shape_string(keys.shape()));
  }
  for (std::size_t r = 0; r < keys.dim(0); ++r) enqueue(keys.values().subspan(r * dim_, dim_));
}

std::optional<nd::Tensor> KeyQueue::transposed() const {
  if (rows_.empty()) return std::nullopt;
  const std::size_t m = rows_.size();
  nd::Tensor t({dim_, m});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t d = 0; d < dim_; ++d) t[d * m + j] = rows_[j][d];
  return t;
}

QueueBank::QueueBank(std::size_t levels, std::size_t dim, std::size_t capacity) {
  for (std::size_t i = 0; i < levels; ++i) {
    global.emplace_back(dim, capacity);
    local.emplace_back(dim, capacity);
  }
}

bool QueueBank::full() const {
  for (std::size_t i = 0; i < levels(); ++i) {
    if (!global[i].full() || !local[i].full()) return false;
  }
  return true;
}

}  // namespace bline
