// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "bline/ndgrad/tensor.hpp"

namespace bline {

/// Fixed-capacity FIFO of unit-norm key vectors. Entries are plain values,
/// so nothing stored here can take part in a gradient graph.
class KeyQueue {
 public:
  KeyQueue(std::size_t dim, std::size_t capacity);

  std::size_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  bool full() const { return rows_.size() == capacity_; }

  /// Appends the rows of `keys` ([N, dim]) in order, evicting oldest first.
  void enqueue(const nd::Tensor& keys);
  void enqueue(std::span<const double> key);

  /// Entry i, oldest first.
  std::span<const double> at(std::size_t i) const { return rows_.at(i); }
  /// Contents as a [dim, size] matrix (keys in columns, oldest first), or
  /// nullopt when empty.
  std::optional<nd::Tensor> transposed() const;

  static constexpr double kNormTolerance = 1e-6;

 private:
  std::size_t dim_;
  std::size_t capacity_;
  std::deque<std::vector<double>> rows_;
};

/// One global and one local queue per feature level.
struct QueueBank {
  std::vector<KeyQueue> global;
  std::vector<KeyQueue> local;

  QueueBank(std::size_t levels, std::size_t dim, std::size_t capacity);
  std::size_t levels() const { return global.size(); }
  bool full() const;
};

}  // namespace bline
