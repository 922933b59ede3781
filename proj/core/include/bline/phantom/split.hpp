// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace bline {

/// Index permutation behind split_dataset: the first round(train_frac * n)
/// entries are the training indices, in shuffled order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_frac,
                                                                            std::uint64_t seed);

/// Deterministic shuffled partition into (train, eval).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& records, double train_frac,
                                                        std::uint64_t seed) {
  auto [train_idx, eval_idx] = split_indices(records.size(), train_frac, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : train_idx) out.first.push_back(records[i]);
  for (auto i : eval_idx) out.second.push_back(records[i]);
  return out;
}

}  // namespace bline
