// SPDX-License-Identifier: Apache-2.0
#include "bline/phantom/split.hpp"

#include <algorithm>

namespace bline {

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_frac,
                                                                            std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("train_frac must lie in (0, 1)");
  if (n < 2) throw std::invalid_argument("cannot split fewer than 2 records");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> eval(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return {std::move(train), std::move(eval)};
}

}  // namespace bline
