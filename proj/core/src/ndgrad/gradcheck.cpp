// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bline::nd {

std::optional<double> gradient_relative_error(std::span<Tensor* const> wrt, const LossBuilder& build,
                                              const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (Tensor* t : wrt) {
    saved_flags.push_back(t->requires_grad());
    t->set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Var loss = build(g);
    if (g.min_abs_kink_distance() < options.kink_margin) {
      for (std::size_t i = 0; i < wrt.size(); ++i) wrt[i]->set_requires_grad(saved_flags[i]);
      return std::nullopt;
    }
    g.backward(loss);
    for (Tensor* t : wrt) analytic.emplace_back(t->grad().begin(), t->grad().end());
  }

  auto evaluate = [&]() {
    Graph g;
    return build(g).item();
  };

  double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti]->values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double orig = values[k];
      values[k] = orig + options.step;
      const double fp = evaluate();
      values[k] = orig - options.step;
      const double fm = evaluate();
      values[k] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[ti][k];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
  }
  for (std::size_t i = 0; i < wrt.size(); ++i) wrt[i]->set_requires_grad(saved_flags[i]);
  const double scale = std::max(max_a, max_n);
  if (scale == 0.0) return 0.0;
  return max_diff / scale;
}

}  // namespace bline::nd
