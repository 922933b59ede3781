// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <string_view>

#include "bline/ndgrad/tensor.hpp"

namespace bline::nd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered collection of named parameters with stable addresses.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = default;
  ParameterStore& operator=(const ParameterStore&) = default;

  Tensor& add(std::string name, Tensor tensor, bool requires_grad = true);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t scalar_count() const;
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::deque<NamedTensor> items_;
};

/// He-normal initialisation for a weight with `fan_in` inputs.
Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// theta <- theta - lr * grad for every parameter that requires a gradient.
/// Throws std::invalid_argument if such a parameter has no gradient.
void sgd_step(ParameterStore& params, double lr);

/// Copies values of every parameter of `src` into the same-named parameter of
/// `dst`, checking shapes; extra names in `dst` are left untouched unless
/// `require_all` is set.
void copy_values(const ParameterStore& src, ParameterStore& dst, bool require_all);

}  // namespace bline::nd
