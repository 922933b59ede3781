// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/params.hpp"

#include <algorithm>
#include <cmath>

namespace bline::nd {

Tensor& ParameterStore::add(std::string name, Tensor tensor, bool requires_grad) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(requires_grad);
  items_.push_back({std::move(name), std::move(tensor)});
  return items_.back().tensor;
}

Tensor& ParameterStore::at(std::string_view name) {
  for (auto& item : items_) {
    if (item.name == name) return item.tensor;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

const Tensor& ParameterStore::at(std::string_view name) const {
  for (const auto& item : items_) {
    if (item.name == name) return item.tensor;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const NamedTensor& t) { return t.name == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& item : items_) {
    if (item.tensor.requires_grad()) item.tensor.zero_grad();
  }
}

void ParameterStore::set_requires_grad(bool on) {
  for (auto& item : items_) {
    item.tensor.set_requires_grad(on);
    if (!on) item.tensor.clear_grad();
  }
}

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

void sgd_step(ParameterStore& params, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be non-negative");
  for (auto& item : params) {
    if (!item.tensor.requires_grad()) continue;
    if (!item.tensor.has_grad()) throw std::invalid_argument("sgd_step: missing gradient for " + item.name);
  }
  for (auto& item : params) {
    if (!item.tensor.requires_grad()) continue;
    auto v = item.tensor.values();
    const auto g = item.tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

void copy_values(const ParameterStore& src, ParameterStore& dst, bool require_all) {
  for (const auto& item : src) {
    if (!dst.contains(item.name)) {
      if (require_all) throw std::invalid_argument("parameter missing in destination: " + item.name);
      continue;
    }
    Tensor& d = dst.at(item.name);
    if (d.shape() != item.tensor.shape()) {
      throw ShapeError("parameter " + item.name + " has shape " + shape_string(item.tensor.shape()) +
                       ", expected " + shape_string(d.shape()));
    }
    std::copy(item.tensor.values().begin(), item.tensor.values().end(), d.values().begin());
  }
}

}  // namespace bline::nd
