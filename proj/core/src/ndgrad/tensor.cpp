// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bline::nd {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  validate_shape(shape_);
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape_));
  return values_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) return {};
  return *grad_;
}

std::span<double> Tensor::grad() {
  if (!grad_) return {};
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(values_.size(), 0.0); }

void Tensor::reshape(Shape shape) {
  validate_shape(shape);
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::check_finite(const char* what) const {
  if (!std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); })) {
    throw NonFiniteError(std::string("non-finite value in ") + what);
  }
}

}  // namespace bline::nd
