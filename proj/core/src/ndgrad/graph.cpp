// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/graph.hpp"

#include <algorithm>
#include <cmath>

namespace bline::nd {

const Tensor& Var::value() const { return graph_->value(id_); }

std::span<const double> Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
  value.check_finite("constant");
  value.set_requires_grad(false);
  value.clear_grad();
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Tensor& tensor) {
  tensor.check_finite("parameter");
  Node node;
  node.op = "param";
  node.value = Tensor(tensor.shape(), tensor.data());
  node.bound = &tensor;
  node.needs_grad = tensor.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  const int id = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= id) throw std::logic_error(std::string(op) + ": input is not an earlier node");
    needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  value.check_finite(op);
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  node.needs_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

std::vector<double>& Graph::grad_buffer(int id) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

std::span<const double> Graph::grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw std::invalid_argument("backward: loss belongs to another graph");
  if (value(loss.id()).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(value(loss.id()).shape()));
  }
  for (auto& node : nodes_) {
    node.grad.clear();
    if (node.bound && node.bound->requires_grad()) node.bound->zero_grad();
  }
  const auto root = static_cast<std::size_t>(loss.id());
  if (!nodes_[root].needs_grad) return;

  // Inputs always precede their consumers, so a reverse index sweep visits
  // every node after all of its consumers.
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (!std::all_of(node.grad.begin(), node.grad.end(), [](double g) { return std::isfinite(g); })) {
      throw NonFiniteError("non-finite gradient at " + node.op);
    }
    if (node.bound) {
      auto dst = node.bound->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    } else if (node.backward) {
      node.backward(*this, static_cast<int>(i));
    }
  }
}

}  // namespace bline::nd
