// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "bline/ndgrad/tensor.hpp"

namespace bline::nd {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }

  /// Gradient of the last backward() loss with respect to this node.
  std::span<const double> grad() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Append-only tape of primitive operations.
///
/// Nodes are recorded in evaluation order, so the tape is topologically
/// sorted by construction. Leaves bound with param() write their gradients
/// back into the external Tensor on backward().
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable input; its value is copied into the graph.
  Var constant(Tensor value);
  /// Differentiable view of an external tensor. The tensor must outlive the
  /// graph; backward() accumulates into its grad slot if requires_grad.
  Var param(Tensor& tensor);

  /// Records an operation output. `inputs` must already be in the graph.
  Var record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar `loss`. Every bound parameter with
  /// requires_grad gets its grad slot reset to zero first, so unreachable
  /// parameters end with a zero gradient.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const std::string& op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of node `id`, allocated on first use.
  std::vector<double>& grad_buffer(int id);
  std::span<const double> grad(int id) const;

  /// Smallest |input| seen by any relu node; used by gradient checks to
  /// avoid evaluating finite differences across a kink.
  double min_abs_kink_distance() const { return min_kink_; }
  void note_kink_distance(double d) {
    if (d < min_kink_) min_kink_ = d;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
  };

  std::vector<Node> nodes_;
  double min_kink_ = 1e300;
};

}  // namespace bline::nd
