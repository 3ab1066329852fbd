#pragma once

// Minimal reverse-mode differentiation over 2-D double tensors.
//
// A Graph is a tape: every operation appends one node holding its value, a
// gradient buffer (only when some input needs gradients) and a closure that
// pushes the node's gradient into its inputs. Nodes are appended after their
// inputs, so the tape is topologically ordered by construction and backward
// is a single reverse sweep. Tapes are rebuilt for every training step.
//
// Var is a cheap handle (graph pointer + node index). A Var is only valid
// while its Graph is alive.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cil/matrix.hpp"

namespace cil::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(Shape s);

class Graph;

class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  Shape shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  // Value of a 1x1 tensor.
  double item() const;
  Matrix to_matrix() const;
  Matrix grad_matrix() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  struct Node;
  using BackwardFn = std::function<void(Graph&, const Node&)>;

  struct Node {
    std::string op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty unless requires_grad
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Shape shape, std::vector<double> value);
  Var constant(const Matrix& m) { return constant({m.rows, m.cols}, m.data); }
  Var parameter(Shape shape, std::vector<double> value);
  Var parameter(const Matrix& m) { return parameter({m.rows, m.cols}, m.data); }

  // Appends an operation node. `value` must be finite; non-finite entries
  // raise NumericError naming `op`.
  Var record(std::string op, Shape shape, std::vector<double> value, std::vector<Var> inputs,
             BackwardFn backward);

  // Populates gradients of every node that depends on a parameter. `loss`
  // must be a 1x1 node of this graph.
  void backward(Var loss);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Node& node(Var v) const;
  // Gradient buffer of an input that needs gradients; empty span otherwise.
  std::span<double> grad_buffer(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Node node);

  std::vector<Node> nodes_;
};

// Differentiable primitives. Shapes are checked; mismatches throw
// DimensionError naming both shapes.
Var matmul(Var a, Var b);     // [n x k] * [k x m]
Var matmul_nt(Var a, Var b);  // [n x k] * [m x k]^T
Var transpose(Var a);
Var relu(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_bias(Var a, Var bias);  // bias [1 x m] broadcast over rows
Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var scale_by(Var a, Var s);  // s is 1x1
Var sum(Var a);
Var mean(Var a);
Var sqrt(Var a);  // derivative taken as 0 where the value is exactly 0
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var col_mean(Var a);            // [1 x m]
Var col_std(Var a);             // [1 x m], unbiased (n - 1); needs n >= 2
Var sub_row(Var a, Var row);    // a - row, row [1 x m] broadcast
Var div_row(Var a, Var row);    // a / row, row [1 x m] broadcast
Var row_normalize(Var a, double eps = 1e-12);
Var cosine_rows(Var a, Var b, double eps = 1e-12);  // [n x 1] cosine of paired rows

// Mean over rows of -log softmax(logits)[label], stabilized by the row max.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);
// Mean over rows of -sum_c target[c] * log softmax(logits)[c]. `target` is a
// constant with the same shape as logits.
Var soft_cross_entropy(Var logits, const Matrix& target);

// Row-wise softmax of plain values (no tape), max-stabilized.
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);

// Builds a scalar from the given inputs on a fresh graph.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

// Maximum over all input coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// where numeric is the central difference with step `eps`.
double grad_check(const ScalarFn& f, const std::vector<Matrix>& inputs, double eps = 1e-5);

}  // namespace cil::ad
