/*
   Copyright 2026 The psgd Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "psgd/matrix_core.hpp"

// Reverse-mode automatic differentiation over dense matrix-valued nodes.
//
// Every backward pass is itself recorded as graph nodes, so the gradient is a
// differentiable function of the parameters. A Hessian-vector product is then
// the gradient of the scalar <grad, v>.

namespace psgd::ad {

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  BiasAdd,
  Transpose,
  Sum,
  Mean,
  Square,
  Tanh,
  Sigmoid,
  Relu,
  Log,
  Exp,
  ScaleShift,
  SumRows,
  SumCols,
  BroadcastRows,
  BroadcastCols,
  BroadcastScalar,
  SliceRows,
  PadRows,
  ConcatRows,
  SoftmaxCols,
  SoftmaxCrossEntropy,
  Mse,
};

std::string_view op_name(Op op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

struct Node {
  Op op = Op::Constant;
  std::vector<int> inputs;
  MatrixXd value;
  bool requires_grad = false;
  double alpha = 0.0;  // ScaleShift factor
  double beta = 0.0;   // ScaleShift offset
  Eigen::Index index0 = 0;
  Eigen::Index index1 = 0;
  // Relu mask, one-hot labels or regression targets; never differentiated.
  std::shared_ptr<const MatrixXd> aux;
};

/// Define-by-run computation record. Nodes are appended in topological order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var param(MatrixXd value);
  Var constant(MatrixXd value);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  /// Relu inputs that sat exactly on the kink (second derivative undefined;
  /// taken as zero).
  std::size_t kinks() const { return kinks_; }

  /// d y / d wrt for a 1x1 node y. The returned nodes are part of this graph
  /// and can be differentiated again.
  std::vector<Var> grad(Var y, std::span<const Var> wrt);

  // Internal: used by the op constructors in autodiff.cpp.
  Var push(Node n);
  void note_kinks(std::size_t k) { kinks_ += k; }

 private:
  std::vector<Var> vjp(int id, Var g);

  std::vector<Node> nodes_;
  std::size_t kinks_ = 0;
};

// Elementwise ops require identical shapes; broadcasting is explicit.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);

Var matmul(Var a, Var b);
/// a (r x c) plus column vector b (r x 1) added to every column.
Var bias_add(Var a, Var b);
Var transpose(Var a);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var log(Var a);
Var exp(Var a);
/// alpha * a + beta, elementwise.
Var scale_shift(Var a, double alpha, double beta);
Var sum_rows(Var a);  // r x c -> 1 x c
Var sum_cols(Var a);  // r x c -> r x 1
Var broadcast_rows(Var a, Eigen::Index rows);
Var broadcast_cols(Var a, Eigen::Index cols);
Var broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var pad_rows(Var a, Eigen::Index start, Eigen::Index total);
Var concat_rows(std::span<const Var> parts);
/// Softmax down each column.
Var softmax_cols(Var logits);
/// Mean over columns of -log softmax(logits)[label]; labels index rows.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Mean of squared differences against a constant target.
Var mse(Var prediction, const MatrixXd& target);
/// sum(a .* c) for a constant c.
Var inner(Var a, const MatrixXd& c);

/// Sample data bound as constants of one tape evaluation.
struct Batch {
  std::vector<MatrixXd> data;
  std::vector<std::vector<int>> labels;
};

/// A scalar function of parameter tensors, recorded on demand.
struct Tape {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> param_shapes;
  std::function<Var(Graph&, std::span<const Var>, const Batch&)> build;
};

struct Derivatives {
  double loss = 0.0;
  Tensors gradient;
  Tensors hvp;  // empty unless requested
  bool at_kink = false;
};

double evaluate(const Tape& tape, const Tensors& theta, const Batch& batch);
Tensors gradient(const Tape& tape, const Tensors& theta, const Batch& batch);
Tensors hessian_vector_product(const Tape& tape, const Tensors& theta, const Batch& batch,
                               const Tensors& v);
/// Loss, gradient and (when v is given) the Hessian-vector product from one
/// recording.
Derivatives differentiate(const Tape& tape, const Tensors& theta, const Batch& batch,
                          const Tensors* v = nullptr);

}  // namespace psgd::ad
