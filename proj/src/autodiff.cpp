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

#include "psgd/autodiff.hpp"

#include <cmath>
#include <string>

namespace psgd::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::BiasAdd: return "bias-add";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::ScaleShift: return "scale-shift";
    case Op::SumRows: return "sum-rows";
    case Op::SumCols: return "sum-cols";
    case Op::BroadcastRows: return "broadcast-rows";
    case Op::BroadcastCols: return "broadcast-cols";
    case Op::BroadcastScalar: return "broadcast-scalar";
    case Op::SliceRows: return "slice-rows";
    case Op::PadRows: return "pad-rows";
    case Op::ConcatRows: return "concat-rows";
    case Op::SoftmaxCols: return "softmax";
    case Op::SoftmaxCrossEntropy: return "softmax-cross-entropy";
    case Op::Mse: return "mse";
  }
  return "?";
}

const MatrixXd& Var::value() const { return graph->node(id).value; }

namespace {

std::string shape_str(const MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw ContractError("autodiff: vars from different graphs");
}

void same_shape(Var a, Var b, Op op) {
  same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string("autodiff: shape mismatch in ") + std::string(op_name(op)) + ": " +
                        shape_str(a.value()) + " vs " + shape_str(b.value()));
}

Var make(Var like, Op op, std::vector<int> inputs, MatrixXd value) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return like.graph->push(std::move(n));
}

MatrixXd column_softmax(const MatrixXd& z) {
  MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    out.col(j) = (z.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

}  // namespace

Var Graph::push(Node n) {
  for (int in : n.inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  if (n.op == Op::Leaf) n.requires_grad = true;
  if (n.op == Op::Constant) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(MatrixXd value) {
  require_finite(value, "autodiff param");
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::constant(MatrixXd value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var operator+(Var a, Var b) {
  same_shape(a, b, Op::Add);
  return make(a, Op::Add, {a.id, b.id}, a.value() + b.value());
}

Var operator-(Var a, Var b) {
  same_shape(a, b, Op::Sub);
  return make(a, Op::Sub, {a.id, b.id}, a.value() - b.value());
}

Var operator*(Var a, Var b) {
  same_shape(a, b, Op::Mul);
  return make(a, Op::Mul, {a.id, b.id}, a.value().cwiseProduct(b.value()));
}

Var operator/(Var a, Var b) {
  same_shape(a, b, Op::Div);
  return make(a, Op::Div, {a.id, b.id}, a.value().cwiseQuotient(b.value()));
}

Var operator-(Var a) { return scale_shift(a, -1.0, 0.0); }
Var operator*(double s, Var a) { return scale_shift(a, s, 0.0); }

Var matmul(Var a, Var b) {
  same_graph(a, b);
  if (a.cols() != b.rows())
    throw ContractError("autodiff: matmul shape mismatch " + shape_str(a.value()) + " * " +
                        shape_str(b.value()));
  return make(a, Op::MatMul, {a.id, b.id}, a.value() * b.value());
}

Var bias_add(Var a, Var b) {
  same_graph(a, b);
  if (b.cols() != 1 || b.rows() != a.rows())
    throw ContractError("autodiff: bias-add needs an r x 1 bias, got " + shape_str(b.value()));
  MatrixXd out = a.value().colwise() + b.value().col(0);
  return make(a, Op::BiasAdd, {a.id, b.id}, std::move(out));
}

Var transpose(Var a) { return make(a, Op::Transpose, {a.id}, a.value().transpose()); }

Var sum(Var a) {
  MatrixXd out(1, 1);
  out(0, 0) = a.value().sum();
  return make(a, Op::Sum, {a.id}, std::move(out));
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ContractError("autodiff: mean of empty value");
  MatrixXd out(1, 1);
  out(0, 0) = a.value().mean();
  return make(a, Op::Mean, {a.id}, std::move(out));
}

Var square(Var a) { return make(a, Op::Square, {a.id}, a.value().array().square().matrix()); }
Var tanh(Var a) { return make(a, Op::Tanh, {a.id}, a.value().array().tanh().matrix()); }

Var sigmoid(Var a) {
  MatrixXd out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return make(a, Op::Sigmoid, {a.id}, std::move(out));
}

Var relu(Var a) {
  const MatrixXd& x = a.value();
  a.graph->note_kinks(static_cast<std::size_t>((x.array() == 0.0).count()));
  Node n;
  n.op = Op::Relu;
  n.inputs = {a.id};
  n.value = x.cwiseMax(0.0);
  n.aux = std::make_shared<MatrixXd>((x.array() > 0.0).cast<double>().matrix());
  return a.graph->push(std::move(n));
}

Var log(Var a) { return make(a, Op::Log, {a.id}, a.value().array().log().matrix()); }
Var exp(Var a) { return make(a, Op::Exp, {a.id}, a.value().array().exp().matrix()); }

Var scale_shift(Var a, double alpha, double beta) {
  Node n;
  n.op = Op::ScaleShift;
  n.inputs = {a.id};
  n.value = (alpha * a.value().array() + beta).matrix();
  n.alpha = alpha;
  n.beta = beta;
  return a.graph->push(std::move(n));
}

Var sum_rows(Var a) { return make(a, Op::SumRows, {a.id}, a.value().colwise().sum()); }
Var sum_cols(Var a) { return make(a, Op::SumCols, {a.id}, a.value().rowwise().sum()); }

Var broadcast_rows(Var a, Eigen::Index rows) {
  if (a.rows() != 1) throw ContractError("autodiff: broadcast-rows needs a 1 x c input");
  return make(a, Op::BroadcastRows, {a.id}, a.value().replicate(rows, 1));
}

Var broadcast_cols(Var a, Eigen::Index cols) {
  if (a.cols() != 1) throw ContractError("autodiff: broadcast-cols needs an r x 1 input");
  return make(a, Op::BroadcastCols, {a.id}, a.value().replicate(1, cols));
}

Var broadcast_scalar(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (a.rows() != 1 || a.cols() != 1) throw ContractError("autodiff: broadcast-scalar needs a 1x1 input");
  return make(a, Op::BroadcastScalar, {a.id}, MatrixXd::Constant(rows, cols, a.value()(0, 0)));
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ContractError("autodiff: slice-rows out of range");
  Node n;
  n.op = Op::SliceRows;
  n.inputs = {a.id};
  n.value = a.value().middleRows(start, count);
  n.index0 = start;
  n.index1 = count;
  return a.graph->push(std::move(n));
}

Var pad_rows(Var a, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + a.rows() > total) throw ContractError("autodiff: pad-rows out of range");
  Node n;
  n.op = Op::PadRows;
  n.inputs = {a.id};
  n.value = MatrixXd::Zero(total, a.cols());
  n.value.middleRows(start, a.rows()) = a.value();
  n.index0 = start;
  n.index1 = total;
  return a.graph->push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("autodiff: concat of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  std::vector<int> ids;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    if (p.cols() != cols) throw ContractError("autodiff: concat-rows column mismatch");
    rows += p.rows();
    ids.push_back(p.id);
  }
  MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make(parts.front(), Op::ConcatRows, std::move(ids), std::move(out));
}

Var softmax_cols(Var logits) {
  return make(logits, Op::SoftmaxCols, {logits.id}, column_softmax(logits.value()));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const MatrixXd& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.cols())
    throw ContractError("autodiff: softmax-cross-entropy label count mismatch");
  auto onehot = std::make_shared<MatrixXd>(MatrixXd::Zero(z.rows(), z.cols()));
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= z.rows()) throw ContractError("autodiff: label out of range");
    (*onehot)(y, j) = 1.0;
    const double m = z.col(j).maxCoeff();
    const double lse = m + std::log((z.col(j).array() - m).exp().sum());
    total += lse - z(y, j);
  }
  Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.inputs = {logits.id};
  n.value = MatrixXd::Constant(1, 1, total / static_cast<double>(z.cols()));
  n.aux = std::move(onehot);
  return logits.graph->push(std::move(n));
}

Var mse(Var prediction, const MatrixXd& target) {
  if (target.rows() != prediction.rows() || target.cols() != prediction.cols())
    throw ContractError("autodiff: mse target shape mismatch");
  Node n;
  n.op = Op::Mse;
  n.inputs = {prediction.id};
  n.value = MatrixXd::Constant(1, 1, (prediction.value() - target).squaredNorm() /
                                         static_cast<double>(target.size()));
  n.aux = std::make_shared<MatrixXd>(target);
  return prediction.graph->push(std::move(n));
}

Var inner(Var a, const MatrixXd& c) { return sum(a * a.graph->constant(c)); }

std::vector<Var> Graph::vjp(int id, Var g) {
  // Copy what is needed: pushing nodes may reallocate nodes_.
  const Op op = node(id).op;
  const std::vector<int> in = node(id).inputs;
  const Var self{this, id};
  auto input = [&](std::size_t k) { return Var{this, in[k]}; };

  switch (op) {
    case Op::Leaf:
    case Op::Constant:
      return {};
    case Op::Add:
      return {g, g};
    case Op::Sub:
      return {g, -g};
    case Op::Mul:
      return {g * input(1), g * input(0)};
    case Op::Div:
      return {g / input(1), -((g * self) / input(1))};
    case Op::MatMul:
      return {matmul(g, transpose(input(1))), matmul(transpose(input(0)), g)};
    case Op::BiasAdd:
      return {g, sum_cols(g)};
    case Op::Transpose:
      return {transpose(g)};
    case Op::Sum:
      return {broadcast_scalar(g, input(0).rows(), input(0).cols())};
    case Op::Mean: {
      const Var x = input(0);
      return {scale_shift(broadcast_scalar(g, x.rows(), x.cols()),
                          1.0 / static_cast<double>(x.value().size()), 0.0)};
    }
    case Op::Square:
      return {g * scale_shift(input(0), 2.0, 0.0)};
    case Op::Tanh:
      return {g * scale_shift(square(self), -1.0, 1.0)};
    case Op::Sigmoid:
      return {g * (self * scale_shift(self, -1.0, 1.0))};
    case Op::Relu:
      return {g * constant(*node(id).aux)};
    case Op::Log:
      return {g / input(0)};
    case Op::Exp:
      return {g * self};
    case Op::ScaleShift:
      return {scale_shift(g, node(id).alpha, 0.0)};
    case Op::SumRows:
      return {broadcast_rows(g, input(0).rows())};
    case Op::SumCols:
      return {broadcast_cols(g, input(0).cols())};
    case Op::BroadcastRows:
      return {sum_rows(g)};
    case Op::BroadcastCols:
      return {sum_cols(g)};
    case Op::BroadcastScalar:
      return {sum(g)};
    case Op::SliceRows:
      return {pad_rows(g, node(id).index0, input(0).rows())};
    case Op::PadRows:
      return {slice_rows(g, node(id).index0, input(0).rows())};
    case Op::ConcatRows: {
      std::vector<Var> out;
      Eigen::Index at = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const Eigen::Index r = input(k).rows();
        out.push_back(slice_rows(g, at, r));
        at += r;
      }
      return out;
    }
    case Op::SoftmaxCols: {
      const Var s = self;
      return {s * (g - broadcast_rows(sum_rows(g * s), s.rows()))};
    }
    case Op::SoftmaxCrossEntropy: {
      const Var z = input(0);
      const auto onehot = node(id).aux;
      const Var diff = softmax_cols(z) - constant(*onehot);
      return {scale_shift(broadcast_scalar(g, z.rows(), z.cols()) * diff,
                          1.0 / static_cast<double>(z.cols()), 0.0)};
    }
    case Op::Mse: {
      const Var p = input(0);
      const auto target = node(id).aux;
      const Var diff = p - constant(*target);
      return {scale_shift(broadcast_scalar(g, p.rows(), p.cols()) * diff,
                          2.0 / static_cast<double>(p.value().size()), 0.0)};
    }
  }
  return {};
}

std::vector<Var> Graph::grad(Var y, std::span<const Var> wrt) {
  if (y.graph != this) throw ContractError("autodiff: output from another graph");
  if (y.rows() != 1 || y.cols() != 1)
    throw ContractError("autodiff: gradient needs a scalar output, got " + shape_str(y.value()));

  std::vector<int> acc(static_cast<std::size_t>(y.id) + 1, -1);
  acc[static_cast<std::size_t>(y.id)] = constant(MatrixXd::Ones(1, 1)).id;

  for (int id = y.id; id >= 0; --id) {
    const int gid = acc[static_cast<std::size_t>(id)];
    if (gid < 0 || !node(id).requires_grad) continue;
    const std::vector<int> in = node(id).inputs;
    const std::vector<Var> parts = vjp(id, Var{this, gid});
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const int target = in[k];
      if (!node(target).requires_grad) continue;
      int& slot = acc[static_cast<std::size_t>(target)];
      slot = slot < 0 ? parts[k].id : (Var{this, slot} + parts[k]).id;
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const int gid = w.id <= y.id ? acc[static_cast<std::size_t>(w.id)] : -1;
    out.push_back(gid >= 0 ? Var{this, gid} : constant(MatrixXd::Zero(w.rows(), w.cols())));
  }
  return out;
}

namespace {

std::vector<Var> bind_params(Graph& g, const Tape& tape, const Tensors& theta) {
  if (theta.size() != tape.param_shapes.size())
    throw ContractError("autodiff: expected " + std::to_string(tape.param_shapes.size()) +
                        " parameter tensors, got " + std::to_string(theta.size()));
  std::vector<Var> params;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto [r, c] = tape.param_shapes[i];
    if (theta[i].rows() != r || theta[i].cols() != c)
      throw ContractError("autodiff: parameter " + std::to_string(i) + " has shape " +
                          shape_str(theta[i]) + ", expected " + std::to_string(r) + "x" +
                          std::to_string(c));
    params.push_back(g.param(theta[i]));
  }
  return params;
}

Var build_scalar(Graph& g, const Tape& tape, std::span<const Var> params, const Batch& batch) {
  const Var y = tape.build(g, params, batch);
  if (y.rows() != 1 || y.cols() != 1)
    throw ContractError("autodiff: tape output is not scalar: " + shape_str(y.value()));
  return y;
}

}  // namespace

double evaluate(const Tape& tape, const Tensors& theta, const Batch& batch) {
  Graph g;
  const auto params = bind_params(g, tape, theta);
  return build_scalar(g, tape, params, batch).value()(0, 0);
}

Derivatives differentiate(const Tape& tape, const Tensors& theta, const Batch& batch,
                          const Tensors* v) {
  Graph g;
  const auto params = bind_params(g, tape, theta);
  const Var y = build_scalar(g, tape, params, batch);
  const std::vector<Var> grads = g.grad(y, params);

  Derivatives out;
  out.loss = y.value()(0, 0);
  for (const Var& gv : grads) out.gradient.push_back(gv.value());

  if (v != nullptr) {
    if (v->size() != params.size()) throw ContractError("autodiff: direction count mismatch");
    Var dot = g.constant(MatrixXd::Zero(1, 1));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const MatrixXd& vi = (*v)[i];
      if (vi.rows() != params[i].rows() || vi.cols() != params[i].cols())
        throw ContractError("autodiff: direction " + std::to_string(i) + " has wrong shape");
      dot = dot + inner(grads[i], vi);
    }
    const std::vector<Var> hv = g.grad(dot, params);
    for (const Var& h : hv) out.hvp.push_back(h.value());
  }
  out.at_kink = g.kinks() > 0;
  return out;
}

Tensors gradient(const Tape& tape, const Tensors& theta, const Batch& batch) {
  return differentiate(tape, theta, batch).gradient;
}

Tensors hessian_vector_product(const Tape& tape, const Tensors& theta, const Batch& batch,
                               const Tensors& v) {
  return differentiate(tape, theta, batch, &v).hvp;
}

}  // namespace psgd::ad
