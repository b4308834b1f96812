/* Copyright 2026 The flowprobe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowprobe/tensor.hpp"

namespace flowprobe {

/// A named trainable tensor. Gradients accumulate into `grad` only through
/// explicit reductions (see accumulate_gradients), never from inside a tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
  Constant,
  Input,
  Param,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  Mul,
  AddRow,
  MulRow,
  Scale,
  AddScalar,
  Tanh,
  Gelu,
  Silu,
  SoftmaxRows,
  LayerNorm,
  MeanRows,
  SliceCols,
  ConcatCols,
  Sum,
  Square,
  Cosine,
  GatherRows,
};

const char* op_name(Op op);

using BackwardFn = std::function<void(Tape&, int self)>;
using GradientList = std::vector<std::pair<Parameter*, Tensor>>;

/// Append-only record of a computation. Nodes are created after their
/// parents, so node order is a topological order and backward() walks it in
/// reverse, visiting each node once.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var param(Parameter& p);

  Var push(Op op, Tensor value, std::vector<int> parents, BackwardFn backward);

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Tensor& value(int id) const { return nodes_[id].value; }
  Op op(int id) const { return nodes_[id].op; }
  const std::vector<int>& parents(int id) const { return nodes_[id].parents; }
  std::size_t size() const { return nodes_.size(); }

  // Lazily zero-initialised gradient buffer of node `id`.
  Tensor& grad_ref(int id);

  // Gradient of the last backward() with respect to v; zeros when unreachable.
  Tensor grad(Var v) const;

  void backward(Var loss);

  // d(loss)/d(param) for every parameter leaf on this tape, in first-use
  // order. Unreachable parameters get an exact zero tensor.
  GradientList param_grads() const;

 private:
  struct Node {
    Op op;
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

/// Sums per-item gradient lists into Parameter::grad, item by item in index
/// order. This is the single reduction point for batched training.
void accumulate_gradients(const std::vector<GradientList>& per_item);

namespace ad {

Var matmul(Var a, Var b);      // [m×k]·[k×n]
Var matmul_nt(Var a, Var b);   // [m×k]·[n×k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);   // row is 1×n, broadcast over rows of a
Var mul_row(Var a, Var row);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var gelu(Var a);
Var silu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, double eps);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var mean_rows(Var x);          // [T×D] -> [1×D]
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var sum(Var x);                // -> [1]
Var mean(Var x);               // -> [1]
Var square(Var x);
Var cosine(Var a, Var b, double eps = 1e-8);  // -> [1]
Var gather_rows(Var table, const std::vector<int>& ids);

}  // namespace ad
}  // namespace flowprobe
