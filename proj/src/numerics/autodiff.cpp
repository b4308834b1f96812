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

#include "flowprobe/autodiff.hpp"

#include "flowprobe/error.hpp"

namespace flowprobe {

const Tensor& Var::value() const { return tape->value(id); }

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Tanh: return "tanh";
    case Op::Gelu: return "gelu";
    case Op::Silu: return "silu";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LayerNorm: return "layer_norm";
    case Op::MeanRows: return "mean_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
    case Op::Cosine: return "cosine";
    case Op::GatherRows: return "gather_rows";
  }
  return "?";
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{Op::Constant, std::move(value), {}, {}, {}, false, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{Op::Input, std::move(value), {}, {}, {}, grad_enabled_, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  // Parameter values are copied so later optimizer steps cannot alias a live tape.
  nodes_.push_back(Node{Op::Param, p.value, {}, {}, {}, grad_enabled_, &p});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::push(Op op, Tensor value, std::vector<int> parents, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (int p : parents) needs = needs || nodes_[p].requires_grad;
  }
  Node n{op, std::move(value), {}, std::move(parents), {}, needs, nullptr};
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward() on a variable from another tape");
  const Node& root = nodes_[loss.id];
  if (root.value.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!root.requires_grad) return;
  grad_ref(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

GradientList Tape::param_grads() const {
  GradientList out;
  out.reserve(param_nodes_.size());
  for (const auto& n : nodes_) {
    if (n.op != Op::Param) continue;
    out.emplace_back(n.param, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

void accumulate_gradients(const std::vector<GradientList>& per_item) {
  for (const auto& item : per_item) {
    for (const auto& [param, g] : item) {
      if (param->grad.shape() != param->value.shape()) param->zero_grad();
      auto dst = param->grad.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

}  // namespace flowprobe
