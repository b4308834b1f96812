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

#include "flowprobe/agrepa.hpp"
#include "flowprobe/error.hpp"

namespace flowprobe {

namespace {

struct DomainCounts {
  std::size_t speech = 0, audio = 0;
  std::size_t of(Domain d) const { return d == Domain::Speech ? speech : audio; }
};

DomainCounts count_domains(const FlowBatch& batch) {
  DomainCounts c;
  for (const FlowItem& item : batch.items) (item.domain == Domain::Speech ? c.speech : c.audio)++;
  return c;
}

void check_model(const BranchModel& m, const SelectionPlan& plan) {
  if (m.net == nullptr || m.heads == nullptr) throw ConfigError("branch model is incomplete");
  for (int k : plan.layers()) {
    if (k > m.net->layers()) throw ConfigError("plan selects layer " + std::to_string(k) + " beyond the network");
    if (m.layer_heads == nullptr || m.layer_heads->count(k) == 0) {
      throw ConfigError("no per-layer head for selected layer " + std::to_string(k));
    }
  }
}

struct ItemValues {
  double total = 0.0, fm = 0.0, bit_cos = 0.0;
  std::vector<double> align_cos;
};

LossBreakdown summarize(const SelectionPlan& plan, const FlowBatch& batch,
                        const std::vector<ItemValues>& items) {
  const DomainCounts counts = count_domains(batch);
  const double B = static_cast<double>(items.size());
  LossBreakdown out;
  double bit[2] = {0.0, 0.0};
  std::vector<double> per_layer(plan.layers().size(), 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.total += items[i].total;
    out.fm += items[i].fm;
    bit[batch.items[i].domain == Domain::Speech ? 0 : 1] += 1.0 - items[i].bit_cos;
    for (std::size_t j = 0; j < per_layer.size(); ++j) per_layer[j] += 1.0 - items[i].align_cos[j];
  }
  out.fm /= B;
  if (counts.speech > 0) out.bit += bit[0] / static_cast<double>(counts.speech);
  if (counts.audio > 0) out.bit += bit[1] / static_cast<double>(counts.audio);
  for (std::size_t j = 0; j < per_layer.size(); ++j) {
    per_layer[j] /= B;
    out.per_layer[plan.layers()[j]] = per_layer[j];
    out.align += plan.lambdas()[j] * per_layer[j];
  }
  return out;
}

}  // namespace

ItemObjective item_objective(Tape& tape, BranchModel model, const TeacherBundle& teachers,
                             const SelectionPlan& plan, const FlowItem& item, std::size_t batch_size,
                             std::size_t domain_count) {
  GatedResidualNet& net = *model.net;
  TapeForward fw = net.forward_tape(tape, item.cond, item.xt, item.t, all_gates(net.layers()));
  const Tensor t_emb = teachers.for_domain(item.domain).encode(item.x0);
  const double B = static_cast<double>(batch_size);

  ItemObjective obj;
  Var fm = fm_item_loss(tape, fw.velocity, item);
  obj.fm = fm.value().item();
  Var c0 = interface_cosine(tape, fw.states[0], model.heads->for_domain(item.domain), t_emb);
  obj.bit_cos = c0.value().item();
  Var total = ad::add(ad::scale(fm, 1.0 / B),
                      ad::scale(ad::add_scalar(ad::scale(c0, -1.0), 1.0),
                                plan.lambda_bit() / static_cast<double>(domain_count)));

  if (!plan.empty()) {
    Var align;
    for (std::size_t j = 0; j < plan.layers().size(); ++j) {
      const int k = plan.layers()[j];
      PerLayerHead& head = model.layer_heads->at(k);
      Var ck = ad::cosine(head.forward(tape, descriptor(fw.states[static_cast<std::size_t>(k)])),
                          tape.constant(t_emb), 1e-8);
      obj.align_cos.push_back(ck.value().item());
      Var term = ad::scale(ad::add_scalar(ad::scale(ck, -1.0), 1.0), plan.lambdas()[j]);
      align = align.valid() ? ad::add(align, term) : term;
    }
    total = ad::add(total, ad::scale(align, plan.lambda_align() / B));
  }
  obj.total = total;
  return obj;
}

LossBreakdown agrepa_loss(BranchModel model, const TeacherBundle& teachers, const SelectionPlan& plan,
                          const FlowBatch& batch) {
  check_model(model, plan);
  if (batch.items.empty()) throw ConfigError("agrepa_loss of an empty batch");
  const DomainCounts counts = count_domains(batch);
  std::vector<ItemValues> values;
  for (const FlowItem& item : batch.items) {
    Tape tape(false);
    ItemObjective o = item_objective(tape, model, teachers, plan, item, batch.items.size(),
                                     counts.of(item.domain));
    values.push_back({o.total.value().item(), o.fm, o.bit_cos, o.align_cos});
  }
  return summarize(plan, batch, values);
}

LossBreakdown accumulate_batch_gradients(BranchModel model, const TeacherBundle& teachers,
                                         const SelectionPlan& plan, const FlowBatch& batch,
                                         kernels::Policy policy) {
  check_model(model, plan);
  if (batch.items.empty()) throw ConfigError("empty training batch");
  const DomainCounts counts = count_domains(batch);
  const std::size_t B = batch.items.size();
  std::vector<GradientList> grads(B);
  std::vector<ItemValues> values(B);
  kernels::for_each_index(B, policy, [&](std::size_t i) {
    const FlowItem& item = batch.items[i];
    Tape tape;
    ItemObjective o = item_objective(tape, model, teachers, plan, item, B, counts.of(item.domain));
    tape.backward(o.total);
    grads[i] = tape.param_grads();
    values[i] = {o.total.value().item(), o.fm, o.bit_cos, o.align_cos};
  });
  accumulate_gradients(grads);
  return summarize(plan, batch, values);
}

}  // namespace flowprobe
