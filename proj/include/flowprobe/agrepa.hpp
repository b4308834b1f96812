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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowprobe/backbone.hpp"
#include "flowprobe/flow.hpp"
#include "flowprobe/kernels.hpp"
#include "flowprobe/probes.hpp"
#include "flowprobe/teachers.hpp"

namespace flowprobe {

enum class SelectionSource { None, FoGA, LASP, GradNorm, Random, FixedList };
const char* selection_source_name(SelectionSource s);

/// Layer set S with normalised weights. Mutators throw ProtocolViolation once frozen.
class SelectionPlan {
 public:
  SelectionPlan() = default;
  SelectionPlan(std::string strategy, SelectionSource source, std::vector<int> layers,
                std::vector<double> lambdas, double lambda_bit, double lambda_align);

  const std::string& strategy() const { return strategy_; }
  SelectionSource source() const { return source_; }
  const std::vector<int>& layers() const { return layers_; }
  const std::vector<double>& lambdas() const { return lambdas_; }
  double lambda_bit() const { return lambda_bit_; }
  double lambda_align() const { return lambda_align_; }
  bool frozen() const { return frozen_; }
  bool uniform_fallback() const { return uniform_fallback_; }
  bool empty() const { return layers_.empty(); }

  void set_lambda_align(double v);
  void set_lambda_bit(double v);
  void set_uniform_fallback(bool v);
  void freeze() { frozen_ = true; }

  std::string canonical() const;  // stable text form, input of digest()
  std::uint64_t digest() const;

 private:
  void require_mutable() const;

  std::string strategy_ = "none";
  SelectionSource source_ = SelectionSource::None;
  std::vector<int> layers_;
  std::vector<double> lambdas_;
  double lambda_bit_ = 0.1;
  double lambda_align_ = 0.5;
  bool frozen_ = false;
  bool uniform_fallback_ = false;
};

/// The K highest scores (scores[l] belongs to layer l), ties to the lower
/// layer, returned in rank order.
std::vector<int> select_topk(std::span<const double> scores, int k);
std::vector<int> select_topk(const AttributionProfile& profile, int k);

/// lambda_k = score_k / sum over S. Throws DegenerateSelection when any
/// selected score is not positive.
std::vector<double> attribution_weights(std::span<const double> scores, std::span<const int> selected);

struct PlanOptions {
  int k = 3;
  double lambda_bit = 0.1;
  double lambda_align = 0.5;
  bool force_include_interface = false;
  std::uint64_t seed = 0;  // RandomK stream
};

/// Pooled profiles the metric-driven strategies read from.
struct PlanProfiles {
  const AttributionProfile* foga = nullptr;
  const AttributionProfile* lasp = nullptr;
  const AttributionProfile* gradnorm = nullptr;
};

/// Strategy names: none, foga, lasp, gradnorm, random, fixed:a,b,c, deep, shallow.
SelectionPlan make_plan(const std::string& strategy, const PlanProfiles& profiles, int layers,
                        const PlanOptions& options);

/// Throws ConfigError unless `strategy` names a plan make_plan can build for `layers`.
void check_strategy(const std::string& strategy, int layers, int k);

/// Random, HighestLASP, GradNorm, FixedList(4,8,12), Deep(L-4..L-2), Shallow(1..3).
std::vector<SelectionPlan> make_control_plans(const PlanProfiles& profiles, int layers,
                                              const PlanOptions& options);

struct LossBreakdown {
  double total = 0.0;
  double fm = 0.0;
  double bit = 0.0;    // interface term before lambda_bit
  double align = 0.0;  // sum_k lambda_k (1 - cos_k), before lambda_align
  std::map<int, double> per_layer;  // mean (1 - cos_k) per selected layer
};

/// Trainable state of one branch. Interface heads may be frozen.
struct BranchModel {
  GatedResidualNet* net = nullptr;
  InterfaceHeads* heads = nullptr;
  std::map<int, PerLayerHead>* layer_heads = nullptr;
};

/// L_total = L_FM + lambda_bit L_BiT + lambda_align sum_k lambda_k (1 - cos(h_k(hbar_k), T(x0))).
LossBreakdown agrepa_loss(BranchModel model, const TeacherBundle& teachers, const SelectionPlan& plan,
                          const FlowBatch& batch);

/// The same objective summed per item on `tape`, scaled so that the sum over
/// items equals the batch loss. Parameters enter as tape parameters.
struct ItemObjective {
  Var total;
  double fm = 0.0, bit_cos = 0.0;
  std::vector<double> align_cos;  // per selected layer, plan order
};
ItemObjective item_objective(Tape& tape, BranchModel model, const TeacherBundle& teachers,
                             const SelectionPlan& plan, const FlowItem& item, std::size_t batch_size,
                             std::size_t domain_count);

/// Per-item tapes fanned out under `policy`, gradients reduced in item order
/// into Parameter::grad. Returns the batch breakdown.
LossBreakdown accumulate_batch_gradients(BranchModel model, const TeacherBundle& teachers,
                                         const SelectionPlan& plan, const FlowBatch& batch,
                                         kernels::Policy policy);

}  // namespace flowprobe
