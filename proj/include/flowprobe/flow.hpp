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
#include <span>
#include <vector>

#include "flowprobe/autodiff.hpp"
#include "flowprobe/backbone.hpp"
#include "flowprobe/rng.hpp"
#include "flowprobe/synthdata.hpp"

namespace flowprobe {

/// x_t = (1 - t)·eps + t·x0
Tensor ot_path(const Tensor& x0, const Tensor& eps, double t);

/// (x0 - x) / (1 - t); throws NumericError at t >= 1.
Tensor analytic_velocity(const Tensor& x, double t, const Tensor& x0);

using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

/// Forward Euler on [0, 1] with n_steps uniform steps.
Tensor euler_sample(const VelocityField& v, const Tensor& eps_init, int n_steps);

/// One training/probe item: a sample at diffusion time t with its noise draw.
struct FlowItem {
  std::uint64_t id = 0;
  Domain domain = Domain::Speech;
  std::vector<int> cond;  // conditioning token ids
  Tensor x0, eps, xt;
  double t = 0.0;

  Tensor target() const;  // x0 - eps
};

struct FlowBatch {
  std::vector<FlowItem> items;
};

FlowItem make_flow_item(const Sample& s, int vocab, const Tensor& eps, double t);

/// Items with t ~ U[0, 1) and eps ~ N(0, sigma^2 I), drawn from `rng` split per position.
FlowBatch make_flow_batch(std::span<const Sample* const> samples, int vocab, const Rng& rng,
                          double sigma = 1.0);

using Predictor = std::function<Tensor(const FlowItem&)>;

/// Mean over items and coordinates of (v - (x0 - eps))^2.
double fm_loss(const Predictor& predict, const FlowBatch& batch);
double fm_loss(const GatedResidualNet& net, const FlowBatch& batch);

/// Mean squared error of one item's velocity against its target, on a tape.
Var fm_item_loss(Tape& tape, Var velocity, const FlowItem& item);

/// Euler-samples x0 for `cond` with the network velocity field.
Tensor sample_net(const GatedResidualNet& net, std::span<const int> cond, const Tensor& eps_init,
                  int n_steps);

}  // namespace flowprobe
