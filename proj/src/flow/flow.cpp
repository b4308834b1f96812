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

#include "flowprobe/flow.hpp"

#include "flowprobe/error.hpp"

namespace flowprobe {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

Tensor ot_path(const Tensor& x0, const Tensor& eps, double t) {
  require_same_shape(x0, eps, "ot_path");
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("ot_path needs t in [0, 1]");
  Tensor xt(x0.shape());
  for (std::size_t i = 0; i < xt.numel(); ++i) xt[i] = (1.0 - t) * eps[i] + t * x0[i];
  return xt;
}

Tensor analytic_velocity(const Tensor& x, double t, const Tensor& x0) {
  require_same_shape(x, x0, "analytic_velocity");
  if (t >= 1.0) throw NumericError("analytic velocity is singular at t = 1");
  Tensor v(x.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = (x0[i] - x[i]) / (1.0 - t);
  return v;
}

Tensor euler_sample(const VelocityField& v, const Tensor& eps_init, int n_steps) {
  if (n_steps < 1) throw ConfigError("euler_sample needs n_steps >= 1");
  const double dt = 1.0 / n_steps;
  Tensor x = eps_init;
  for (int n = 0; n < n_steps; ++n) {
    const Tensor vel = v(x, n * dt);
    require_same_shape(x, vel, "euler_sample");
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += dt * vel[i];
    if (!x.all_finite()) {
      throw NumericError("Euler sampler diverged at step " + std::to_string(n + 1) + " of " +
                         std::to_string(n_steps));
    }
  }
  return x;
}

Tensor FlowItem::target() const {
  Tensor y(x0.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x0[i] - eps[i];
  return y;
}

FlowItem make_flow_item(const Sample& s, int vocab, const Tensor& eps, double t) {
  FlowItem item;
  item.id = s.id;
  item.domain = s.domain;
  item.cond = s.conditioning_tokens(vocab);
  item.x0 = s.target;
  item.eps = eps;
  item.t = t;
  item.xt = ot_path(s.target, eps, t);
  return item;
}

FlowBatch make_flow_batch(std::span<const Sample* const> samples, int vocab, const Rng& rng,
                          double sigma) {
  FlowBatch batch;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    const double t = r.uniform();
    const Tensor eps = r.normal_tensor(samples[i]->target.shape(), sigma);
    batch.items.push_back(make_flow_item(*samples[i], vocab, eps, t));
  }
  return batch;
}

double fm_loss(const Predictor& predict, const FlowBatch& batch) {
  if (batch.items.empty()) throw ConfigError("fm_loss of an empty batch");
  double total = 0.0;
  for (const FlowItem& item : batch.items) {
    const Tensor v = predict(item);
    require_same_shape(v, item.x0, "fm_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const double d = v[i] - (item.x0[i] - item.eps[i]);
      acc += d * d;
    }
    total += acc / static_cast<double>(v.numel());
  }
  return total / static_cast<double>(batch.items.size());
}

double fm_loss(const GatedResidualNet& net, const FlowBatch& batch) {
  return fm_loss(
      [&net](const FlowItem& item) {
        return net.forward(net.build_conditioning(item.cond, item.xt, item.t));
      },
      batch);
}

Var fm_item_loss(Tape& tape, Var velocity, const FlowItem& item) {
  return ad::mean(ad::square(ad::sub(velocity, tape.constant(item.target()))));
}

Tensor sample_net(const GatedResidualNet& net, std::span<const int> cond, const Tensor& eps_init,
                  int n_steps) {
  const ConditioningPack base = net.build_conditioning(cond, eps_init, 0.0);
  return euler_sample(
      [&](const Tensor& x, double t) {
        ConditioningPack pack = base;
        pack.x_t = x;
        pack.t = t;
        return net.forward(pack);
      },
      eps_init, n_steps);
}

}  // namespace flowprobe
