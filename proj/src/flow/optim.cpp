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

#include "flowprobe/optim.hpp"

#include <cmath>

#include "flowprobe/error.hpp"

namespace flowprobe {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : config_(config) {
  if (config_.lr <= 0.0) throw ConfigError("learning rate must be positive");
  rebind(std::move(params));
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::rebind(std::vector<Parameter*> params) {
  if (!m_.empty()) {
    if (params.size() != m_.size()) throw ConfigError("Adam rebind changes the parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->value.shape() != m_[i].shape()) {
        throw ConfigError("Adam rebind changes the shape of '" + params[i]->name + "'");
      }
    }
  }
  params_ = std::move(params);
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double Adam::step() {
  double sq = 0.0;
  for (const Parameter* p : params_)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(t_ + 1));
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j] * clip;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      p.value[j] -= config_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
  }
  return norm;
}

}  // namespace flowprobe
