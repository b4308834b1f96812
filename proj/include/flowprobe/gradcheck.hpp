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

#include <functional>
#include <vector>

#include "flowprobe/autodiff.hpp"
#include "flowprobe/rng.hpp"

namespace flowprobe {

/// Builds a scalar loss on the given tape from a differentiable input.
using ScalarFn = std::function<Var(Tape&, Var theta)>;
/// Builds a scalar loss on the given tape from registered Parameters.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat coordinate (or sample slot) of the worst error
  std::size_t checked = 0;
};

/// Compares backward() against central differences coordinatewise, with
/// relative error |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const ScalarFn& f, const Tensor& theta, double step);

/// Same check over `n_samples` coordinates drawn uniformly from `params`.
/// Parameter values are restored exactly afterwards.
GradCheckResult grad_check_params(const LossFn& loss, const std::vector<Parameter*>& params,
                                  std::size_t n_samples, Rng rng, double step);

double relative_error(double analytic, double numeric);

}  // namespace flowprobe
