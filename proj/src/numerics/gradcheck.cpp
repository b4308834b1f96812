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

#include "flowprobe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "flowprobe/error.hpp"

namespace flowprobe {

double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / den;
}

namespace {

double finite_value(double v) {
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& theta, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check step must be > 0");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.input(theta);
    Var loss = f(tape, x);
    finite_value(loss.value().item());
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  auto eval = [&](const Tensor& th) {
    Tape tape(false);
    Var x = tape.input(th);
    return finite_value(f(tape, x).value().item());
  };
  GradCheckResult r;
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    probe[i] = theta[i] + step;
    const double fp = eval(probe);
    probe[i] = theta[i] - step;
    const double fm = eval(probe);
    probe[i] = theta[i];
    const double err = relative_error(analytic[i], (fp - fm) / (2.0 * step));
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

GradCheckResult grad_check_params(const LossFn& loss, const std::vector<Parameter*>& params,
                                  std::size_t n_samples, Rng rng, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check step must be > 0");
  std::size_t total = 0;
  for (auto* p : params) total += p->value.numel();
  if (total == 0) throw ConfigError("grad_check_params: no parameters");

  GradientList grads;
  {
    Tape tape;
    Var l = loss(tape);
    finite_value(l.value().item());
    tape.backward(l);
    grads = tape.param_grads();
  }
  auto analytic_of = [&](const Parameter* p, std::size_t i) {
    for (const auto& [q, g] : grads)
      if (q == p) return g[i];
    return 0.0;  // parameter never touched by the loss
  };
  auto eval = [&] {
    Tape tape(false);
    return finite_value(loss(tape).value().item());
  };

  GradCheckResult r;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::size_t flat = rng.below(total);
    Parameter* p = nullptr;
    for (auto* q : params) {
      if (flat < q->value.numel()) {
        p = q;
        break;
      }
      flat -= q->value.numel();
    }
    const double orig = p->value[flat];
    p->value[flat] = orig + step;
    const double fp = eval();
    p->value[flat] = orig - step;
    const double fm = eval();
    p->value[flat] = orig;
    const double err = relative_error(analytic_of(p, flat), (fp - fm) / (2.0 * step));
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = s;
    }
    ++r.checked;
  }
  return r;
}

}  // namespace flowprobe
