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

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include "flowprobe/agrepa.hpp"
#include "flowprobe/binio.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/kvtext.hpp"

namespace flowprobe {

const char* selection_source_name(SelectionSource s) {
  switch (s) {
    case SelectionSource::None: return "none";
    case SelectionSource::FoGA: return "foga";
    case SelectionSource::LASP: return "lasp";
    case SelectionSource::GradNorm: return "gradnorm";
    case SelectionSource::Random: return "random";
    case SelectionSource::FixedList: return "fixed";
  }
  return "?";
}

SelectionPlan::SelectionPlan(std::string strategy, SelectionSource source, std::vector<int> layers,
                             std::vector<double> lambdas, double lambda_bit, double lambda_align)
    : strategy_(std::move(strategy)),
      source_(source),
      layers_(std::move(layers)),
      lambdas_(std::move(lambdas)),
      lambda_bit_(lambda_bit),
      lambda_align_(lambda_align) {
  if (layers_.size() != lambdas_.size()) throw ConfigError("plan needs one weight per layer");
  if (lambda_bit_ < 0.0 || lambda_align_ < 0.0) throw ConfigError("plan multipliers must be >= 0");
}

void SelectionPlan::require_mutable() const {
  if (frozen_) throw ProtocolViolation("selection plan '" + strategy_ + "' is frozen");
}

void SelectionPlan::set_lambda_align(double v) {
  require_mutable();
  lambda_align_ = v;
}

void SelectionPlan::set_lambda_bit(double v) {
  require_mutable();
  lambda_bit_ = v;
}

void SelectionPlan::set_uniform_fallback(bool v) {
  require_mutable();
  uniform_fallback_ = v;
}

std::string SelectionPlan::canonical() const {
  std::ostringstream os;
  os << "strategy=" << strategy_ << ";source=" << selection_source_name(source_) << ";S=";
  for (std::size_t i = 0; i < layers_.size(); ++i) os << (i ? "," : "") << layers_[i];
  os << ";lambda=";
  for (std::size_t i = 0; i < lambdas_.size(); ++i) os << (i ? "," : "") << kv::format_double(lambdas_[i]);
  os << ";lambda_bit=" << kv::format_double(lambda_bit_) << ";lambda_align=" << kv::format_double(lambda_align_)
     << ";uniform_fallback=" << (uniform_fallback_ ? 1 : 0);
  return os.str();
}

std::uint64_t SelectionPlan::digest() const { return binio::fnv1a64(canonical()); }

std::vector<int> select_topk(std::span<const double> scores, int k) {
  if (k <= 0) throw ConfigError("select_topk needs K >= 1");
  if (static_cast<std::size_t>(k) > scores.size()) {
    throw ConfigError("K = " + std::to_string(k) + " exceeds the " + std::to_string(scores.size()) +
                      " available layers");
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::vector<int> select_topk(const AttributionProfile& profile, int k) {
  const auto pooled = profile.pooled();
  return select_topk(pooled, k);
}

std::vector<double> attribution_weights(std::span<const double> scores, std::span<const int> selected) {
  double total = 0.0;
  for (int k : selected) {
    if (k < 0 || static_cast<std::size_t>(k) >= scores.size()) {
      throw ConfigError("selected layer " + std::to_string(k) + " has no score");
    }
    const double s = scores[static_cast<std::size_t>(k)];
    if (!(s > 0.0)) {
      throw DegenerateSelection("layer " + std::to_string(k) + " has non-positive attribution " +
                                std::to_string(s));
    }
    total += s;
  }
  std::vector<double> lambdas;
  for (int k : selected) lambdas.push_back(scores[static_cast<std::size_t>(k)] / total);
  return lambdas;
}

namespace {

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

void check_layers(const std::vector<int>& layers, int L, const std::string& strategy) {
  for (int k : layers) {
    if (k < 0 || k > L) {
      throw ConfigError("strategy '" + strategy + "' names layer " + std::to_string(k) +
                        " outside 0.." + std::to_string(L));
    }
  }
}

SelectionPlan metric_plan(const std::string& strategy, SelectionSource source,
                          const AttributionProfile* profile, int L, const PlanOptions& o) {
  if (profile == nullptr) throw ConfigError("strategy '" + strategy + "' needs its profile");
  if (profile->layers() != L) throw ConfigError("profile depth does not match the network");
  const auto scores = profile->pooled();
  std::vector<int> S;
  if (o.force_include_interface) {
    S.push_back(0);
    std::vector<double> rest(scores);
    rest[0] = -std::numeric_limits<double>::infinity();
    for (int k : select_topk(rest, o.k)) {
      if (static_cast<int>(S.size()) == o.k) break;
      if (k != 0) S.push_back(k);
    }
  } else {
    S = select_topk(scores, o.k);
  }
  bool fallback = false;
  std::vector<double> lambdas;
  try {
    lambdas = attribution_weights(scores, S);
  } catch (const DegenerateSelection&) {
    lambdas = uniform(S.size());
    fallback = true;
  }
  SelectionPlan plan(strategy, source, S, lambdas, o.lambda_bit, o.lambda_align);
  plan.set_uniform_fallback(fallback);
  return plan;
}

}  // namespace

SelectionPlan make_plan(const std::string& strategy, const PlanProfiles& profiles, int L,
                        const PlanOptions& o) {
  if (strategy == "none") return SelectionPlan("none", SelectionSource::None, {}, {}, o.lambda_bit, o.lambda_align);
  if (strategy == "foga") return metric_plan(strategy, SelectionSource::FoGA, profiles.foga, L, o);
  if (strategy == "lasp") return metric_plan(strategy, SelectionSource::LASP, profiles.lasp, L, o);
  if (strategy == "gradnorm") return metric_plan(strategy, SelectionSource::GradNorm, profiles.gradnorm, L, o);
  if (strategy == "random") {
    if (o.k < 1 || o.k > L) throw ConfigError("random strategy needs 1 <= K <= L");
    std::vector<int> pool(static_cast<std::size_t>(L));
    std::iota(pool.begin(), pool.end(), 1);
    Rng rng = Rng(o.seed).split("random-plan");
    for (std::size_t i = 0; i < static_cast<std::size_t>(o.k); ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> S(pool.begin(), pool.begin() + o.k);
    std::sort(S.begin(), S.end());
    return SelectionPlan(strategy, SelectionSource::Random, S, uniform(S.size()), o.lambda_bit, o.lambda_align);
  }
  std::vector<int> S;
  if (strategy == "deep") {
    if (L < 5) throw ConfigError("deep strategy needs L >= 5");
    S = {L - 4, L - 3, L - 2};
  } else if (strategy == "shallow") {
    if (L < 3) throw ConfigError("shallow strategy needs L >= 3");
    S = {1, 2, 3};
  } else if (strategy.rfind("fixed:", 0) == 0) {
    std::stringstream ss(strategy.substr(6));
    std::string item;
    while (std::getline(ss, item, ',')) S.push_back(static_cast<int>(kv::to_int("fixed", item)));
    if (S.empty()) throw ConfigError("fixed strategy needs at least one layer");
    std::vector<int> sorted = S;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("fixed strategy repeats a layer");
    }
  } else {
    throw ConfigError("unknown strategy '" + strategy + "'");
  }
  check_layers(S, L, strategy);
  return SelectionPlan(strategy, SelectionSource::FixedList, S, uniform(S.size()), o.lambda_bit, o.lambda_align);
}

void check_strategy(const std::string& strategy, int L, int k) {
  if (strategy == "none" || strategy == "foga" || strategy == "lasp" || strategy == "gradnorm") return;
  PlanOptions o;
  o.k = k;
  make_plan(strategy, {}, L, o);
}

std::vector<SelectionPlan> make_control_plans(const PlanProfiles& profiles, int L, const PlanOptions& o) {
  std::vector<SelectionPlan> plans;
  for (const char* s : {"random", "lasp", "gradnorm", "fixed:4,8,12", "deep", "shallow"}) {
    plans.push_back(make_plan(s, profiles, L, o));
  }
  return plans;
}

}  // namespace flowprobe
