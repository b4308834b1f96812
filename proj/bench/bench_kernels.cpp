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


#include <benchmark/benchmark.h>

#include <vector>

#include "flowprobe/agrepa.hpp"
#include "flowprobe/kernels.hpp"
#include "flowprobe/probes.hpp"

using namespace flowprobe;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> v(n);
  for (double& x : v) x = r.normal();
  return v;
}

template <void (*Gemm)(kernels::Transpose, kernels::Transpose, std::size_t, std::size_t, std::size_t,
                       const double*, const double*, double*, bool)>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(kernels::Transpose::No, kernels::Transpose::No, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Desk-sized model, one training batch of eight items.
struct Fixture {
  TopologyConfig data;
  GroundTruthProcess gt = make_ground_truth(1, data);
  TeacherBundle teachers = TeacherBundle::make(2, gt);
  Corpus corpus = make_corpus(gt, Topology::A, 20, 3, nullptr);
  GatedResidualNet net{BackboneConfig::for_data(data, 12, 48), 4};
  InterfaceHeads heads = InterfaceHeads::make(48, 12, Rng(5));
  std::vector<int> layers{1, 5, 9};
  std::map<int, PerLayerHead> layer_heads = make_layer_heads(layers, 48, 12, Rng(6));
  SelectionPlan plan{"foga", SelectionSource::FoGA, layers, {0.5, 0.3, 0.2}, 0.1, 0.5};
  FlowBatch batch;

  Fixture() {
    std::vector<const Sample*> ptrs;
    for (std::size_t i = 0; i < 4; ++i) {
      ptrs.push_back(&corpus.train[i]);
      ptrs.push_back(&corpus.train[corpus.train.size() - 1 - i]);
    }
    batch = make_flow_batch(ptrs, data.vocab, Rng(7));
  }
};

void BM_BatchGradients(benchmark::State& state) {
  static Fixture f;
  const auto policy = state.range(0) ? kernels::Policy::Parallel : kernels::Policy::Serial;
  for (auto _ : state) {
    LossBreakdown l = accumulate_batch_gradients({&f.net, &f.heads, &f.layer_heads}, f.teachers, f.plan, f.batch, policy);
    benchmark::DoNotOptimize(l.total);
  }
}

void BM_FogaProfile(benchmark::State& state) {
  static Fixture f;
  ProbeOptions o;
  o.t_bins = default_t_bins(2);
  o.budget = 2;
  o.policy = state.range(0) ? kernels::Policy::Parallel : kernels::Policy::Serial;
  const ProbeSet ps = ProbeSet::make(f.corpus.probe, f.data.vocab, o);
  for (auto _ : state) {
    ProfileSet p = foga_profile(f.net, ps, o);
    benchmark::DoNotOptimize(p.pooled.values.data().data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<kernels::gemm_serial>)->Name("gemm/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<kernels::gemm_omp>)->Name("gemm/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_BatchGradients)->Name("batch_gradients")->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FogaProfile)->Name("foga_profile")->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
