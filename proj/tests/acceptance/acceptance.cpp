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


// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fixtures.hpp"
#include "flowprobe/agrepa.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/evalreport.hpp"
#include "flowprobe/gradcheck.hpp"
#include "flowprobe/protocol.hpp"

namespace fs = std::filesystem;
using namespace flowprobe;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path g_work;
std::string g_cli;

// Desk-size network and data shared by the numerical criteria.
struct Desk {
  ProtocolConfig cfg;
  GroundTruthProcess gt;
  TeacherBundle teachers;
  Corpus corpus;
  Desk()
      : gt(make_ground_truth(11, cfg.data)),
        teachers(TeacherBundle::make(12, gt, cfg.teacher)),
        corpus(make_corpus(gt, Topology::A, 50, 13, nullptr)) {}

  GatedResidualNet woken_net(std::uint64_t seed) const {
    GatedResidualNet net(cfg.backbone(), seed);
    fpt::wake_modulation(net, seed * 31 + 1, 0.05);
    return net;
  }
  FlowBatch batch(std::size_t per_domain, std::uint64_t seed) const {
    std::vector<const Sample*> ptrs;
    const std::size_t n = corpus.train.size();
    for (std::size_t i = 0; i < per_domain; ++i) {
      ptrs.push_back(&corpus.train[i]);
      ptrs.push_back(&corpus.train[n - 1 - i]);
    }
    return make_flow_batch(ptrs, cfg.data.vocab, Rng(seed), 1.0);
  }
};

std::vector<Parameter*> concat(std::initializer_list<std::vector<Parameter*>> lists) {
  std::vector<Parameter*> out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

Verdict criterion1() {
  Desk d;
  GatedResidualNet net = d.woken_net(3);
  InterfaceHeads heads = InterfaceHeads::make(d.cfg.width, d.cfg.teacher.d_teacher, Rng(4));
  const std::vector<int> S{1, 6, 11};
  auto layer_heads = make_layer_heads(S, d.cfg.width, d.cfg.teacher.d_teacher, Rng(5));
  const SelectionPlan plan("foga", SelectionSource::FoGA, S, {0.5, 0.3, 0.2}, 0.1, 0.5);
  const FlowBatch batch = d.batch(2, 6);
  const std::size_t B = batch.items.size();
  BranchModel model{&net, &heads, &layer_heads};

  auto fm = [&](Tape& tape) {
    Var total;
    for (const FlowItem& it : batch.items) {
      TapeForward fw = net.forward_tape(tape, it.cond, it.xt, it.t, all_gates(net.layers()));
      Var l = ad::scale(fm_item_loss(tape, fw.velocity, it), 1.0 / static_cast<double>(B));
      total = total.valid() ? ad::add(total, l) : l;
    }
    return total;
  };
  auto bit = [&](Tape& tape) {
    Var total;
    for (const FlowItem& it : batch.items) {
      TapeForward fw = net.forward_tape(tape, it.cond, it.xt, it.t, all_gates(net.layers()));
      const Tensor te = d.teachers.for_domain(it.domain).encode(it.x0);
      Var c = interface_cosine(tape, fw.states[0], heads.for_domain(it.domain), te);
      Var l = ad::scale(ad::add_scalar(ad::scale(c, -1.0), 1.0), 1.0 / static_cast<double>(B / 2));
      total = total.valid() ? ad::add(total, l) : l;
    }
    return total;
  };
  auto full = [&](Tape& tape) {
    Var total;
    for (const FlowItem& it : batch.items) {
      Var l = item_objective(tape, model, d.teachers, plan, it, B, B / 2).total;
      total = total.valid() ? ad::add(total, l) : l;
    }
    return total;
  };

  std::vector<Parameter*> head_params = concat({heads.speech.mutable_parameters(), heads.audio.mutable_parameters()});
  std::vector<Parameter*> layer_params;
  for (auto& [k, h] : layer_heads)
    for (Parameter* p : h.parameters()) layer_params.push_back(p);
  const auto all_net = net.parameters();
  // The interface term only reaches parameters up to z_0.
  std::vector<Parameter*> interface_params;
  for (Parameter* p : all_net)
    if (p->name.rfind("embed", 0) == 0 || p->name.rfind("in.", 0) == 0) interface_params.push_back(p);
  interface_params.insert(interface_params.end(), head_params.begin(), head_params.end());

  const double step = 1e-5;
  const GradCheckResult rf = grad_check_params(fm, all_net, 64, Rng(21), step);
  const GradCheckResult rb = grad_check_params(bit, interface_params, 64, Rng(22), step);
  const GradCheckResult ra = grad_check_params(full, concat({all_net, head_params, layer_params}), 64, Rng(23), step);
  const double worst = std::max({rf.max_rel_error, rb.max_rel_error, ra.max_rel_error});
  return {worst < 1e-4, "max rel err FM " + fmt("%.2e", rf.max_rel_error) + ", BiT " + fmt("%.2e", rb.max_rel_error) +
                            ", full " + fmt("%.2e", ra.max_rel_error) + " over 64 coords each"};
}

Verdict criterion2() {
  Desk d;
  const GatedResidualNet net = d.woken_net(7);
  const BackboneConfig& c = net.config();
  double worst = 0.0;
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto tokens = fpt::random_tokens(c.cond_length, c.vocab_total, 1000 + static_cast<std::uint64_t>(i));
    const Tensor x = fpt::random_tensor({static_cast<std::size_t>(c.t_frames), static_cast<std::size_t>(c.n_mel)},
                                        5000 + static_cast<std::uint64_t>(i));
    BlockTrace tr;
    net.forward_traced(net.build_conditioning(tokens, x, (i % 100) / 100.0), tr);
    double m = 0.0;
    for (std::size_t j = 0; j < tr.z(0).numel(); ++j) {
      double s = tr.z(0)[j];
      for (int k = 1; k <= tr.layers(); ++k) s += tr.f(k)[j];
      m = std::max(m, std::fabs(tr.z(tr.layers())[j] - s));
    }
    worst = std::max(worst, m);
    ok += m < 1e-9;
  }
  return {ok == 1000, std::to_string(ok) + "/1000 traced forwards, worst " + fmt("%.2e", worst)};
}

Verdict criterion3() {
  Desk d;
  const GatedResidualNet net = d.woken_net(8);
  int identical = 0;
  for (const Sample& s : d.corpus.probe) {
    const auto pack = net.build_conditioning(s.tokens, s.target, 0.37);
    identical += net.forward_gated(pack, all_gates(net.layers())) == net.forward(pack);
  }
  GatedResidualNet zeroed = d.woken_net(8);
  for (int k : {4, 9}) {
    auto& b = zeroed.block(k);
    for (Parameter* p : {&b.mod_w, &b.mod_b, &b.qkv_w, &b.qkv_b, &b.out_w, &b.out_b, &b.ffn1_w, &b.ffn1_b,
                         &b.ffn2_w, &b.ffn2_b})
      p->value = Tensor(p->value.shape());
  }
  ProbeOptions o;
  o.t_bins = default_t_bins(4);
  o.budget = 4;
  o.seed = 9;
  const ProbeSet ps = ProbeSet::make(d.corpus.probe, d.cfg.data.vocab, o);
  const ProfileSet zp = foga_profile(zeroed, ps, o);
  bool zero_layers = true, others_positive = true;
  for (std::size_t b = 0; b < 4; ++b) {
    zero_layers = zero_layers && zp.pooled.values.at(4, b) == 0.0 && zp.pooled.values.at(9, b) == 0.0;
    others_positive = others_positive && zp.pooled.values.at(2, b) > 0.0;
  }
  const GatedResidualNet fresh(d.cfg.backbone(), 10);
  const ProfileSet fp = foga_profile(fresh, ps, o);
  const bool init_zero = std::all_of(fp.pooled.values.data().begin(), fp.pooled.values.data().end(),
                                     [](double x) { return x == 0.0; });
  const std::size_t n = d.corpus.probe.size();
  return {identical == static_cast<int>(n) && zero_layers && others_positive && init_zero,
          "all-ones mask bit-identical " + std::to_string(identical) + "/" + std::to_string(n) +
              ", zeroed layers FoG-A==0 " + (zero_layers ? "yes" : "no") + ", init FoG-A all 0 " +
              (init_zero ? "yes" : "no")};
}

Verdict criterion4() {
  Desk d;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    BackboneConfig bc = d.cfg.backbone();
    bc.layers = 2;
    bc.kind = BlockKind::Linear;
    GatedResidualNet net(bc, 40 + trial);
    const std::size_t D = static_cast<std::size_t>(bc.width);
    net.block(1).lin.value = fpt::random_tensor({D, D}, 100 + trial, 0.3 / std::sqrt(static_cast<double>(D)));
    net.block(2).lin.value = fpt::random_tensor({D, D}, 200 + trial, 0.3 / std::sqrt(static_cast<double>(D)));
    net.head_bias().value = fpt::random_tensor(net.head_bias().value.shape(), 300 + trial, 0.1);
    ProbeOptions o;
    o.t_bins = default_t_bins(3);
    o.budget = 4;
    o.seed = 50 + trial;
    const ProbeSet ps = ProbeSet::make(d.corpus.probe, d.cfg.data.vocab, o);
    const ProfileSet prof = foga_profile(net, ps, o);
    const auto A = fpt::linear_maps(net);
    for (Domain dom : {Domain::Speech, Domain::Audio}) {
      const AttributionProfile& p = dom == Domain::Speech ? prof.speech : prof.audio;
      for (std::size_t b = 0; b < o.t_bins.size(); ++b)
        for (int k = 1; k <= 2; ++k) {
          double mean = 0.0;
          const auto& samples = ps.samples(dom);
          for (std::size_t i = 0; i < samples.size(); ++i) {
            const double t = o.t_bins[b];
            const auto pack = net.build_conditioning(samples[i]->tokens, ot_path(samples[i]->target, ps.noise(dom)[i], t), t);
            BlockTrace tr;
            net.forward_traced(pack, tr);
            mean += fpt::linear_foga(tr.z(0), A, net.head_weight().value, net.head_bias().value, k, o.foga_eps);
          }
          mean /= static_cast<double>(samples.size());
          worst = std::max(worst, std::fabs(mean - p.values.at(static_cast<std::size_t>(k), b)));
        }
    }
  }
  return {worst < 1e-8, "max |profile - closed form| " + fmt("%.2e", worst) + " over 5 linear nets"};
}

Verdict criterion5() {
  Desk d;
  BackboneConfig bc = d.cfg.backbone();
  bc.kind = BlockKind::Linear;
  GatedResidualNet net(bc, 60);
  const std::size_t D = static_cast<std::size_t>(bc.width);
  for (int k = 1; k <= bc.layers; ++k)
    net.block(k).lin.value = fpt::random_tensor({D, D}, 600 + static_cast<std::uint64_t>(k), 0.5 / std::sqrt(static_cast<double>(D)));
  const Sample& s = d.corpus.probe.front();
  const auto pack = net.build_conditioning(s.tokens, s.target, 0.5);
  BlockTrace tr;
  net.forward_traced(pack, tr);
  const std::uint64_t seed = 77;
  double worst = 0.0;
  for (int k = 1; k <= bc.layers; ++k) {
    Tensor M({D, D});
    for (std::size_t i = 0; i < D; ++i) M.at(i, i) = 1.0;
    for (int j = k + 1; j <= bc.layers; ++j) {
      Tensor step = net.block(j).lin.value;
      for (std::size_t i = 0; i < D; ++i) step.at(i, i) += 1.0;
      M = fpt::plain_matmul(M, step);
    }
    const Tensor MH = fpt::plain_matmul(M, net.head_weight().value);
    double oracle = 0.0;
    for (int p = 0; p < 64; ++p) {
      Tensor u = Rng(seed).split("sensitivity").split(static_cast<std::uint64_t>(p)).normal_tensor(tr.z(k).shape(), 1.0);
      const double n = fpt::frob(u);
      for (double& x : u.data()) x /= n;
      oracle += fpt::frob(fpt::plain_matmul(u, MH));
    }
    oracle /= 64.0;
    const double got = net.jacobian_sensitivity(pack, k, 64, seed);
    worst = std::max(worst, std::fabs(got - oracle) / oracle);
  }

  const GatedResidualNet tnet = d.woken_net(61);
  const auto tpack = tnet.build_conditioning(s.tokens, s.target, 0.5);
  BlockTrace ttr;
  tnet.forward_traced(tpack, ttr);
  const GateMask g = all_gates(tnet.layers());
  Tensor u = fpt::random_tensor(ttr.z(1).shape(), 62);
  const double un = fpt::frob(u);
  for (double& x : u.data()) x /= un;
  auto moved = [&](double h) {
    Tensor z = ttr.z(1);
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] += h * u[i];
    return tnet.forward_from(tpack, z, 1, g);
  };
  const Tensor base = tnet.forward_from(tpack, ttr.z(1), 1, g);
  const double hr = 1e-6;
  Tensor ju = fpt::minus(moved(hr), moved(-hr));
  for (double& x : ju.data()) x /= 2 * hr;
  auto residual = [&](double h) {
    Tensor q = fpt::minus(moved(h), base);
    for (double& x : q.data()) x /= h;
    return fpt::frob(fpt::minus(q, ju));
  };
  const double ratio = residual(1e-2) / residual(5e-3);
  return {worst < 0.01 && ratio >= 1.8, "max rel deviation from product oracle " + fmt("%.2e", worst) +
                                            " (L=12, 64 probes), residual ratio on halving h " + fmt("%.3f", ratio)};
}

Verdict criterion6() {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const Tensor x0 = fpt::random_tensor({32, 16}, 700 + trial), eps = fpt::random_tensor({32, 16}, 800 + trial);
    for (int n : {1, 4, 16}) {
      const Tensor out = euler_sample([&](const Tensor& x, double t) { return analytic_velocity(x, t, x0); }, eps, n);
      for (std::size_t i = 0; i < out.numel(); ++i) worst = std::max(worst, std::fabs(out[i] - x0[i]));
    }
  }
  return {worst < 1e-9, "max terminal error " + fmt("%.2e", worst) + " for n_steps in {1,4,16}, 20 draws"};
}

Verdict criterion7() {
  Rng rng(900);
  int invariant = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s;
    for (int i = 0; i < 13; ++i) s.push_back(rng.uniform());
    const double c = std::exp(8.0 * (rng.uniform() - 0.5));
    std::vector<double> t = s;
    for (double& x : t) x *= c;
    const auto S = select_topk(s, 3);
    invariant += S == select_topk(t, 3);
    const auto l = attribution_weights(s, S);
    double sum = 0.0;
    for (double x : l) sum += x;
    worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
  }
  const auto l = attribution_weights(std::vector<double>{0.167, 0.0695, 0.0588}, std::vector<int>{0, 1, 2});
  const bool table = std::fabs(l[0] - 0.566) < 1e-3 && std::fabs(l[1] - 0.235) < 1e-3 && std::fabs(l[2] - 0.199) < 1e-3;
  return {invariant == 1000 && worst_sum < 1e-12 && table,
          "argtop invariant " + std::to_string(invariant) + "/1000, max |sum-1| " + fmt("%.1e", worst_sum) +
              ", lambda = {" + fmt("%.4f", l[0]) + ", " + fmt("%.4f", l[1]) + ", " + fmt("%.4f", l[2]) + "}"};
}

// Desk architecture on a short corpus; used where a full run is not needed.
ProtocolConfig short_config(std::uint64_t seed) {
  ProtocolConfig c;
  c.seed = seed;
  c.n_per_domain = 40;
  c.t_bins = 4;
  c.probe_budget = 4;
  c.euler_steps = 4;
  c.evals_per_epoch = 1;
  c.eval_draws = 1;
  c.strategies = {"foga"};
  return c;
}

Verdict criterion8() {
  ProtocolConfig cfg = short_config(5);
  const ProtocolContext ctx = ProtocolContext::make(cfg);
  ProtocolSession session;
  const PhaseOneResult p1 = run_phase_one(ctx, session, nullptr);
  session.begin_intervention();
  const FfdEvaluator eval(ctx);
  const BranchResult base = run_branch(ctx, p1, p1.plans[0], eval, nullptr);
  const BranchResult foga = run_branch(ctx, p1, p1.plans[1], eval, nullptr);
  bool reprobe_refused = false;
  try {
    session.probe(ctx, p1.net, p1.heads);
  } catch (const ProtocolViolation&) {
    reprobe_refused = true;
  }
  const bool immutable = foga.plan_digest_start == foga.plan_digest_end && foga.head_checksum_start == foga.head_checksum_end &&
                         foga.teacher_checksum_start == foga.teacher_checksum_end &&
                         base.head_checksum_start == base.head_checksum_end &&
                         base.teacher_checksum_start == base.teacher_checksum_end;
  const bool same_start = base.start_checksum == p1.net_checksum && foga.start_checksum == p1.net_checksum;

  ProtocolConfig zero_cfg = cfg;
  zero_cfg.lambda_align = 0.0;
  const ProtocolContext zctx = ProtocolContext::make(zero_cfg);
  ProtocolSession zs;
  const PhaseOneResult z1 = run_phase_one(zctx, zs, nullptr);
  zs.begin_intervention();
  const FfdEvaluator zeval(zctx);
  const BranchResult zb = run_branch(zctx, z1, z1.plans[0], zeval, nullptr);
  const BranchResult za = run_branch(zctx, z1, z1.plans[1], zeval, nullptr);
  bool same_traj = zb.end_checksum == za.end_checksum && zb.steps.size() == za.steps.size();
  for (std::size_t i = 0; same_traj && i < zb.steps.size(); ++i)
    same_traj = zb.steps[i].total == za.steps[i].total && zb.steps[i].fm == za.steps[i].fm &&
                zb.steps[i].bit == za.steps[i].bit && zb.steps[i].batch_ids == za.steps[i].batch_ids;
  for (std::size_t i = 0; same_traj && i < zb.ffd.size(); ++i)
    same_traj = zb.ffd[i].speech == za.ffd[i].speech && zb.ffd[i].audio == za.ffd[i].audio;
  return {immutable && same_start && same_traj && reprobe_refused,
          std::string("checksums immutable ") + (immutable ? "yes" : "no") + ", shared start " +
              (same_start ? "yes" : "no") + ", lambda_align=0 bit-identical over " + std::to_string(zb.steps.size()) +
              " steps " + (same_traj ? "yes" : "no") + ", re-probe refused " + (reprobe_refused ? "yes" : "no")};
}

int block_argmax(const AttributionProfile& p) {
  const auto pooled = p.pooled();
  return 1 + static_cast<int>(std::max_element(pooled.begin() + 1, pooled.end()) - (pooled.begin() + 1));
}

Verdict criterion9() {
  int differ = 0, faster = 0;
  double final_foga = 0.0, final_random = 0.0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    ProtocolConfig cfg;
    cfg.seed = seed;
    cfg.strategies = {"foga", "random", "lasp"};
    const ProtocolRun run = run_protocol(cfg, g_work / ("c9-seed" + std::to_string(seed)), nullptr);
    const int af = block_argmax(run.phase_one.probes.foga.pooled), al = block_argmax(run.phase_one.probes.lasp.pooled);
    differ += af != al;
    auto steps = [&](const std::string& name) { return branch_steps_to_threshold(run.branch(name), run.threshold); };
    const auto sf = steps("foga"), sr = steps("random"), sl = steps("lasp");
    auto le = [](std::optional<long> a, std::optional<long> b) { return a && (!b || *a <= *b); };
    const bool ok = le(sf, sr) && le(sf, sl);
    faster += ok;
    final_foga += run.branch("foga").ffd.back().combined() / 3.0;
    final_random += run.branch("random").ffd.back().combined() / 3.0;
    auto show = [](std::optional<long> v) { return v ? std::to_string(*v) : std::string("never"); };
    per_seed << " [seed " << seed << ": argmax FoG-A L" << af << " LASP L" << al << "; steps foga " << show(sf)
             << " random " << show(sr) << " lasp " << show(sl) << "; final FFD foga "
             << fmt("%.3f", run.branch("foga").ffd.back().combined()) << " random "
             << fmt("%.3f", run.branch("random").ffd.back().combined()) << "]";
  }
  const bool pass = differ >= 2 && faster >= 2 && final_foga <= final_random;
  return {pass, "(a) argmax differs in " + std::to_string(differ) + "/3, (b) FoG-A fastest in " +
                    std::to_string(faster) + "/3, mean final FFD foga " + fmt("%.3f", final_foga) + " vs random " +
                    fmt("%.3f", final_random) + ";" + per_seed.str()};
}

Verdict criterion10() {
  std::vector<Tensor> pts, other;
  for (std::uint64_t i = 0; i < 60; ++i) {
    pts.push_back(fpt::random_tensor({12}, 1000 + i));
    other.push_back(fpt::random_tensor({12}, 2000 + i, 1.3));
  }
  const FeatureStats a = feature_stats(pts), b = feature_stats(other);
  const double self = frechet_distance(a, a);

  FeatureStats p, q;
  p.mean = Tensor({12});
  q.mean = fpt::random_tensor({12}, 3);
  p.covariance = q.covariance = Tensor({12, 12});
  for (std::size_t i = 0; i < 12; ++i) p.covariance.at(i, i) = q.covariance.at(i, i) = 1.0;
  double d2 = 0.0;
  for (double x : q.mean.data()) d2 += x * x;
  const double shift_err = std::fabs(frechet_distance(p, q) - d2);

  Rng rng(4);
  double diag_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    FeatureStats x, y;
    x.mean = fpt::random_tensor({12}, 10 + static_cast<std::uint64_t>(trial));
    y.mean = fpt::random_tensor({12}, 500 + static_cast<std::uint64_t>(trial));
    x.covariance = Tensor({12, 12});
    y.covariance = Tensor({12, 12});
    double want = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      const double u = 0.05 + 4 * rng.uniform(), v = 0.05 + 4 * rng.uniform();
      x.covariance.at(i, i) = u;
      y.covariance.at(i, i) = v;
      want += (x.mean[i] - y.mean[i]) * (x.mean[i] - y.mean[i]) + (std::sqrt(u) - std::sqrt(v)) * (std::sqrt(u) - std::sqrt(v));
    }
    diag_err = std::max(diag_err, std::fabs(frechet_distance(x, y) - want));
  }
  const double asym = std::fabs(frechet_distance(a, b) - frechet_distance(b, a));
  return {self < 1e-9 && shift_err < 1e-9 && diag_err < 1e-8,
          "self " + fmt("%.1e", self) + ", mean-shift err " + fmt("%.1e", shift_err) + ", diagonal err " +
              fmt("%.1e", diag_err) + ", asymmetry " + fmt("%.1e", asym)};
}

std::size_t count_cells(const std::string& svg) {
  std::size_t n = 0;
  for (std::size_t p = svg.find("<rect class=\"cell\""); p != std::string::npos; p = svg.find("<rect class=\"cell\"", p + 1)) ++n;
  return n;
}

Verdict criterion11() {
  if (g_cli.empty()) return {false, "no --cli binary given"};
  const fs::path dir = g_work / "c11";
  fs::create_directories(dir);
  ProtocolConfig cfg = short_config(7);
  cfg.strategies = {"foga", "random"};
  kv::write_file(dir / "run.cfg", config_pairs(cfg));
  for (const char* name : {"a", "b"}) {
    const std::string cmd = "\"" + g_cli + "\" run-protocol --config \"" + (dir / "run.cfg").string() + "\" --out \"" +
                            (dir / name).string() + "\" > \"" + (dir / (std::string(name) + ".log")).string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, std::string("run-protocol failed for run ") + name};
  }
  auto manifest = [&](const char* name) {
    std::string text = slurp(dir / name / "manifest.json");
    const std::string root = (dir / name).string();
    for (std::size_t p = text.find(root); p != std::string::npos; p = text.find(root, p)) text.replace(p, root.size(), "<run>");
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
    j.erase("created_at");
    return j.dump();
  };
  const bool same_manifest = manifest("a") == manifest("b");

  std::ifstream csv(dir / "a" / "probes" / "profiles.csv");
  const auto profiles = read_profile_csv(csv);
  std::vector<const AttributionProfile*> ptrs;
  for (const auto& p : profiles) ptrs.push_back(&p);
  std::stringstream again;
  write_profile_csv(again, ptrs);
  const bool csv_round_trip = again.str() == slurp(dir / "a" / "probes" / "profiles.csv");

  bool cells = !profiles.empty();
  std::size_t svgs = 0;
  for (const auto& p : profiles) {
    const fs::path svg = dir / "a" / "probes" / (std::string(metric_name(p.metric)) + "_" + profile_domain_name(p.domain) + ".svg");
    const std::size_t want = static_cast<std::size_t>(p.layers() + 1) * static_cast<std::size_t>(p.bins());
    cells = cells && fs::exists(svg) && count_cells(slurp(svg)) == want;
    ++svgs;
    std::ifstream heat(dir / "a" / "probes" / (std::string(metric_name(p.metric)) + "_" + profile_domain_name(p.domain) + ".csv"));
    const auto back = read_profile_csv(heat);
    cells = cells && back.size() == 1 && max_abs_diff(back[0].values, p.values) < 1e-12;
  }
  return {same_manifest && csv_round_trip && cells,
          std::string("manifests identical modulo created_at ") + (same_manifest ? "yes" : "no") + ", CSV round trip " +
              (csv_round_trip ? "yes" : "no") + ", " + std::to_string(svgs) + " heatmaps with (L+1)x bins cells " +
              (cells ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowprobe acceptance checks"};
  std::vector<int> only;
  std::string work;
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 11));
  app.add_option("--cli", g_cli, "path of the flowprobe binary");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  g_work = work.empty() ? fs::temp_directory_path() / ("flowprobe-acceptance-" + std::to_string(::getpid())) : fs::path(work);
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::function<Verdict()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8,
                                                       criterion9, criterion10, criterion11};
  std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (int i = 1; i <= 11; ++i) {
    if (!selected.empty() && !selected.count(i)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << i << ": " << (v.pass ? "PASS" : "FAIL") << " (" << fmt("%.1f", secs) << " s) "
              << v.detail << std::endl;
    failed += !v.pass;
  }
  if (work.empty()) fs::remove_all(g_work);
  return failed == 0 ? 0 : 1;
}
