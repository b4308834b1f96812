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

#include "flowprobe/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "flowprobe/error.hpp"

namespace flowprobe {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::BiTC: return "bitc";
    case Metric::LASP: return "lasp";
    case Metric::FoGA: return "foga";
    case Metric::GradNorm: return "gradnorm";
  }
  return "?";
}

Metric parse_metric(const std::string& s) {
  for (Metric m : {Metric::BiTC, Metric::LASP, Metric::FoGA, Metric::GradNorm})
    if (s == metric_name(m)) return m;
  throw ConfigError("unknown metric '" + s + "'");
}

const char* profile_domain_name(ProfileDomain d) {
  switch (d) {
    case ProfileDomain::Speech: return "speech";
    case ProfileDomain::Audio: return "audio";
    case ProfileDomain::Pooled: return "pooled";
  }
  return "?";
}

ProfileDomain parse_profile_domain(const std::string& s) {
  for (ProfileDomain d : {ProfileDomain::Speech, ProfileDomain::Audio, ProfileDomain::Pooled})
    if (s == profile_domain_name(d)) return d;
  throw ConfigError("unknown profile domain '" + s + "'");
}

std::vector<double> AttributionProfile::pooled() const {
  std::vector<double> out(values.rows(), 0.0);
  const std::size_t nb = values.cols();
  for (std::size_t l = 0; l < out.size(); ++l) {
    double acc = 0.0;
    for (std::size_t b = 0; b < nb; ++b) acc += values.at(l, b);
    out[l] = acc / static_cast<double>(nb);
  }
  return out;
}

std::vector<double> default_t_bins(int n) {
  if (n < 1) throw ConfigError("need at least one time bin");
  std::vector<double> bins;
  for (int i = 0; i < n; ++i) bins.push_back((i + 0.5) / n);
  return bins;
}

ProbeSet ProbeSet::make(std::span<const Sample> probe_split, int vocab, const ProbeOptions& options) {
  if (options.budget < 1) throw ConfigError("probe budget must be >= 1");
  ProbeSet set;
  set.vocab = vocab;
  const Rng noise = Rng(options.seed).split("probe-noise");
  for (const Sample& s : probe_split) {
    auto& dst = s.domain == Domain::Speech ? set.speech : set.audio;
    auto& eps = s.domain == Domain::Speech ? set.speech_eps : set.audio_eps;
    if (static_cast<int>(dst.size()) >= options.budget) continue;
    dst.push_back(&s);
    Rng r = noise.split(s.id);
    eps.push_back(r.normal_tensor(s.target.shape(), options.noise_sigma));
  }
  return set;
}

const AttributionProfile& ProfileSet::for_domain(ProfileDomain d) const {
  switch (d) {
    case ProfileDomain::Speech: return speech;
    case ProfileDomain::Audio: return audio;
    case ProfileDomain::Pooled: break;
  }
  return pooled;
}

namespace {

using CellFn = std::function<std::vector<double>(const Sample&, const Tensor& eps, double t)>;

// Evaluates `cell` for every (item, bin) of one domain, then averages items
// in probe-set order.
AttributionProfile domain_grid(Metric metric, Domain domain, int layers, const ProbeSet& probes,
                               const ProbeOptions& options, const CellFn& cell) {
  const auto& samples = probes.samples(domain);
  const auto& noise = probes.noise(domain);
  const std::size_t n = samples.size(), nb = options.t_bins.size(), L1 = static_cast<std::size_t>(layers) + 1;
  AttributionProfile p;
  p.metric = metric;
  p.domain = domain == Domain::Speech ? ProfileDomain::Speech : ProfileDomain::Audio;
  p.t_bins = options.t_bins;
  p.values = Tensor({L1, nb});
  p.n = static_cast<int>(n);
  p.config_digest = options.config_digest;
  if (n == 0) return p;

  std::vector<std::vector<double>> slots(n * nb);
  kernels::for_each_index(n * nb, options.policy, [&](std::size_t idx) {
    const std::size_t i = idx / nb, b = idx % nb;
    slots[idx] = cell(*samples[i], noise[i], options.t_bins[b]);
  });
  for (std::size_t l = 0; l < L1; ++l)
    for (std::size_t b = 0; b < nb; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += slots[i * nb + b][l];
      p.values.at(l, b) = acc / static_cast<double>(n);
    }
  return p;
}

ProfileSet make_set(Metric metric, int layers, const ProbeSet& probes, const ProbeOptions& options,
                    const std::function<CellFn(Domain)>& cell_for) {
  if (probes.speech.empty() && probes.audio.empty()) throw ConfigError("probe set is empty");
  ProfileSet set;
  set.speech = domain_grid(metric, Domain::Speech, layers, probes, options, cell_for(Domain::Speech));
  set.audio = domain_grid(metric, Domain::Audio, layers, probes, options, cell_for(Domain::Audio));
  set.pooled = set.speech;
  set.pooled.domain = ProfileDomain::Pooled;
  set.pooled.n = set.speech.n + set.audio.n;
  // Domains present are averaged with equal weight.
  const double ws = set.speech.n > 0 ? 1.0 : 0.0, wa = set.audio.n > 0 ? 1.0 : 0.0;
  for (std::size_t i = 0; i < set.pooled.values.numel(); ++i) {
    set.pooled.values[i] = (ws * set.speech.values[i] + wa * set.audio.values[i]) / (ws + wa);
  }
  return set;
}

ProfileSet representation_profile(Metric metric, const GatedResidualNet& net,
                                   const TeacherBundle& teachers, const InterfaceHeads& heads,
                                   const ProbeSet& probes, const ProbeOptions& options) {
  const int vocab = probes.vocab;
  return make_set(metric, net.layers(), probes, options, [&](Domain d) -> CellFn {
    const ProjectionHead* head = &heads.for_domain(d);
    const TeacherEncoder* teacher = &teachers.for_domain(d);
    return [&net, head, teacher, vocab](const Sample& s, const Tensor& eps, double t) {
      const Tensor t_emb = teacher->encode(s.target);
      const auto pack = net.build_conditioning(s.conditioning_tokens(vocab), ot_path(s.target, eps, t), t);
      BlockTrace trace;
      net.forward_traced(pack, trace);
      std::vector<double> out;
      for (int l = 0; l <= trace.layers(); ++l) out.push_back(bitc(*head, descriptor(trace.z(l)), t_emb));
      return out;
    };
  });
}

}  // namespace

Var interface_cosine(Tape& tape, Var z0, ProjectionHead& head, const Tensor& t_emb) {
  return ad::cosine(head.project(tape, descriptor(z0)), tape.constant(t_emb), 1e-8);
}

InterfaceLoss bitc_interface_loss(const GatedResidualNet& net, const TeacherBundle& teachers,
                                  const InterfaceHeads& heads, const FlowBatch& batch) {
  double sum[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (const FlowItem& item : batch.items) {
    const auto pack = net.build_conditioning(item.cond, item.xt, item.t);
    BlockTrace trace;
    net.forward_traced(pack, trace);
    const int d = item.domain == Domain::Speech ? 0 : 1;
    const double c = bitc(heads.for_domain(item.domain), descriptor(trace.z(0)),
                          teachers.for_domain(item.domain).encode(item.x0));
    sum[d] += 1.0 - c;
    ++count[d];
  }
  InterfaceLoss loss;
  loss.missing_speech = count[0] == 0;
  loss.missing_audio = count[1] == 0;
  for (int d = 0; d < 2; ++d)
    if (count[d] > 0) loss.value += sum[d] / count[d];
  return loss;
}

ProfileSet bitc_profile(const GatedResidualNet& net, const TeacherBundle& teachers,
                        const InterfaceHeads& heads, const ProbeSet& probes,
                        const ProbeOptions& options) {
  return representation_profile(Metric::BiTC, net, teachers, heads, probes, options);
}

ProfileSet lasp_profile(const GatedResidualNet& net, const TeacherBundle& teachers,
                        const InterfaceHeads& heads, const ProbeSet& probes,
                        const ProbeOptions& options) {
  for (const ProjectionHead* h : {&heads.speech, &heads.audio}) {
    if (!h->frozen()) {
      throw FrozenHeadError(std::string("LASP needs a frozen '") + domain_name(h->domain()) +
                            "' projection head");
    }
    if (h->checksum() != h->frozen_checksum()) {
      throw FrozenHeadError(std::string("projection head '") + domain_name(h->domain()) +
                            "' changed after it was frozen");
    }
  }
  return representation_profile(Metric::LASP, net, teachers, heads, probes, options);
}

std::vector<double> foga_scores(const GatedResidualNet& net, const ConditioningPack& pack, double eps) {
  BlockTrace trace;
  const Tensor v = net.forward_traced(pack, trace);
  double vnorm = 0.0;
  for (double x : v.data()) vnorm += x * x;
  vnorm = std::sqrt(vnorm);
  const int L = net.layers();
  std::vector<double> out(static_cast<std::size_t>(L) + 1, 0.0);
  for (int k = 1; k <= L; ++k) {
    // The prefix up to z_{k-1} is unaffected by gate k, so resume from the trace.
    const Tensor vk = net.forward_from(pack, trace.z(k - 1), k - 1, single_gate_off(L, k));
    double d = 0.0;
    for (std::size_t i = 0; i < v.numel(); ++i) d += (vk[i] - v[i]) * (vk[i] - v[i]);
    out[static_cast<std::size_t>(k)] = std::sqrt(d) / (vnorm + eps);
  }
  return out;
}

ProfileSet foga_profile(const GatedResidualNet& net, const ProbeSet& probes,
                        const ProbeOptions& options) {
  if (options.foga_eps <= 0.0) throw ConfigError("FoG-A eps must be positive");
  const int vocab = probes.vocab;
  return make_set(Metric::FoGA, net.layers(), probes, options, [&](Domain) -> CellFn {
    return [&net, &options, vocab](const Sample& s, const Tensor& eps, double t) {
      const auto pack = net.build_conditioning(s.conditioning_tokens(vocab), ot_path(s.target, eps, t), t);
      return foga_scores(net, pack, options.foga_eps);
    };
  });
}

std::vector<double> gradnorm_scores(const GatedResidualNet& net, const FlowItem& item) {
  // forward_tape needs mutable parameters; this tape only reads them.
  auto& mut = const_cast<GatedResidualNet&>(net);
  Tape tape;
  const int L = net.layers();
  TapeForward fw = mut.forward_tape(tape, item.cond, item.xt, item.t, all_gates(L));
  tape.backward(fm_item_loss(tape, fw.velocity, item));
  std::vector<double> out(static_cast<std::size_t>(L) + 1, 0.0);
  for (int k = 1; k <= L; ++k) {
    const Tensor g = tape.grad(fw.updates[static_cast<std::size_t>(k - 1)]);
    double acc = 0.0;
    for (double x : g.data()) acc += x * x;
    out[static_cast<std::size_t>(k)] = std::sqrt(acc);
  }
  return out;
}

ProfileSet gradnorm_profile(const GatedResidualNet& net, const ProbeSet& probes,
                            const ProbeOptions& options) {
  const int vocab = probes.vocab;
  return make_set(Metric::GradNorm, net.layers(), probes, options, [&](Domain) -> CellFn {
    return [&net, vocab](const Sample& s, const Tensor& eps, double t) {
      return gradnorm_scores(net, make_flow_item(s, vocab, eps, t));
    };
  });
}

std::vector<RankedLayer> rank_layers(std::span<const double> scores, int first_layer, std::size_t top) {
  std::vector<RankedLayer> all;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    all.push_back({first_layer + static_cast<int>(i), scores[i]});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const RankedLayer& a, const RankedLayer& b) { return a.value > b.value; });
  if (all.size() > top) all.resize(top);
  return all;
}

std::string format_ranked(std::span<const RankedLayer> ranked) {
  std::string out;
  for (const RankedLayer& r : ranked) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "L%d(%.3g)", r.layer, r.value);
    if (!out.empty()) out += ", ";
    out += buf;
  }
  return out;
}

std::vector<Top3Row> top3_table(std::span<const AttributionProfile* const> profiles) {
  std::vector<Top3Row> rows;
  if (profiles.empty()) return rows;
  const std::uint64_t digest = profiles.front()->config_digest;
  for (const AttributionProfile* p : profiles) {
    if (p->config_digest != digest) {
      throw ConfigError("top3_table: profiles come from different configurations");
    }
    const auto pooled = p->pooled();
    Top3Row row{p->metric, p->domain, {}, {}};
    row.top = rank_layers(std::span<const double>(pooled).subspan(1), 1, 3);
    row.text = format_ranked(row.top);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace flowprobe
