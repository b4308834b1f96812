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
#include <span>
#include <string>
#include <vector>

#include "flowprobe/backbone.hpp"
#include "flowprobe/flow.hpp"
#include "flowprobe/kernels.hpp"
#include "flowprobe/teachers.hpp"

namespace flowprobe {

enum class Metric { BiTC, LASP, FoGA, GradNorm };
const char* metric_name(Metric m);
Metric parse_metric(const std::string& s);

enum class ProfileDomain { Speech, Audio, Pooled };
const char* profile_domain_name(ProfileDomain d);
ProfileDomain parse_profile_domain(const std::string& s);

/// Layer (0..L) x time-bin grid of one diagnostic. Layer 0 is the
/// conditioning projection output; blocks are 1..L.
struct AttributionProfile {
  Metric metric = Metric::FoGA;
  ProfileDomain domain = ProfileDomain::Pooled;
  std::vector<double> t_bins;
  Tensor values;  // (L + 1) x bins
  int n = 0;      // items per cell
  std::uint64_t config_digest = 0;

  int layers() const { return static_cast<int>(values.rows()) - 1; }
  int bins() const { return static_cast<int>(t_bins.size()); }
  /// Uniform mean over time bins, one entry per layer 0..L.
  std::vector<double> pooled() const;
  bool operator==(const AttributionProfile&) const = default;
};

/// Bin centers (i + 0.5) / n.
std::vector<double> default_t_bins(int n = 10);

struct ProbeOptions {
  std::vector<double> t_bins = default_t_bins();
  int budget = 64;  // samples per domain per time bin
  std::uint64_t seed = 0;
  double foga_eps = 1e-8;
  double noise_sigma = 1.0;
  std::uint64_t config_digest = 0;
  kernels::Policy policy = kernels::Policy::Parallel;
};

/// Per-domain probe items: teacher-forced x_t built from the probe split.
struct ProbeSet {
  int vocab = 0;  // primary vocabulary size, offsets dense-prior ids
  std::vector<const Sample*> speech, audio;
  std::vector<Tensor> speech_eps, audio_eps;  // one noise draw per sample, shared by all bins

  static ProbeSet make(std::span<const Sample> probe_split, int vocab,
                       const ProbeOptions& options);
  const std::vector<const Sample*>& samples(Domain d) const {
    return d == Domain::Speech ? speech : audio;
  }
  const std::vector<Tensor>& noise(Domain d) const { return d == Domain::Speech ? speech_eps : audio_eps; }
};

/// Speech, audio and pooled profiles of one metric.
struct ProfileSet {
  AttributionProfile speech, audio, pooled;
  const AttributionProfile& for_domain(ProfileDomain d) const;
};

/// Mean over speech items of (1 - BiT-C_0) plus the same over audio items.
struct InterfaceLoss {
  double value = 0.0;
  bool missing_speech = false;
  bool missing_audio = false;
};
InterfaceLoss bitc_interface_loss(const GatedResidualNet& net, const TeacherBundle& teachers,
                                  const InterfaceHeads& heads, const FlowBatch& batch);

/// cos(P_d(descriptor(z_0)), T_d(x0)) on a tape.
Var interface_cosine(Tape& tape, Var z0, ProjectionHead& head, const Tensor& t_emb);

ProfileSet bitc_profile(const GatedResidualNet& net, const TeacherBundle& teachers,
                        const InterfaceHeads& heads, const ProbeSet& probes,
                        const ProbeOptions& options);
/// Throws FrozenHeadError unless both heads are frozen with unchanged checksums.
ProfileSet lasp_profile(const GatedResidualNet& net, const TeacherBundle& teachers,
                        const InterfaceHeads& heads, const ProbeSet& probes,
                        const ProbeOptions& options);
ProfileSet foga_profile(const GatedResidualNet& net, const ProbeSet& probes,
                        const ProbeOptions& options);
ProfileSet gradnorm_profile(const GatedResidualNet& net, const ProbeSet& probes,
                            const ProbeOptions& options);

/// FoG-A_k for one conditioning pack, k = 1..L (entry 0 is always 0).
std::vector<double> foga_scores(const GatedResidualNet& net, const ConditioningPack& pack,
                                double eps = 1e-8);
/// ||dL_FM/df_k|| for one item, k = 1..L (entry 0 is always 0).
std::vector<double> gradnorm_scores(const GatedResidualNet& net, const FlowItem& item);

struct RankedLayer {
  int layer = 0;
  double value = 0.0;
};
/// Descending by value, ties to the lower layer; scores[i] belongs to layer first_layer + i.
std::vector<RankedLayer> rank_layers(std::span<const double> scores, int first_layer, std::size_t top);
std::string format_ranked(std::span<const RankedLayer> ranked);  // "L1(0.167), L9(0.0695)"

struct Top3Row {
  Metric metric;
  ProfileDomain domain;
  std::vector<RankedLayer> top;
  std::string text;
};
/// Top-3 blocks (1..L) per profile by pooled value. Throws ConfigError on mixed digests.
std::vector<Top3Row> top3_table(std::span<const AttributionProfile* const> profiles);

}  // namespace flowprobe
