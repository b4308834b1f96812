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
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowprobe/agrepa.hpp"
#include "flowprobe/evalreport.hpp"
#include "flowprobe/kvtext.hpp"
#include "flowprobe/optim.hpp"

namespace flowprobe {

struct ProtocolConfig {
  std::uint64_t seed = 1;
  TopologyConfig data;
  int n_per_domain = 200;
  std::filesystem::path corpus;  // optional pre-generated corpus; empty = generate in memory

  int layers = 12;
  int width = 48;
  int heads = 2;
  int ffn_mult = 4;
  int cond_embed = 32;
  TeacherConfig teacher;

  int batch_size = 8;  // half speech, half audio
  AdamConfig adam;
  int warmup_epochs = 1;
  int intervention_epochs = 2;

  int k = 3;
  double lambda_bit = 0.1;
  double lambda_align = 0.5;
  bool force_include_interface = false;

  int t_bins = 10;
  int probe_budget = 64;
  double foga_eps = 1e-8;
  double noise_sigma = 1.0;

  int euler_steps = 16;
  int evals_per_epoch = 2;
  int eval_draws = 2;  // noise draws per eval item
  std::vector<std::string> strategies = {"foga", "random", "lasp"};
  bool parallel = true;

  BackboneConfig backbone() const;
  kernels::Policy policy() const { return parallel ? kernels::Policy::Parallel : kernels::Policy::Serial; }
  void validate() const;
};

/// Flat key = value form. Unknown keys are rejected on parse.
kv::Pairs config_pairs(const ProtocolConfig& c);
ProtocolConfig parse_protocol_config(const kv::Pairs& pairs, ProtocolConfig base = {});
/// Digest of every resolved key except input/output paths.
std::uint64_t config_digest(const ProtocolConfig& c);

/// Independent streams derived from the master seed.
struct SeedSet {
  std::uint64_t master = 0, gt = 0, teacher = 0, data = 0, init = 0, head = 0, order = 0,
                probe = 0, eval = 0;
  static SeedSet derive(std::uint64_t master);
};

/// Frozen inputs shared by every phase and branch.
struct ProtocolContext {
  ProtocolConfig config;
  SeedSet seeds;
  GroundTruthProcess gt;
  TeacherBundle teachers;
  Corpus corpus;
  std::uint64_t digest = 0;

  static ProtocolContext make(const ProtocolConfig& config);
};

struct StepLog {
  long step = 0;  // 1-based within the phase
  double total = 0.0, fm = 0.0, bit = 0.0;
  std::optional<double> align;  // absent for branches without alignment
  double grad_norm = 0.0;
  std::vector<std::uint64_t> batch_ids;
};

/// Line-oriented log record: step=.. loss_fm=.. loss_bit=.. [loss_align=..]
std::string format_step(const StepLog& s);

/// Fixed data order: each batch holds batch_size/2 items per domain, epochs
/// are permutations from the order stream, noise is drawn per global step.
class DataOrder {
 public:
  DataOrder(const Corpus& corpus, int batch_size, std::uint64_t order_seed, double sigma);
  int steps_per_epoch() const { return steps_per_epoch_; }
  /// Batch for global step `step` (0-based, counted across both phases).
  FlowBatch batch(long step) const;

 private:
  const Corpus* corpus_;
  int half_;
  int steps_per_epoch_;
  std::uint64_t seed_;
  double sigma_;
  std::vector<const Sample*> speech_, audio_;
};

struct FfdPoint {
  long step = 0;
  double speech = 0.0, audio = 0.0;
  double combined() const { return 0.5 * (speech + audio); }
};

/// Generates eval-split samples with the Euler sampler and measures FFD per domain.
class FfdEvaluator {
 public:
  explicit FfdEvaluator(const ProtocolContext& ctx);
  FfdPoint operator()(const GatedResidualNet& net, long step) const;

 private:
  const ProtocolContext* ctx_;
  FeatureStats real_speech_, real_audio_;
  std::vector<Tensor> eps_speech_, eps_audio_;
  std::vector<const Sample*> speech_, audio_;
};

struct ProbeResults {
  ProfileSet bitc, lasp, foga, gradnorm;
  std::vector<const AttributionProfile*> all() const;
  PlanProfiles pooled() const { return {&foga.pooled, &lasp.pooled, &gradnorm.pooled}; }
};

/// Tracks the protocol phase. Probing is only allowed before the
/// intervention starts; afterwards it throws ProtocolViolation.
class ProtocolSession {
 public:
  enum class Phase { Warmup, Intervention };
  Phase phase() const { return phase_; }
  void begin_intervention() { phase_ = Phase::Intervention; }
  ProbeResults probe(const ProtocolContext& ctx, const GatedResidualNet& net,
                     const InterfaceHeads& heads) const;

 private:
  Phase phase_ = Phase::Warmup;
};

struct PhaseOneResult {
  GatedResidualNet net;
  InterfaceHeads heads;
  ProbeResults probes;
  std::vector<SelectionPlan> plans;  // frozen, one per strategy
  std::vector<StepLog> steps;
  std::uint64_t net_checksum = 0;
  std::uint64_t speech_head_checksum = 0, audio_head_checksum = 0;
  long global_steps = 0;
};

/// Warm-up with L_FM + lambda_bit L_BiT, freeze heads, probe, freeze plans.
PhaseOneResult run_phase_one(const ProtocolContext& ctx, ProtocolSession& session, std::ostream* log);

struct BranchResult {
  std::string name;
  SelectionPlan plan;
  std::vector<StepLog> steps;
  std::vector<FfdPoint> ffd;
  std::uint64_t start_checksum = 0, end_checksum = 0;
  std::uint64_t plan_digest_start = 0, plan_digest_end = 0;
  std::uint64_t head_checksum_start = 0, head_checksum_end = 0;  // interface heads, combined
  std::uint64_t teacher_checksum_start = 0, teacher_checksum_end = 0;
  std::map<int, std::uint64_t> layer_head_checksums;  // at branch end
};

/// One Phase-II branch from the Phase-I checkpoint. Empty plans train the
/// baseline objective and log no alignment loss. The final network is saved
/// to `checkpoint` when it is not empty.
BranchResult run_branch(const ProtocolContext& ctx, const PhaseOneResult& phase_one,
                        const SelectionPlan& plan, const FfdEvaluator& evaluator, std::ostream* log,
                        const std::filesystem::path& checkpoint = {});

struct ProtocolRun {
  PhaseOneResult phase_one;
  std::vector<BranchResult> branches;  // baseline first
  std::string manifest;                // JSON text as written
  double threshold = 0.0;              // baseline combined FFD after the first intervention epoch
  const BranchResult& branch(const std::string& name) const;
};

/// Full probe-then-intervene run. Writes manifest.json, checkpoints, heads and
/// probe artifacts into `run_dir`, which must not already hold a manifest.
ProtocolRun run_protocol(const ProtocolConfig& config, const std::filesystem::path& run_dir,
                         std::ostream* log);

/// Step of the first FFD point after step 0 at or below `threshold`.
std::optional<long> branch_steps_to_threshold(const BranchResult& b, double threshold);

void save_interface_heads(const InterfaceHeads& heads, const std::filesystem::path& path);
void load_interface_heads(InterfaceHeads& heads, const std::filesystem::path& path);

}  // namespace flowprobe
