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
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "flowprobe/error.hpp"
#include "flowprobe/protocol.hpp"

namespace flowprobe {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

BackboneConfig ProtocolConfig::backbone() const {
  BackboneConfig b = BackboneConfig::for_data(data, layers, width);
  b.heads = heads;
  b.ffn_mult = ffn_mult;
  b.cond_embed = cond_embed;
  return b;
}

void ProtocolConfig::validate() const {
  data.validate();
  backbone().validate();
  split_sizes(n_per_domain);
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and >= 2");
  if (warmup_epochs < 1 || intervention_epochs < 1) throw ConfigError("both phases need at least one epoch");
  if (k < 1 || k > layers + 1) throw ConfigError("k must lie in 1..layers+1");
  if (lambda_bit < 0.0 || lambda_align < 0.0) throw ConfigError("loss multipliers must be >= 0");
  if (t_bins < 1 || probe_budget < 1) throw ConfigError("t_bins and probe_budget must be >= 1");
  if (euler_steps < 1 || evals_per_epoch < 1 || eval_draws < 1) {
    throw ConfigError("euler_steps, evals_per_epoch and eval_draws must be >= 1");
  }
  if (teacher.d_teacher < 1 || teacher.hidden < 1) throw ConfigError("teacher sizes must be >= 1");
  if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma must be > 0");
  for (const std::string& s : strategies) check_strategy(s, layers, k);
}

SeedSet SeedSet::derive(std::uint64_t master) {
  const Rng root(master);
  auto draw = [&](const char* label) { return root.split(label).next_u64(); };
  SeedSet s;
  s.master = master;
  s.gt = draw("ground-truth");
  s.teacher = draw("teacher");
  s.data = draw("data");
  s.init = draw("init");
  s.head = draw("heads");
  s.order = draw("order");
  s.probe = draw("probe");
  s.eval = draw("eval");
  return s;
}

namespace {

void check_corpus(const Corpus& c, const ProtocolConfig& cfg, const SeedSet& seeds) {
  auto mismatch = [](const std::string& what) {
    throw ConfigError("corpus does not match the configuration (" + what + ")");
  };
  if (c.seed != seeds.data || c.gt_seed != seeds.gt || c.teacher_seed != seeds.teacher) mismatch("seeds");
  if (c.n_per_domain != cfg.n_per_domain) mismatch("n_per_domain");
  const TopologyConfig& a = c.config;
  const TopologyConfig& b = cfg.data;
  if (a.topology != b.topology || a.vocab != b.vocab || a.codebook != b.codebook || a.t_tok != b.t_tok ||
      a.t_frames != b.t_frames || a.n_mel != b.n_mel) {
    mismatch("topology");
  }
}

}  // namespace

ProtocolContext ProtocolContext::make(const ProtocolConfig& config) {
  config.validate();
  const SeedSet seeds = SeedSet::derive(config.seed);
  GroundTruthProcess gt = make_ground_truth(seeds.gt, config.data);
  TeacherBundle teachers = TeacherBundle::make(seeds.teacher, gt, config.teacher);
  Corpus corpus;
  if (config.corpus.empty()) {
    corpus = make_corpus(gt, config.data.topology, config.n_per_domain, seeds.data, &teachers.audio);
  } else {
    corpus = load_corpus(config.corpus);
    check_corpus(corpus, config, seeds);
  }
  return ProtocolContext{config, seeds, std::move(gt), std::move(teachers), std::move(corpus),
                         config_digest(config)};
}

std::string format_step(const StepLog& s) {
  char buf[192];
  int n = std::snprintf(buf, sizeof(buf), "step=%ld loss_fm=%.6f loss_bit=%.6f", s.step, s.fm, s.bit);
  if (s.align) std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), " loss_align=%.6f", *s.align);
  return buf;
}

DataOrder::DataOrder(const Corpus& corpus, int batch_size, std::uint64_t order_seed, double sigma)
    : corpus_(&corpus), half_(batch_size / 2), seed_(order_seed), sigma_(sigma) {
  for (const Sample& s : corpus.train) (s.domain == Domain::Speech ? speech_ : audio_).push_back(&s);
  steps_per_epoch_ = static_cast<int>(std::min(speech_.size(), audio_.size())) / half_;
  if (steps_per_epoch_ < 1) throw ConfigError("train split is smaller than one batch");
}

FlowBatch DataOrder::batch(long step) const {
  const auto epoch = static_cast<std::uint64_t>(step / steps_per_epoch_);
  const auto pos = static_cast<std::size_t>(step % steps_per_epoch_);
  std::vector<const Sample*> picked;
  for (const auto* pool : {&speech_, &audio_}) {
    std::vector<std::size_t> perm(pool->size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = Rng(seed_).split(epoch).split(pool == &speech_ ? "speech" : "audio");
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (int j = 0; j < half_; ++j) picked.push_back((*pool)[perm[pos * static_cast<std::size_t>(half_) + j]]);
  }
  return make_flow_batch(picked, corpus_->config.vocab,
                         Rng(seed_).split("noise").split(static_cast<std::uint64_t>(step)), sigma_);
}

FfdEvaluator::FfdEvaluator(const ProtocolContext& ctx) : ctx_(&ctx) {
  const TopologyConfig& d = ctx.corpus.config;
  std::vector<Tensor> real_s, real_a;
  for (const Sample& s : ctx.corpus.eval) {
    const bool speech = s.domain == Domain::Speech;
    (speech ? speech_ : audio_).push_back(&s);
    (speech ? real_s : real_a).push_back(s.target);
    for (int r = 0; r < ctx.config.eval_draws; ++r) {
      Rng rng = Rng(ctx.seeds.eval).split(s.id).split(static_cast<std::uint64_t>(r));
      (speech ? eps_speech_ : eps_audio_)
          .push_back(rng.normal_tensor({static_cast<std::size_t>(d.t_frames), static_cast<std::size_t>(d.n_mel)},
                                       ctx.config.noise_sigma));
    }
  }
  if (speech_.empty() || audio_.empty()) throw ConfigError("eval split lacks a domain");
  real_speech_ = feature_stats(ctx.teachers.speech, real_s);
  real_audio_ = feature_stats(ctx.teachers.audio, real_a);
}

FfdPoint FfdEvaluator::operator()(const GatedResidualNet& net, long step) const {
  const ProtocolConfig& cfg = ctx_->config;
  const auto draws = static_cast<std::size_t>(cfg.eval_draws);
  auto measure = [&](const std::vector<const Sample*>& items, const std::vector<Tensor>& eps,
                     const TeacherEncoder& teacher, const FeatureStats& real) {
    std::vector<Tensor> emb(eps.size());
    kernels::for_each_index(eps.size(), cfg.policy(), [&](std::size_t i) {
      const Sample& s = *items[i / draws];
      const auto cond = s.conditioning_tokens(ctx_->corpus.config.vocab);
      emb[i] = teacher.encode(sample_net(net, cond, eps[i], cfg.euler_steps));
    });
    return frechet_distance(feature_stats(emb), real);
  };
  FfdPoint p;
  p.step = step;
  p.speech = measure(speech_, eps_speech_, ctx_->teachers.speech, real_speech_);
  p.audio = measure(audio_, eps_audio_, ctx_->teachers.audio, real_audio_);
  return p;
}

std::vector<const AttributionProfile*> ProbeResults::all() const {
  std::vector<const AttributionProfile*> out;
  for (const ProfileSet* s : {&bitc, &lasp, &foga, &gradnorm}) {
    out.push_back(&s->speech);
    out.push_back(&s->audio);
    out.push_back(&s->pooled);
  }
  return out;
}

ProbeResults ProtocolSession::probe(const ProtocolContext& ctx, const GatedResidualNet& net,
                                    const InterfaceHeads& heads) const {
  if (phase_ == Phase::Intervention) {
    throw ProtocolViolation("probing is disabled once the intervention phase has started");
  }
  ProbeOptions o;
  o.t_bins = default_t_bins(ctx.config.t_bins);
  o.budget = ctx.config.probe_budget;
  o.seed = ctx.seeds.probe;
  o.foga_eps = ctx.config.foga_eps;
  o.noise_sigma = ctx.config.noise_sigma;
  o.config_digest = ctx.digest;
  o.policy = ctx.config.policy();
  const ProbeSet set = ProbeSet::make(ctx.corpus.probe, ctx.corpus.config.vocab, o);
  ProbeResults r;
  r.bitc = bitc_profile(net, ctx.teachers, heads, set, o);
  r.lasp = lasp_profile(net, ctx.teachers, heads, set, o);
  r.foga = foga_profile(net, set, o);
  r.gradnorm = gradnorm_profile(net, set, o);
  return r;
}

namespace {

std::uint64_t pair_checksum(std::uint64_t a, std::uint64_t b) {
  return binio::fnv1a64(binio::hex64(a) + binio::hex64(b));
}

StepLog train_step(Adam& adam, BranchModel model, const TeacherBundle& teachers, const SelectionPlan& plan,
                   const FlowBatch& batch, long step, kernels::Policy policy) {
  adam.zero_grad();
  const LossBreakdown b = accumulate_batch_gradients(model, teachers, plan, batch, policy);
  StepLog log;
  log.step = step;
  log.total = b.total;
  log.fm = b.fm;
  log.bit = b.bit;
  if (!plan.empty()) log.align = b.align;
  log.grad_norm = adam.step();
  for (const FlowItem& item : batch.items) log.batch_ids.push_back(item.id);
  return log;
}

void emit(std::ostream* log, const std::string& prefix, const StepLog& s) {
  if (log != nullptr) *log << prefix << ' ' << format_step(s) << '\n' << std::flush;
}

}  // namespace

PhaseOneResult run_phase_one(const ProtocolContext& ctx, ProtocolSession& session, std::ostream* log) {
  const ProtocolConfig& cfg = ctx.config;
  PhaseOneResult r{GatedResidualNet(cfg.backbone(), ctx.seeds.init),
                   InterfaceHeads::make(cfg.width, cfg.teacher.d_teacher, Rng(ctx.seeds.head).split("interface")),
                   {}, {}, {}, 0, 0, 0, 0};
  std::vector<Parameter*> params = r.net.parameters();
  for (ProjectionHead* h : {&r.heads.speech, &r.heads.audio})
    for (Parameter* p : h->mutable_parameters()) params.push_back(p);
  Adam adam(params, cfg.adam);

  const SelectionPlan warmup("none", SelectionSource::None, {}, {}, cfg.lambda_bit, cfg.lambda_align);
  std::map<int, PerLayerHead> no_heads;
  const BranchModel model{&r.net, &r.heads, &no_heads};
  const DataOrder order(ctx.corpus, cfg.batch_size, ctx.seeds.order, cfg.noise_sigma);
  const long steps = static_cast<long>(cfg.warmup_epochs) * order.steps_per_epoch();
  for (long s = 0; s < steps; ++s) {
    r.steps.push_back(train_step(adam, model, ctx.teachers, warmup, order.batch(s), s + 1, cfg.policy()));
    emit(log, "phase=warmup", r.steps.back());
  }
  r.global_steps = steps;

  r.heads.freeze();
  r.speech_head_checksum = r.heads.speech.frozen_checksum();
  r.audio_head_checksum = r.heads.audio.frozen_checksum();
  r.net_checksum = r.net.checksum();

  r.probes = session.probe(ctx, r.net, r.heads);

  PlanOptions po;
  po.k = cfg.k;
  po.lambda_bit = cfg.lambda_bit;
  po.lambda_align = cfg.lambda_align;
  po.force_include_interface = cfg.force_include_interface;
  po.seed = ctx.seeds.head;
  std::set<std::string> seen{"none"};
  r.plans.push_back(warmup);
  for (const std::string& s : cfg.strategies) {
    if (!seen.insert(s).second) continue;
    r.plans.push_back(make_plan(s, r.probes.pooled(), cfg.layers, po));
  }
  for (SelectionPlan& p : r.plans) p.freeze();
  return r;
}

BranchResult run_branch(const ProtocolContext& ctx, const PhaseOneResult& phase_one, const SelectionPlan& plan,
                        const FfdEvaluator& evaluator, std::ostream* log, const fs::path& checkpoint) {
  const ProtocolConfig& cfg = ctx.config;
  if (!plan.frozen()) throw ProtocolViolation("plan '" + plan.strategy() + "' must be frozen before branching");
  if (!phase_one.heads.frozen()) throw ProtocolViolation("interface heads must be frozen before branching");

  BranchResult r;
  r.name = plan.strategy();
  r.plan = plan;
  GatedResidualNet net = phase_one.net;
  InterfaceHeads heads = phase_one.heads;
  r.start_checksum = net.checksum();
  if (r.start_checksum != phase_one.net_checksum) {
    throw ProtocolViolation("branch start differs from the Phase-I checkpoint");
  }
  r.plan_digest_start = plan.digest();
  r.head_checksum_start = pair_checksum(heads.speech.checksum(), heads.audio.checksum());
  r.teacher_checksum_start = ctx.teachers.checksum();

  std::map<int, PerLayerHead> layer_heads =
      make_layer_heads(plan.layers(), cfg.width, cfg.teacher.d_teacher, Rng(ctx.seeds.head).split("layer-heads"));
  std::vector<Parameter*> params = net.parameters();
  for (auto& [k, h] : layer_heads)
    for (Parameter* p : h.parameters()) params.push_back(p);
  Adam adam(params, cfg.adam);

  const BranchModel model{&net, &heads, &layer_heads};
  const DataOrder order(ctx.corpus, cfg.batch_size, ctx.seeds.order, cfg.noise_sigma);
  const long spe = order.steps_per_epoch();
  const long steps = static_cast<long>(cfg.intervention_epochs) * spe;
  std::set<long> eval_at{0};
  for (long e = 0; e < cfg.intervention_epochs; ++e)
    for (int j = 1; j <= cfg.evals_per_epoch; ++j) eval_at.insert(e * spe + (j * spe) / cfg.evals_per_epoch);

  const std::string prefix = "branch=" + r.name;
  r.ffd.push_back(evaluator(net, 0));
  for (long s = 0; s < steps; ++s) {
    const FlowBatch batch = order.batch(phase_one.global_steps + s);
    r.steps.push_back(train_step(adam, model, ctx.teachers, plan, batch, s + 1, cfg.policy()));
    emit(log, prefix, r.steps.back());
    if (eval_at.count(s + 1) != 0) {
      r.ffd.push_back(evaluator(net, s + 1));
      if (log != nullptr) {
        *log << prefix << " step=" << s + 1 << " ffd_speech=" << r.ffd.back().speech
             << " ffd_audio=" << r.ffd.back().audio << '\n' << std::flush;
      }
    }
  }
  r.end_checksum = net.checksum();
  r.plan_digest_end = plan.digest();
  r.head_checksum_end = pair_checksum(heads.speech.checksum(), heads.audio.checksum());
  r.teacher_checksum_end = ctx.teachers.checksum();
  for (const auto& [k, h] : layer_heads) r.layer_head_checksums[k] = h.checksum();
  if (!checkpoint.empty()) net.save(checkpoint);
  return r;
}

const BranchResult& ProtocolRun::branch(const std::string& name) const {
  for (const BranchResult& b : branches)
    if (b.name == name) return b;
  throw ConfigError("no branch named '" + name + "'");
}

std::optional<long> branch_steps_to_threshold(const BranchResult& b, double threshold) {
  Trajectory t;
  for (const FfdPoint& p : b.ffd)
    if (p.step > 0) t.emplace_back(p.step, p.combined());
  return steps_to_threshold(t, threshold);
}

void save_interface_heads(const InterfaceHeads& heads, const fs::path& path) {
  if (fs::exists(path)) throw IoError("refusing to overwrite " + path.string());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write("FPHD", 4);
  binio::put_u32(os, 1);
  for (const ProjectionHead* h : {&heads.speech, &heads.audio})
    for (const auto& [name, t] : h->tensors()) binio::write_named_tensor(os, name, *t);
  if (!os) throw IoError("failed writing " + path.string());
}

void load_interface_heads(InterfaceHeads& heads, const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "FPHD" || binio::get_u32(is) != 1) {
    throw IoError(path.string() + " is not a flowprobe head file");
  }
  for (ProjectionHead* h : {&heads.speech, &heads.audio}) {
    const auto expected = h->tensors();
    auto [wn, w] = binio::read_named_tensor(is);
    auto [bn, b] = binio::read_named_tensor(is);
    if (wn != expected[0].first || bn != expected[1].first) {
      throw IoError(path.string() + ": unexpected tensor '" + wn + "'");
    }
    h->assign(w, b);
  }
}

namespace {

std::string hex(std::uint64_t v) { return binio::hex64(v); }

std::string branch_file(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (c == ':' || c == ',') c = '_';
  return "branch_" + s + ".ckpt";
}

ordered_json step_json(const StepLog& s) {
  ordered_json j;
  j["step"] = s.step;
  j["total"] = s.total;
  j["fm"] = s.fm;
  j["bit"] = s.bit;
  if (s.align) j["align"] = *s.align;
  j["grad_norm"] = s.grad_norm;
  j["batch_ids"] = s.batch_ids;
  return j;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<double> ffd_at(const BranchResult& b, long step, double FfdPoint::*field) {
  for (const FfdPoint& p : b.ffd)
    if (p.step == step) return p.*field;
  return std::nullopt;
}

}  // namespace

ProtocolRun run_protocol(const ProtocolConfig& config, const fs::path& run_dir, std::ostream* log) {
  if (fs::exists(run_dir / "manifest.json")) {
    throw IoError("run directory " + run_dir.string() + " already holds a manifest");
  }
  const ProtocolContext ctx = ProtocolContext::make(config);
  fs::create_directories(run_dir / "probes");
  const std::uint64_t gt_checksum_start = ctx.gt.checksum();

  ProtocolSession session;
  ProtocolRun run{run_phase_one(ctx, session, log), {}, {}, 0.0};
  PhaseOneResult& p1 = run.phase_one;

  std::vector<std::string> checkpoints{"phase1.ckpt"};
  p1.net.save(run_dir / "phase1.ckpt");
  save_interface_heads(p1.heads, run_dir / "interface_heads.bin");

  std::vector<std::string> probe_paths{"probes/profiles.csv"};
  {
    std::ofstream os(run_dir / "probes/profiles.csv");
    const auto all = p1.probes.all();
    write_profile_csv(os, all);
    if (!os) throw IoError("failed writing probe profiles");
    for (const AttributionProfile* p : all) {
      const std::string stem = std::string("probes/") + metric_name(p->metric) + "_" + profile_domain_name(p->domain);
      emit_heatmap(*p, run_dir / stem);
      probe_paths.push_back(stem + ".csv");
    }
  }

  session.begin_intervention();
  const FfdEvaluator evaluator(ctx);
  for (const SelectionPlan& plan : p1.plans) {
    const std::string file = branch_file(plan.strategy());
    run.branches.push_back(run_branch(ctx, p1, plan, evaluator, log, run_dir / file));
    checkpoints.push_back(file);
  }

  const DataOrder order(ctx.corpus, config.batch_size, ctx.seeds.order, config.noise_sigma);
  const long spe = order.steps_per_epoch();
  const BranchResult& base = run.branches.front();
  run.threshold = 0.5 * (*ffd_at(base, spe, &FfdPoint::speech) + *ffd_at(base, spe, &FfdPoint::audio));

  ordered_json m;
  m["format"] = "flowprobe-run";
  m["version"] = 1;
  m["metric_label"] = "FFD (synthetic-teacher Frechet)";
  m["config_digest"] = hex(ctx.digest);
  ordered_json cfg_json;
  for (const auto& [k, v] : config_pairs(config)) cfg_json[k] = v;
  m["config"] = cfg_json;
  const SeedSet& sd = ctx.seeds;
  m["seeds"] = {{"master", sd.master}, {"ground_truth", sd.gt}, {"teacher", sd.teacher}, {"data", sd.data},
                {"init", sd.init},     {"heads", sd.head},      {"order", sd.order},     {"probe", sd.probe},
                {"eval", sd.eval}};
  m["mixing_ratio"] = "1:1";
  m["profile_pooling"] = "uniform mean over time bins";
  m["phase_boundaries"] = {{"steps_per_epoch", spe},
                           {"warmup_steps", p1.global_steps},
                           {"intervention_steps", static_cast<long>(config.intervention_epochs) * spe}};
  m["checksums"] = {{"ground_truth_start", hex(gt_checksum_start)},
                    {"ground_truth_end", hex(ctx.gt.checksum())},
                    {"teachers", hex(ctx.teachers.checksum())},
                    {"phase1_checkpoint", hex(p1.net_checksum)}};
  m["head_checksums"] = {{"speech", hex(p1.speech_head_checksum)}, {"audio", hex(p1.audio_head_checksum)}};

  ordered_json warm = ordered_json::array();
  for (const StepLog& s : p1.steps) warm.push_back(step_json(s));
  m["phase1"] = {{"per_step_losses", warm}};

  ordered_json top = ordered_json::array();
  for (const Top3Row& row : top3_table(p1.probes.all()))
    top.push_back({{"metric", metric_name(row.metric)}, {"domain", profile_domain_name(row.domain)}, {"top3", row.text}});
  m["probes"] = {{"top3", top}};

  ordered_json branches = ordered_json::array();
  std::vector<SummaryRow> summary;
  for (const BranchResult& b : run.branches) {
    ordered_json j;
    j["name"] = b.name;
    j["plan"] = {{"S", b.plan.layers()},
                 {"lambda", b.plan.lambdas()},
                 {"metric", selection_source_name(b.plan.source())},
                 {"lambda_bit", b.plan.lambda_bit()},
                 {"lambda_align", b.plan.lambda_align()},
                 {"uniform_fallback", b.plan.uniform_fallback()},
                 {"digest_start", hex(b.plan_digest_start)},
                 {"digest_end", hex(b.plan_digest_end)}};
    j["start_checksum"] = hex(b.start_checksum);
    j["end_checksum"] = hex(b.end_checksum);
    j["head_checksum_start"] = hex(b.head_checksum_start);
    j["head_checksum_end"] = hex(b.head_checksum_end);
    j["teacher_checksum_start"] = hex(b.teacher_checksum_start);
    j["teacher_checksum_end"] = hex(b.teacher_checksum_end);
    ordered_json lh = ordered_json::object();
    for (const auto& [k, c] : b.layer_head_checksums) lh[std::to_string(k)] = hex(c);
    j["layer_head_checksums"] = lh;
    ordered_json steps = ordered_json::array();
    for (const StepLog& s : b.steps) steps.push_back(step_json(s));
    j["per_step_losses"] = steps;
    ordered_json ffd = ordered_json::array();
    for (const FfdPoint& p : b.ffd) {
      ffd.push_back({{"step", p.step}, {"speech", p.speech}, {"audio", p.audio}, {"combined", p.combined()}});
    }
    j["ffd"] = ffd;
    const auto reached = branch_steps_to_threshold(b, run.threshold);
    j["steps_to_threshold"] = reached ? ordered_json(*reached) : ordered_json(nullptr);
    branches.push_back(j);

    const FfdPoint& last = b.ffd.back();
    for (auto [domain, field] : {std::pair{"speech", &FfdPoint::speech}, std::pair{"audio", &FfdPoint::audio}}) {
      const double thr = *ffd_at(base, spe, field);
      Trajectory t;
      for (const FfdPoint& p : b.ffd)
        if (p.step > 0) t.emplace_back(p.step, p.*field);
      summary.push_back({b.name, domain, last.*field, steps_to_threshold(t, thr), config.seed});
    }
    summary.push_back({b.name, "combined", last.combined(), reached, config.seed});
  }
  m["branches"] = branches;
  m["ffd_threshold"] = run.threshold;
  m["probe_csv_paths"] = probe_paths;
  m["checkpoint_paths"] = checkpoints;
  m["created_at"] = timestamp();

  write_summary_csv(run_dir / "summary.csv", summary);
  run.manifest = m.dump(2) + "\n";
  std::ofstream os(run_dir / "manifest.json");
  os << run.manifest;
  if (!os) throw IoError("failed writing manifest");
  return run;
}

}  // namespace flowprobe
