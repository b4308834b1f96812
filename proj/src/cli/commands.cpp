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


#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowprobe/cli.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/protocol.hpp"

namespace flowprobe::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string topology;
  int k = 0;
  std::string strategy;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool strategy_flags) {
  cmd->add_option("--config", c.config, "flat key = value config file");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& v) { c.seed = v, c.seed_set = true; }, "master seed");
  cmd->add_option("--topology", c.topology, "token topology")->check(CLI::IsMember({"A", "B"}));
  cmd->add_option("--out", c.out, "output path")->required();
  if (strategy_flags) {
    cmd->add_option("--k", c.k, "number of aligned layers")->check(CLI::PositiveNumber);
    cmd->add_option("--strategy", c.strategy,
                    "foga|lasp|gradnorm|random|fixed:4,8,12|deep|shallow|none");
  }
}

ProtocolConfig resolve(const Common& c) {
  ProtocolConfig cfg;
  if (!c.config.empty()) cfg = parse_protocol_config(kv::read_file(c.config));
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.topology.empty()) cfg.data.topology = parse_topology(c.topology);
  if (c.k > 0) cfg.k = c.k;
  if (!c.strategy.empty()) {
    cfg.strategies = c.strategy == "none" ? std::vector<std::string>{} : std::vector<std::string>{c.strategy};
  }
  cfg.validate();
  return cfg;
}

void refuse_existing(const fs::path& p) {
  if (fs::exists(p)) throw IoError("refusing to overwrite " + p.string());
}

int gen_data(const Common& c, std::ostream& out) {
  const ProtocolConfig cfg = resolve(c);
  const SeedSet seeds = SeedSet::derive(cfg.seed);
  const GroundTruthProcess gt = make_ground_truth(seeds.gt, cfg.data);
  const TeacherBundle teachers = TeacherBundle::make(seeds.teacher, gt, cfg.teacher);
  const Corpus corpus = make_corpus(gt, cfg.data.topology, cfg.n_per_domain, seeds.data, &teachers.audio);
  save_corpus(corpus, c.out,
              {{"master_seed", std::to_string(cfg.seed)},
               {"gt_checksum", binio::hex64(gt.checksum())},
               {"teacher_checksum", binio::hex64(teachers.checksum())}});
  out << "corpus=" << c.out << " train=" << corpus.train.size() << " probe=" << corpus.probe.size()
      << " eval=" << corpus.eval.size() << '\n';
  return 0;
}

int run_protocol_cmd(const Common& c, std::ostream& out) {
  const ProtocolConfig cfg = resolve(c);
  const ProtocolRun run = run_protocol(cfg, c.out, &out);
  for (const BranchResult& b : run.branches) {
    const auto reached = branch_steps_to_threshold(b, run.threshold);
    out << "branch=" << b.name << " final_ffd=" << b.ffd.back().combined()
        << " steps_to_threshold=" << (reached ? std::to_string(*reached) : "none") << '\n';
  }
  out << "manifest=" << (fs::path(c.out) / "manifest.json").string() << '\n';
  return 0;
}

int probe_cmd(const Common& c, const std::string& checkpoint, const std::string& heads_path,
              std::ostream& out) {
  const ProtocolConfig cfg = resolve(c);
  const ProtocolContext ctx = ProtocolContext::make(cfg);
  const GatedResidualNet net = GatedResidualNet::load(checkpoint);
  const fs::path dir = c.out;
  refuse_existing(dir / "profiles.csv");
  fs::create_directories(dir);

  ProbeOptions o;
  o.t_bins = default_t_bins(cfg.t_bins);
  o.budget = cfg.probe_budget;
  o.seed = ctx.seeds.probe;
  o.foga_eps = cfg.foga_eps;
  o.noise_sigma = cfg.noise_sigma;
  o.config_digest = ctx.digest;
  o.policy = cfg.policy();
  const ProbeSet set = ProbeSet::make(ctx.corpus.probe, ctx.corpus.config.vocab, o);

  std::vector<ProfileSet> sets;
  if (!heads_path.empty()) {
    InterfaceHeads heads = InterfaceHeads::make(cfg.width, cfg.teacher.d_teacher, Rng(0));
    load_interface_heads(heads, heads_path);
    heads.freeze();
    sets.push_back(bitc_profile(net, ctx.teachers, heads, set, o));
    sets.push_back(lasp_profile(net, ctx.teachers, heads, set, o));
  }
  sets.push_back(foga_profile(net, set, o));
  sets.push_back(gradnorm_profile(net, set, o));

  std::vector<const AttributionProfile*> all;
  for (const ProfileSet& s : sets)
    for (const AttributionProfile* p : {&s.speech, &s.audio, &s.pooled}) all.push_back(p);
  std::ofstream os(dir / "profiles.csv");
  write_profile_csv(os, all);
  if (!os) throw IoError("failed writing profiles.csv");
  for (const AttributionProfile* p : all) {
    emit_heatmap(*p, dir / (std::string(metric_name(p->metric)) + "_" + profile_domain_name(p->domain)));
  }
  for (const Top3Row& row : top3_table(all)) {
    out << metric_name(row.metric) << ' ' << profile_domain_name(row.domain) << ' ' << row.text << '\n';
  }
  return 0;
}

int sample_cmd(const Common& c, const std::string& checkpoint, const std::string& split, int steps,
               int count, std::ostream& out) {
  const ProtocolConfig cfg = resolve(c);
  const ProtocolContext ctx = ProtocolContext::make(cfg);
  const GatedResidualNet net = GatedResidualNet::load(checkpoint);
  const auto& samples = ctx.corpus.split(split);
  const std::size_t n = count > 0 ? std::min<std::size_t>(static_cast<std::size_t>(count), samples.size())
                                  : samples.size();
  refuse_existing(c.out);
  const TopologyConfig& d = ctx.corpus.config;
  const std::size_t len = static_cast<std::size_t>(d.t_frames) * static_cast<std::size_t>(d.n_mel);
  std::vector<double> values(n * len);
  kernels::for_each_index(n, cfg.policy(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const Tensor eps = Rng(ctx.seeds.eval).split(s.id).split(std::uint64_t{0})
                           .normal_tensor({static_cast<std::size_t>(d.t_frames), static_cast<std::size_t>(d.n_mel)},
                                          cfg.noise_sigma);
    const Tensor x = sample_net(net, s.conditioning_tokens(d.vocab), eps, steps);
    std::copy(x.data().begin(), x.data().end(), values.begin() + static_cast<std::ptrdiff_t>(i * len));
  });
  std::ofstream os(c.out, std::ios::binary);
  binio::write_records(os, static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(len), values);
  if (!os) throw IoError("failed writing " + c.out);
  out << "samples=" << n << " frames=" << c.out << '\n';
  return 0;
}

std::vector<SummaryRow> summary_from_manifest(const fs::path& run) {
  std::ifstream is(run / "manifest.json");
  if (!is) throw IoError("cannot read " + (run / "manifest.json").string());
  const nlohmann::json m = nlohmann::json::parse(is, nullptr, false);
  if (m.is_discarded()) throw IoError((run / "manifest.json").string() + " is not valid JSON");
  std::vector<SummaryRow> rows;
  const std::uint64_t seed = m.at("seeds").at("master").get<std::uint64_t>();
  const long spe = m.at("phase_boundaries").at("steps_per_epoch").get<long>();
  const auto& branches = m.at("branches");
  const auto& base = branches.at(0).at("ffd");
  for (const auto& b : branches) {
    for (const char* domain : {"speech", "audio", "combined"}) {
      double threshold = 0.0;
      for (const auto& p : base)
        if (p.at("step").get<long>() == spe) threshold = p.at(domain).get<double>();
      Trajectory t;
      for (const auto& p : b.at("ffd")) t.emplace_back(p.at("step").get<long>(), p.at(domain).get<double>());
      rows.push_back({b.at("name").get<std::string>(), domain, t.back().second, steps_to_threshold(t, threshold), seed});
    }
  }
  return rows;
}

int report_cmd(const std::vector<std::string>& runs, const std::string& out_dir, std::ostream& out) {
  const fs::path dir = out_dir;
  refuse_existing(dir / "summary.csv");
  fs::create_directories(dir);
  std::vector<SummaryRow> summary;
  std::ofstream top(dir / "top3.csv");
  top << "run,metric,domain,top3\n";
  for (const std::string& r : runs) {
    const fs::path run = r;
    std::ifstream is(run / "probes" / "profiles.csv");
    if (!is) throw IoError("cannot read " + (run / "probes" / "profiles.csv").string());
    const std::vector<AttributionProfile> profiles = read_profile_csv(is);
    std::vector<const AttributionProfile*> ptrs;
    const std::string name = run.filename().empty() ? run.parent_path().filename().string() : run.filename().string();
    fs::create_directories(dir / name);
    for (const AttributionProfile& p : profiles) {
      ptrs.push_back(&p);
      emit_heatmap(p, dir / name / (std::string(metric_name(p.metric)) + "_" + profile_domain_name(p.domain)));
    }
    for (const Top3Row& row : top3_table(ptrs)) {
      top << name << ',' << metric_name(row.metric) << ',' << profile_domain_name(row.domain) << ",\""
          << row.text << "\"\n";
    }
    for (SummaryRow& row : summary_from_manifest(run)) summary.push_back(std::move(row));
  }
  if (!top) throw IoError("failed writing top3.csv");
  write_summary_csv(dir / "summary.csv", summary);
  out << "report=" << dir.string() << " runs=" << runs.size() << '\n';
  return 0;
}

int ablate_cmd(const Common& c, const std::vector<std::uint64_t>& seeds, std::ostream& out) {
  ProtocolConfig cfg = resolve(c);
  if (c.strategy.empty()) {
    cfg.strategies = {"foga", "lasp", "gradnorm", "random", "fixed:4,8,12", "deep", "shallow"};
  }
  const fs::path dir = c.out;
  refuse_existing(dir / "summary.csv");
  std::vector<SummaryRow> rows;
  std::vector<std::string> runs;
  for (std::uint64_t s : seeds) {
    cfg.seed = s;
    const fs::path run = dir / ("seed-" + std::to_string(s));
    run_protocol(cfg, run, &out);
    runs.push_back(run.string());
    for (SummaryRow& row : summary_from_manifest(run)) rows.push_back(std::move(row));
  }
  write_summary_csv(dir / "summary.csv", rows);
  for (const SummaryRow& r : rows) {
    if (r.domain != std::string("combined")) continue;
    out << "seed=" << r.seed << " strategy=" << r.strategy << " ffd=" << r.ffd << " steps_to_threshold="
        << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : "none") << '\n';
  }
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"flowprobe: layer attribution probes and attribution-guided alignment for flow matching"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common gen, proto, probe, ablate, sample;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic corpus directory");
  add_common(gen_cmd, gen, false);

  auto* run_cmd = app.add_subcommand("run-protocol", "probe-then-intervene run into a new directory");
  add_common(run_cmd, proto, true);

  std::string checkpoint, heads;
  auto* probe_sub = app.add_subcommand("probe", "attribution profiles of a checkpoint");
  add_common(probe_sub, probe, false);
  probe_sub->add_option("--checkpoint", checkpoint, "network checkpoint")->required()->check(CLI::ExistingFile);
  probe_sub->add_option("--heads", heads, "interface heads file; enables BiT-C and LASP")->check(CLI::ExistingFile);

  std::vector<std::uint64_t> seeds{1, 2, 3};
  auto* ablate_sub = app.add_subcommand("ablate", "strategy grid over seeds");
  add_common(ablate_sub, ablate, true);
  ablate_sub->add_option("--seeds", seeds, "master seeds")->delimiter(',');

  std::string sample_checkpoint, split = "eval";
  int steps = 16, count = 0;
  auto* sample_sub = app.add_subcommand("sample", "Euler-sample frames to a binary record file");
  add_common(sample_sub, sample, false);
  sample_sub->add_option("--checkpoint", sample_checkpoint, "network checkpoint")->required()->check(CLI::ExistingFile);
  sample_sub->add_option("--split", split, "conditioning split")->check(CLI::IsMember({"train", "probe", "eval"}));
  sample_sub->add_option("--steps", steps, "Euler steps")->check(CLI::PositiveNumber);
  sample_sub->add_option("--count", count, "number of samples (0 = whole split)")->check(CLI::NonNegativeNumber);

  std::vector<std::string> runs;
  std::string report_out;
  auto* report_sub = app.add_subcommand("report", "heatmaps and summary tables from run directories");
  report_sub->add_option("--run", runs, "run directory")->required()->check(CLI::ExistingDirectory);
  report_sub->add_option("--out", report_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*run_cmd) return run_protocol_cmd(proto, out);
    if (*probe_sub) return probe_cmd(probe, checkpoint, heads, out);
    if (*ablate_sub) return ablate_cmd(ablate, seeds, out);
    if (*sample_sub) return sample_cmd(sample, sample_checkpoint, split, steps, count, out);
    if (*report_sub) return report_cmd(runs, report_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace flowprobe::cli
