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


#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "flowprobe/cli.hpp"
#include "flowprobe/error.hpp"

using namespace flowprobe;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "flowprobe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::filesystem::path tiny_config_file(const std::filesystem::path& dir) {
  ProtocolConfig c = fpt::tiny_protocol_config(3);
  c.strategies = {"foga", "random"};
  const auto path = dir / "tiny.cfg";
  kv::write_file(path, config_pairs(c));
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  Result r = run({"gen-data", "--out", "x", "--bogus-flag"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--bogus-flag") != std::string::npos);
  CHECK(run({"no-such-command"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"gen-data", "--topology", "C", "--out", "x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("config files reject unknown keys") {
  fpt::TempDir dir("cfg");
  kv::write_file(dir.path / "bad.cfg", {{"seed", "3"}, {"colour", "blue"}});
  const Result r = run({"gen-data", "--config", (dir.path / "bad.cfg").string(), "--out", (dir.path / "c").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("colour") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir.path / "c"));

  CHECK_THROWS_AS(parse_protocol_config({{"seed", "1"}, {"seed", "2"}}), ConfigError);
  const ProtocolConfig c = fpt::tiny_protocol_config(5);
  const ProtocolConfig back = parse_protocol_config(config_pairs(c));
  CHECK(config_digest(back) == config_digest(c));
  CHECK(kv::render(config_pairs(back)) == kv::render(config_pairs(c)));
  ProtocolConfig other = c;
  other.parallel = false;
  CHECK(config_digest(other) == config_digest(c));
  other.k = 1;
  CHECK(config_digest(other) != config_digest(c));
}

TEST_CASE("gen-data writes a corpus once") {
  fpt::TempDir dir("gen");
  const auto cfg = tiny_config_file(dir.path);
  const auto out = dir.path / "corpus";
  const Result r = run({"gen-data", "--config", cfg.string(), "--seed", "7", "--out", out.string()});
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(out / "index.csv"));
  const Corpus c = load_corpus(out);
  CHECK(c.seed != 0);
  CHECK(c.train.size() == 32);
  const std::string before = slurp(out / "index.csv");
  CHECK(run({"gen-data", "--config", cfg.string(), "--seed", "7", "--out", out.string()}).code == 1);
  CHECK(slurp(out / "index.csv") == before);
}

TEST_CASE("run-protocol, probe, sample and report") {
  fpt::TempDir dir("run");
  const auto cfg = tiny_config_file(dir.path);
  const auto run_a = dir.path / "a", run_b = dir.path / "b";
  Result r = run({"run-protocol", "--config", cfg.string(), "--out", run_a.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("phase=warmup step=1 loss_fm=") != std::string::npos);
  CHECK(r.out.find("branch=foga step=1 loss_fm=") != std::string::npos);
  CHECK(r.out.find("loss_align=") != std::string::npos);
  REQUIRE(run({"run-protocol", "--config", cfg.string(), "--out", run_b.string()}).code == 0);
  CHECK(run({"run-protocol", "--config", cfg.string(), "--out", run_a.string()}).code == 1);

  auto manifest = [](const std::filesystem::path& p) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(slurp(p / "manifest.json"));
    CHECK(j.contains("created_at"));
    j.erase("created_at");
    return j;
  };
  nlohmann::ordered_json ma = manifest(run_a), mb = manifest(run_b);
  // Artifact paths name the run directory; compare them relative to it.
  auto relativise = [](nlohmann::ordered_json& j, const std::string& root) {
    for (const char* key : {"probe_csv_paths", "checkpoint_paths"})
      for (auto& p : j[key]) {
        std::string s = p.get<std::string>();
        if (s.rfind(root, 0) == 0) p = s.substr(root.size());
      }
  };
  relativise(ma, run_a.string());
  relativise(mb, run_b.string());
  CHECK(ma.dump() == mb.dump());
  CHECK(ma["branches"][0]["name"] == "none");
  for (const auto& step : ma["branches"][0]["per_step_losses"]) CHECK_FALSE(step.contains("loss_align"));
  CHECK(slurp(run_a / "branch_foga.ckpt") == slurp(run_b / "branch_foga.ckpt"));

  const auto probe_out = dir.path / "probe";
  r = run({"probe", "--config", cfg.string(), "--checkpoint", (run_a / "phase1.ckpt").string(), "--heads",
           (run_a / "interface_heads.bin").string(), "--out", probe_out.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("foga") != std::string::npos);
  CHECK(slurp(probe_out / "profiles.csv") == slurp(run_a / "probes" / "profiles.csv"));
  CHECK(std::filesystem::exists(probe_out / "foga_pooled.svg"));

  const auto frames = dir.path / "frames.bin";
  r = run({"sample", "--config", cfg.string(), "--checkpoint", (run_a / "branch_foga.ckpt").string(), "--count", "3",
           "--out", frames.string()});
  CHECK(r.code == 0);
  std::ifstream frames_in(frames, std::ios::binary);
  const binio::RecordBlock records = binio::read_records(frames_in);
  CHECK(records.count == 3);
  CHECK(records.length == 24);
  CHECK(records.values.size() == 72);

  const auto report = dir.path / "report";
  r = run({"report", "--run", run_a.string(), "--run", run_b.string(), "--out", report.string()});
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(report / "summary.csv"));
  CHECK(std::filesystem::exists(report / "top3.csv"));
}
