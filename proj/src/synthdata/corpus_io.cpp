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
#include <map>
#include <sstream>

#include "flowprobe/binio.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/kvtext.hpp"
#include "flowprobe/synthdata.hpp"

namespace flowprobe {

namespace {

constexpr const char* kSplits[] = {"train", "probe", "eval"};
constexpr std::size_t kHeaderBytes = 16;

std::size_t record_length(const TopologyConfig& c) {
  const auto tok = static_cast<std::size_t>(c.t_tok) * (c.topology == Topology::B ? 2 : 1);
  return tok + static_cast<std::size_t>(c.t_frames) * static_cast<std::size_t>(c.n_mel);
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                 const std::vector<std::pair<std::string, std::string>>& extra_meta) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "corpus.meta")) {
    throw IoError("refusing to overwrite existing corpus at " + dir.string());
  }
  fs::create_directories(dir);
  const auto& c = corpus.config;
  const std::size_t len = record_length(c);
  const std::size_t t_tok = static_cast<std::size_t>(c.t_tok);

  std::ostringstream index;
  index << "id,domain,split,token_offset,target_offset\n";
  for (const char* split : kSplits) {
    const auto& samples = corpus.split(split);
    std::vector<double> values;
    values.reserve(samples.size() * len);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      const std::size_t base = kHeaderBytes + i * len * sizeof(double);
      const std::size_t tok_count = t_tok * (s.dense_prior_tokens ? 2 : 1);
      index << s.id << ',' << domain_name(s.domain) << ',' << split << ',' << base << ','
            << base + tok_count * sizeof(double) << '\n';
      for (int t : s.tokens) values.push_back(t);
      if (s.dense_prior_tokens) {
        for (int t : *s.dense_prior_tokens) values.push_back(t);
      }
      for (double v : s.target.data()) values.push_back(v);
    }
    std::ofstream out(dir / (std::string(split) + ".bin"), std::ios::binary);
    if (!out) throw IoError("cannot write split file in " + dir.string());
    binio::write_records(out, static_cast<std::uint32_t>(samples.size()),
                         static_cast<std::uint32_t>(len), values);
  }
  {
    std::ofstream out(dir / "index.csv", std::ios::binary);
    out << index.str();
  }
  if (c.topology == Topology::B) {
    std::ofstream out(dir / "codebook.bin", std::ios::binary);
    binio::write_records(out, static_cast<std::uint32_t>(corpus.codebook.rows()),
                         static_cast<std::uint32_t>(corpus.codebook.cols()), corpus.codebook.data());
  }

  kv::Pairs meta{
      {"format", "flowprobe-corpus"},
      {"version", "1"},
      {"seed", std::to_string(corpus.seed)},
      {"gt_seed", std::to_string(corpus.gt_seed)},
      {"teacher_seed", std::to_string(corpus.teacher_seed)},
      {"topology", topology_name(c.topology)},
      {"vocab", std::to_string(c.vocab)},
      {"codebook", std::to_string(c.codebook)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"t_tok", std::to_string(c.t_tok)},
      {"t_frames", std::to_string(c.t_frames)},
      {"n_mel", std::to_string(c.n_mel)},
      {"decoder_hidden", std::to_string(c.decoder_hidden)},
      {"smoothing_width", std::to_string(c.smoothing_width)},
      {"speech_noise", kv::format_double(c.speech_noise)},
      {"audio_noise", kv::format_double(c.audio_noise)},
      {"token_persistence", kv::format_double(c.token_persistence)},
      {"texture_amplitude", kv::format_double(c.texture_amplitude)},
      {"n_per_domain", std::to_string(corpus.n_per_domain)},
      {"mixing_ratio", "1:1"},
  };
  for (const auto& e : extra_meta) meta.push_back(e);
  kv::write_file(dir / "corpus.meta", meta);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto meta = kv::read_file(dir / "corpus.meta");
  if (kv::get(meta, "format") != "flowprobe-corpus") throw IoError("not a flowprobe corpus: " + dir.string());
  Corpus corpus;
  auto& c = corpus.config;
  auto geti = [&](const char* k) { return static_cast<int>(kv::to_int(k, kv::get(meta, k))); };
  auto getd = [&](const char* k) { return kv::to_double(k, kv::get(meta, k)); };
  corpus.seed = kv::to_u64("seed", kv::get(meta, "seed"));
  corpus.gt_seed = kv::to_u64("gt_seed", kv::get(meta, "gt_seed"));
  corpus.teacher_seed = kv::to_u64("teacher_seed", kv::get(meta, "teacher_seed"));
  c.topology = parse_topology(kv::get(meta, "topology"));
  c.vocab = geti("vocab");
  c.codebook = geti("codebook");
  c.embed_dim = geti("embed_dim");
  c.t_tok = geti("t_tok");
  c.t_frames = geti("t_frames");
  c.n_mel = geti("n_mel");
  c.decoder_hidden = geti("decoder_hidden");
  c.smoothing_width = geti("smoothing_width");
  c.speech_noise = getd("speech_noise");
  c.audio_noise = getd("audio_noise");
  c.token_persistence = getd("token_persistence");
  c.texture_amplitude = getd("texture_amplitude");
  c.validate();
  corpus.n_per_domain = geti("n_per_domain");

  // index.csv carries the domain and id of each record.
  std::map<std::string, std::vector<std::pair<std::uint64_t, Domain>>> index;
  {
    std::ifstream in(dir / "index.csv");
    if (!in) throw IoError("missing index.csv in " + dir.string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string id, domain, split;
      std::getline(ls, id, ',');
      std::getline(ls, domain, ',');
      std::getline(ls, split, ',');
      index[split].emplace_back(kv::to_u64("id", id), parse_domain(domain));
    }
  }

  const std::size_t len = record_length(c);
  const auto t_tok = static_cast<std::size_t>(c.t_tok);
  const Shape target_shape{static_cast<std::size_t>(c.t_frames), static_cast<std::size_t>(c.n_mel)};
  for (const char* split : kSplits) {
    std::ifstream in(dir / (std::string(split) + ".bin"), std::ios::binary);
    if (!in) throw IoError(std::string("missing ") + split + ".bin in " + dir.string());
    auto block = binio::read_records(in);
    const auto& entries = index[split];
    if (block.length != len || block.count != entries.size()) {
      throw IoError(std::string(split) + ".bin does not match corpus.meta/index.csv");
    }
    auto& dst = const_cast<std::vector<Sample>&>(corpus.split(split));
    for (std::size_t i = 0; i < block.count; ++i) {
      const double* rec = block.values.data() + i * len;
      Sample s;
      s.id = entries[i].first;
      s.domain = entries[i].second;
      for (std::size_t k = 0; k < t_tok; ++k) s.tokens.push_back(static_cast<int>(rec[k]));
      std::size_t off = t_tok;
      if (c.topology == Topology::B) {
        std::vector<int> dense;
        for (std::size_t k = 0; k < t_tok; ++k) dense.push_back(static_cast<int>(rec[off + k]));
        s.dense_prior_tokens = std::move(dense);
        off += t_tok;
      }
      s.target = Tensor(target_shape, std::vector<double>(rec + off, rec + len));
      dst.push_back(std::move(s));
    }
  }
  if (c.topology == Topology::B) {
    std::ifstream in(dir / "codebook.bin", std::ios::binary);
    if (!in) throw IoError("missing codebook.bin in " + dir.string());
    auto block = binio::read_records(in);
    corpus.codebook = Tensor({block.count, block.length}, std::move(block.values));
  }
  return corpus;
}

}  // namespace flowprobe
