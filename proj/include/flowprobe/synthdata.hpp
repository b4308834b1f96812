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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowprobe/tensor.hpp"

namespace flowprobe {

enum class Domain { Speech, Audio };
enum class Topology { A, B };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);
const char* topology_name(Topology t);
Topology parse_topology(const std::string& s);

struct TopologyConfig {
  Topology topology = Topology::A;
  int vocab = 64;          // primary token ids [0, vocab)
  int codebook = 64;       // dense-prior ids [vocab, vocab + codebook)
  int embed_dim = 16;      // ground-truth token embedding width
  int t_tok = 32;
  int t_frames = 32;
  int n_mel = 16;
  int decoder_hidden = 32;
  int smoothing_width = 3;
  double speech_noise = 0.05;
  double audio_noise = 0.15;
  double token_persistence = 0.5;  // probability a token repeats its predecessor
  double texture_amplitude = 0.5;

  int cond_length() const { return topology == Topology::B ? 2 * t_tok : t_tok; }
  int vocab_total() const { return vocab + codebook; }
  void validate() const;
};

/// Hidden token -> acoustics process. Never trained.
struct GroundTruthProcess {
  TopologyConfig config;
  std::uint64_t seed = 0;
  Tensor token_embedding;  // vocab x embed_dim
  Tensor w1, b1, w2, b2;   // two fixed tanh layers: embed_dim -> hidden -> n_mel
  Tensor texture;          // t_frames x n_mel, added to the audio domain only

  double noise_scale(Domain d) const;
  /// Deterministic part of the target: decode, smooth, plus texture for audio.
  Tensor clean_target(std::span<const int> tokens, Domain d) const;
  std::uint64_t checksum() const;
};

struct Sample {
  std::uint64_t id = 0;
  Domain domain = Domain::Speech;
  std::vector<int> tokens;
  Tensor target;  // t_frames x n_mel
  std::optional<std::vector<int>> dense_prior_tokens;

  /// Conditioning ids: primary tokens (A) or interleaved with offset dense ids (B).
  std::vector<int> conditioning_tokens(int vocab) const;
};

GroundTruthProcess make_ground_truth(std::uint64_t seed, const TopologyConfig& config);

/// Tokens and noise are derived from `seed` only, so equal seeds give equal
/// tokens in both domains. Dense-prior tokens are attached by make_corpus.
Sample synth_sample(const GroundTruthProcess& gt, Domain domain, std::uint64_t seed);

/// Nearest codebook row per feature row (Euclidean); ties go to the lowest index.
std::vector<int> quantize_dense_prior(const Tensor& features, const Tensor& codebook);

/// [p0, d0 + offset, p1, d1 + offset, ...]
std::vector<int> interleave(std::span<const int> primary, std::span<const int> dense, int offset);
std::pair<std::vector<int>, std::vector<int>> deinterleave(std::span<const int> seq, int offset);

/// Centered moving average along time with reflected boundaries.
Tensor smooth_time(const Tensor& x, int width);

class TeacherEncoder;

struct SplitSizes {
  int train = 0, probe = 0, eval = 0;
};
SplitSizes split_sizes(int n_per_domain);

struct Corpus {
  TopologyConfig config;
  std::uint64_t seed = 0;
  std::uint64_t gt_seed = 0;
  std::uint64_t teacher_seed = 0;
  int n_per_domain = 0;
  Tensor codebook;  // empty for topology A
  std::vector<Sample> train, probe, eval;

  const std::vector<Sample>& split(const std::string& name) const;
};

/// Dense-prior features come from `audio_teacher` frame embeddings of each
/// target; it is required for topology B and ignored for A.
Corpus make_corpus(const GroundTruthProcess& gt, Topology topology, int n_per_domain,
                   std::uint64_t seed, const TeacherEncoder* audio_teacher);

// On-disk corpus directory: corpus.meta, {train,probe,eval}.bin, index.csv.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                 const std::vector<std::pair<std::string, std::string>>& extra_meta = {});
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace flowprobe
