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

#include "flowprobe/synthdata.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "flowprobe/binio.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/kernels.hpp"
#include "flowprobe/rng.hpp"
#include "flowprobe/teachers.hpp"

namespace flowprobe {

const char* domain_name(Domain d) { return d == Domain::Speech ? "speech" : "audio"; }

Domain parse_domain(const std::string& s) {
  if (s == "speech") return Domain::Speech;
  if (s == "audio") return Domain::Audio;
  throw ConfigError("unknown domain '" + s + "'");
}

const char* topology_name(Topology t) { return t == Topology::A ? "A" : "B"; }

Topology parse_topology(const std::string& s) {
  if (s == "A" || s == "a") return Topology::A;
  if (s == "B" || s == "b") return Topology::B;
  throw ConfigError("unknown topology '" + s + "' (expected A or B)");
}

void TopologyConfig::validate() const {
  if (vocab <= 0 || codebook <= 0 || embed_dim <= 0 || t_tok <= 0 || t_frames <= 0 || n_mel <= 0 ||
      decoder_hidden <= 0) {
    throw ConfigError("topology config sizes must be positive");
  }
  if (smoothing_width <= 0 || smoothing_width % 2 == 0) {
    throw ConfigError("smoothing width must be a positive odd integer");
  }
  if (speech_noise < 0.0 || audio_noise < 0.0) throw ConfigError("noise scales must be >= 0");
  if (token_persistence < 0.0 || token_persistence >= 1.0) {
    throw ConfigError("token persistence must lie in [0, 1)");
  }
}

double GroundTruthProcess::noise_scale(Domain d) const {
  return d == Domain::Speech ? config.speech_noise : config.audio_noise;
}

Tensor smooth_time(const Tensor& x, int width) {
  const auto t_len = static_cast<long>(x.rows());
  const std::size_t n = x.cols();
  const long half = width / 2;
  Tensor y(x.shape());
  auto reflect = [t_len](long i) {
    if (t_len == 1) return 0L;
    while (i < 0 || i >= t_len) {
      if (i < 0) i = -i;
      if (i >= t_len) i = 2 * (t_len - 1) - i;
    }
    return i;
  };
  for (long t = 0; t < t_len; ++t) {
    for (long o = -half; o <= half; ++o) {
      const auto src = static_cast<std::size_t>(reflect(t + o));
      for (std::size_t j = 0; j < n; ++j) y[static_cast<std::size_t>(t) * n + j] += x[src * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[static_cast<std::size_t>(t) * n + j] /= static_cast<double>(width);
  }
  return y;
}

Tensor GroundTruthProcess::clean_target(std::span<const int> tokens, Domain d) const {
  const auto& c = config;
  if (static_cast<int>(tokens.size()) != c.t_tok) {
    throw DimensionError("expected " + std::to_string(c.t_tok) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  // Frame i reads token floor(i * t_tok / t_frames).
  Tensor emb({static_cast<std::size_t>(c.t_frames), static_cast<std::size_t>(c.embed_dim)});
  for (int i = 0; i < c.t_frames; ++i) {
    const int tok = tokens[static_cast<std::size_t>(i * c.t_tok / c.t_frames)];
    if (tok < 0 || tok >= c.vocab) throw DimensionError("token id " + std::to_string(tok) + " out of range");
    for (int j = 0; j < c.embed_dim; ++j) emb.at(i, j) = token_embedding.at(tok, j);
  }
  auto dense_tanh = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t j = 0; j < y.cols(); ++j) y.at(r, j) = std::tanh(y.at(r, j) + b[j]);
    return y;
  };
  Tensor y = smooth_time(dense_tanh(dense_tanh(emb, w1, b1), w2, b2), c.smoothing_width);
  if (d == Domain::Audio) {
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += texture[i];
  }
  return y;
}

std::uint64_t GroundTruthProcess::checksum() const {
  return binio::checksum({{"token_embedding", &token_embedding},
                          {"w1", &w1},
                          {"b1", &b1},
                          {"w2", &w2},
                          {"b2", &b2},
                          {"texture", &texture}});
}

GroundTruthProcess make_ground_truth(std::uint64_t seed, const TopologyConfig& config) {
  config.validate();
  GroundTruthProcess gt;
  gt.config = config;
  gt.seed = seed;
  Rng root = Rng(seed).split("ground-truth");
  const auto V = static_cast<std::size_t>(config.vocab);
  const auto E = static_cast<std::size_t>(config.embed_dim);
  const auto H = static_cast<std::size_t>(config.decoder_hidden);
  const auto N = static_cast<std::size_t>(config.n_mel);
  const auto T = static_cast<std::size_t>(config.t_frames);
  Rng r_emb = root.split("embedding");
  gt.token_embedding = r_emb.normal_tensor({V, E}, 1.0);
  Rng r_dec = root.split("decoder");
  gt.w1 = r_dec.normal_tensor({E, H}, 1.5 / std::sqrt(static_cast<double>(E)));
  gt.b1 = r_dec.normal_tensor({H}, 0.1);
  gt.w2 = r_dec.normal_tensor({H, N}, 1.5 / std::sqrt(static_cast<double>(H)));
  gt.b2 = r_dec.normal_tensor({N}, 0.1);
  Rng r_tex = root.split("texture");
  gt.texture = Tensor({T, N});
  for (std::size_t j = 0; j < N; ++j) {
    const double freq = 1.0 + static_cast<double>(r_tex.below(4));
    const double phase = 2.0 * std::numbers::pi * r_tex.uniform();
    for (std::size_t t = 0; t < T; ++t) {
      gt.texture.at(t, j) = config.texture_amplitude *
                            std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) /
                                         static_cast<double>(T) + phase);
    }
  }
  return gt;
}

Sample synth_sample(const GroundTruthProcess& gt, Domain domain, std::uint64_t seed) {
  const auto& c = gt.config;
  Rng rng(seed);
  Rng r_tok = rng.split("tokens");
  Sample s;
  s.domain = domain;
  s.tokens.resize(static_cast<std::size_t>(c.t_tok));
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (i > 0 && r_tok.uniform() < c.token_persistence) {
      s.tokens[i] = s.tokens[i - 1];
    } else {
      s.tokens[i] = static_cast<int>(r_tok.below(static_cast<std::size_t>(c.vocab)));
    }
  }
  s.target = gt.clean_target(s.tokens, domain);
  const double sigma = gt.noise_scale(domain);
  if (sigma > 0.0) {
    Rng r_noise = rng.split("noise");
    for (auto& v : s.target.data()) v += sigma * r_noise.normal();
  }
  return s;
}

std::vector<int> Sample::conditioning_tokens(int vocab) const {
  if (!dense_prior_tokens) return tokens;
  return interleave(tokens, *dense_prior_tokens, vocab);
}

std::vector<int> quantize_dense_prior(const Tensor& features, const Tensor& codebook) {
  if (codebook.numel() == 0 || codebook.rows() == 0) throw ConfigError("empty dense-prior codebook");
  if (features.cols() != codebook.cols()) {
    throw DimensionError("feature width " + std::to_string(features.cols()) +
                         " does not match codebook width " + std::to_string(codebook.cols()));
  }
  std::vector<int> out(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (std::size_t c = 0; c < codebook.rows(); ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < features.cols(); ++j) {
        const double diff = features.at(r, j) - codebook.at(c, j);
        d2 += diff * diff;
      }
      if (d2 < best) {  // strict: ties keep the lower index
        best = d2;
        best_idx = static_cast<int>(c);
      }
    }
    out[r] = best_idx;
  }
  return out;
}

std::vector<int> interleave(std::span<const int> primary, std::span<const int> dense, int offset) {
  if (primary.size() != dense.size()) {
    throw DimensionError("interleave length mismatch " + std::to_string(primary.size()) + " vs " +
                         std::to_string(dense.size()));
  }
  std::vector<int> out;
  out.reserve(2 * primary.size());
  for (std::size_t i = 0; i < primary.size(); ++i) {
    out.push_back(primary[i]);
    out.push_back(dense[i] + offset);
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> deinterleave(std::span<const int> seq, int offset) {
  if (seq.size() % 2 != 0) throw DimensionError("deinterleave of odd-length sequence");
  std::pair<std::vector<int>, std::vector<int>> out;
  for (std::size_t i = 0; i < seq.size(); i += 2) {
    out.first.push_back(seq[i]);
    out.second.push_back(seq[i + 1] - offset);
  }
  return out;
}

SplitSizes split_sizes(int n_per_domain) {
  if (n_per_domain < 3) throw ConfigError("n_per_domain must be >= 3");
  SplitSizes s;
  s.probe = std::max(1, static_cast<int>(std::lround(0.1 * n_per_domain)));
  s.eval = s.probe;
  s.train = n_per_domain - s.probe - s.eval;
  return s;
}

const std::vector<Sample>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "probe") return probe;
  if (name == "eval") return eval;
  throw ConfigError("unknown split '" + name + "'");
}

namespace {

// Frame features pooled onto the token grid (segment means).
Tensor token_grid_features(const TeacherEncoder& teacher, const Tensor& target, int t_tok) {
  Tensor frames = teacher.frame_features(target);
  const std::size_t T = frames.rows(), D = frames.cols();
  Tensor out({static_cast<std::size_t>(t_tok), D});
  std::vector<int> counts(static_cast<std::size_t>(t_tok), 0);
  for (std::size_t i = 0; i < T; ++i) {
    const auto k = i * static_cast<std::size_t>(t_tok) / T;
    for (std::size_t j = 0; j < D; ++j) out.at(k, j) += frames.at(i, j);
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.rows(); ++k) {
    if (counts[k] == 0) {
      // More tokens than frames: reuse the covering frame.
      const auto i = k * T / static_cast<std::size_t>(t_tok);
      for (std::size_t j = 0; j < D; ++j) out.at(k, j) = frames.at(i, j);
    } else {
      for (std::size_t j = 0; j < D; ++j) out.at(k, j) /= counts[k];
    }
  }
  return out;
}

}  // namespace

Corpus make_corpus(const GroundTruthProcess& gt, Topology topology, int n_per_domain,
                   std::uint64_t seed, const TeacherEncoder* audio_teacher) {
  const SplitSizes sizes = split_sizes(n_per_domain);
  if (topology == Topology::B && audio_teacher == nullptr) {
    throw ConfigError("topology B needs the audio teacher for dense-prior features");
  }
  Corpus corpus;
  corpus.config = gt.config;
  corpus.config.topology = topology;
  corpus.seed = seed;
  corpus.gt_seed = gt.seed;
  corpus.teacher_seed = audio_teacher ? audio_teacher->seed() : 0;
  corpus.n_per_domain = n_per_domain;

  Rng root = Rng(seed).split("corpus");
  const std::array<Domain, 2> domains{Domain::Speech, Domain::Audio};
  std::vector<Sample> all(static_cast<std::size_t>(2 * n_per_domain));
  kernels::for_each_index(all.size(), kernels::Policy::Parallel, [&](std::size_t i) {
    const Domain d = domains[i / static_cast<std::size_t>(n_per_domain)];
    const auto idx = i % static_cast<std::size_t>(n_per_domain);
    Sample s = synth_sample(gt, d, root.split(domain_name(d)).split(idx).key());
    s.id = i;
    all[i] = std::move(s);
  });

  if (topology == Topology::B) {
    // Codebook rows are frame features of pilot samples; fixed here, never trained.
    Rng r_cb = root.split("codebook");
    const auto C = static_cast<std::size_t>(gt.config.codebook);
    corpus.codebook = Tensor({C, static_cast<std::size_t>(audio_teacher->dim())});
    for (std::size_t c = 0; c < C; ++c) {
      const Domain d = domains[c % 2];
      Sample pilot = synth_sample(gt, d, r_cb.split(c).key());
      Tensor feats = audio_teacher->frame_features(pilot.target);
      const std::size_t frame = r_cb.below(feats.rows());
      for (std::size_t j = 0; j < feats.cols(); ++j) corpus.codebook.at(c, j) = feats.at(frame, j);
    }
    kernels::for_each_index(all.size(), kernels::Policy::Parallel, [&](std::size_t i) {
      Tensor feats = token_grid_features(*audio_teacher, all[i].target, gt.config.t_tok);
      all[i].dense_prior_tokens = quantize_dense_prior(feats, corpus.codebook);
    });
  }

  for (std::size_t di = 0; di < 2; ++di) {
    const std::size_t base = di * static_cast<std::size_t>(n_per_domain);
    int i = 0;
    for (; i < sizes.train; ++i) corpus.train.push_back(all[base + i]);
    for (; i < sizes.train + sizes.probe; ++i) corpus.probe.push_back(all[base + i]);
    for (; i < n_per_domain; ++i) corpus.eval.push_back(all[base + i]);
  }
  return corpus;
}

}  // namespace flowprobe
